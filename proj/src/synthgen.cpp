#include "dassl/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "dassl/bag_store.hpp"
#include "dassl/error.hpp"
#include "dassl/rng.hpp"

namespace dassl {

namespace {

namespace fs = std::filesystem;

constexpr double kSlideExtent = 40000.0;  // pseudo-pixel canvas per slide
constexpr double kFragmentSpread = kSlideExtent / 50.0;
constexpr double kShiftBiasScale = 0.5;
constexpr double kNoiseRowSigma = 2.0;  // artifact/normal rows, pre-shift

struct Generator {
    SynthConfig cfg;
    Eigen::MatrixXd shift_a;   // d x d
    Eigen::VectorXd shift_b;   // d
    Eigen::VectorXd witness_u; // unit direction, class means at +/- separation * u

    explicit Generator(const SynthConfig& c) : cfg(c) {
        require(cfg.n_patients >= 1, ErrorCode::bad_config, "synthgen: n_patients >= 1");
        require(cfg.d >= 2, ErrorCode::bad_config, "synthgen: d >= 2");
        require(cfg.slides_per_patient_min >= 1 &&
                    cfg.slides_per_patient_max >= cfg.slides_per_patient_min,
                ErrorCode::bad_config, "synthgen: bad slides_per_patient range");
        require(cfg.instances_min >= 1 && cfg.instances_max >= cfg.instances_min,
                ErrorCode::bad_config, "synthgen: bad instances range");
        require(cfg.witness_rate > 0.0 && cfg.witness_rate <= 1.0, ErrorCode::bad_config,
                "synthgen: witness_rate in (0,1]");
        require(cfg.class_ratio > 0.0 && cfg.class_ratio < 1.0, ErrorCode::bad_config,
                "synthgen: class_ratio in (0,1)");
        require(cfg.witness_sigma > 0.0, ErrorCode::bad_config,
                "synthgen: witness_sigma > 0");
        require(cfg.fragments_min >= 1 && cfg.fragments_max >= cfg.fragments_min,
                ErrorCode::bad_config, "synthgen: bad fragments range");
        require(cfg.n_centers >= 1, ErrorCode::bad_config, "synthgen: n_centers >= 1");
        require(cfg.artifact_frac >= 0.0 && cfg.artifact_frac < 1.0 &&
                    cfg.normal_frac >= 0.0 && cfg.normal_frac < 1.0,
                ErrorCode::bad_config, "synthgen: class sprinkle fractions in [0,1)");
        require(cfg.shift_sigma >= 0.0, ErrorCode::bad_config, "synthgen: shift_sigma >= 0");

        Rng rng(mix_seed({cfg.seed, 0x51E1u}));
        const int d = cfg.d;

        if (cfg.shift_enabled) {
            // random rotation (QR of a Gaussian matrix, signs fixed by R's
            // diagonal) composed with per-dimension scaling in [0.5, 2]
            Eigen::MatrixXd gauss(d, d);
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) gauss(i, j) = rng.normal();
            Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
            Eigen::MatrixXd q = qr.householderQ();
            const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
            for (int j = 0; j < d; ++j)
                if (r(j, j) < 0.0) q.col(j) = -q.col(j);
            Eigen::VectorXd scales(d);
            for (int i = 0; i < d; ++i) scales(i) = rng.uniform(0.5, 2.0);
            shift_a = q * scales.asDiagonal();
            shift_b = Eigen::VectorXd::Zero(d);
            for (int i = 0; i < d; ++i) shift_b(i) = rng.normal(0.0, kShiftBiasScale);
        } else {
            shift_a = Eigen::MatrixXd::Identity(d, d);
            shift_b = Eigen::VectorXd::Zero(d);
        }

        witness_u = Eigen::VectorXd(d);
        for (int i = 0; i < d; ++i) witness_u(i) = rng.normal();
        witness_u.normalize();
    }

    Eigen::VectorXd class_mean(int target) const {
        return (target == 1 ? 1.0 : -1.0) * cfg.separation * witness_u;
    }

    FeatureBag make_slide(const std::string& slide_id, const std::string& patient_id,
                          const std::string& center_id, int target, Rng& rng) const {
        const int d = cfg.d;
        const int n_tumor =
            static_cast<int>(rng.uniform_int(cfg.instances_min, cfg.instances_max));
        const int n_artifact =
            static_cast<int>(std::floor(cfg.artifact_frac * n_tumor));
        const int n_normal = static_cast<int>(std::floor(cfg.normal_frac * n_tumor));
        const int n = n_tumor + n_artifact + n_normal;

        const Eigen::VectorXd mu = class_mean(target);

        Eigen::MatrixXd features(n, d);
        std::vector<int8_t> cls(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXd g(d);
            if (i < n_tumor) {
                const bool witness = rng.uniform() < cfg.witness_rate;
                if (witness) {
                    for (int j = 0; j < d; ++j)
                        g(j) = mu(j) + rng.normal(0.0, cfg.witness_sigma);
                } else {
                    for (int j = 0; j < d; ++j) g(j) = rng.normal();
                }
                cls[static_cast<size_t>(i)] = static_cast<int8_t>(PatchClass::tumor);
            } else {
                for (int j = 0; j < d; ++j) g(j) = rng.normal(0.0, kNoiseRowSigma);
                cls[static_cast<size_t>(i)] =
                    (i < n_tumor + n_normal) ? static_cast<int8_t>(PatchClass::normal)
                                             : static_cast<int8_t>(PatchClass::artifact);
            }
            Eigen::VectorXd x = shift_a * g + shift_b;
            if (cfg.shift_enabled && cfg.shift_sigma > 0.0)
                for (int j = 0; j < d; ++j) x(j) += rng.normal(0.0, cfg.shift_sigma);
            features.row(i) = x.transpose();
        }

        // coordinates scatter around a handful of fragment centers
        const int n_frag =
            static_cast<int>(rng.uniform_int(cfg.fragments_min, cfg.fragments_max));
        Eigen::MatrixXd frag_centers(n_frag, 2);
        for (int f = 0; f < n_frag; ++f) {
            frag_centers(f, 0) = rng.uniform(0.0, kSlideExtent);
            frag_centers(f, 1) = rng.uniform(0.0, kSlideExtent);
        }
        Eigen::MatrixXd coords(n, 2);
        for (int i = 0; i < n; ++i) {
            const int f = static_cast<int>(rng.below(static_cast<uint64_t>(n_frag)));
            coords(i, 0) = frag_centers(f, 0) + rng.normal(0.0, kFragmentSpread);
            coords(i, 1) = frag_centers(f, 1) + rng.normal(0.0, kFragmentSpread);
        }

        // shuffle rows so class labels carry no positional cue
        std::vector<int> order(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        rng.shuffle(order);

        FeatureBag bag;
        bag.slide_id = slide_id;
        bag.patient_id = patient_id;
        bag.center_id = center_id;
        bag.target = target;
        bag.features.resize(n, d);
        bag.coords.resize(n, 2);
        bag.patch_class.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            const int src = order[static_cast<size_t>(i)];
            bag.features.row(i) = features.row(src).cast<float>();
            bag.coords.row(i) = coords.row(src).cast<float>();
            bag.patch_class[static_cast<size_t>(i)] = cls[static_cast<size_t>(src)];
        }
        return bag;
    }
};

std::string zero_pad(int v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

}  // namespace

SynthConfig synth_config_from(const Config& cfg) {
    SynthConfig s;
    s.n_patients = static_cast<int>(cfg.get_int("synthgen.n_patients"));
    s.slides_per_patient_min = static_cast<int>(cfg.get_int("synthgen.slides_per_patient_min"));
    s.slides_per_patient_max = static_cast<int>(cfg.get_int("synthgen.slides_per_patient_max"));
    s.d = static_cast<int>(cfg.get_int("synthgen.d"));
    s.instances_min = static_cast<int>(cfg.get_int("synthgen.instances_min"));
    s.instances_max = static_cast<int>(cfg.get_int("synthgen.instances_max"));
    s.witness_rate = cfg.get_double("synthgen.witness_rate");
    s.class_ratio = cfg.get_double("synthgen.class_ratio");
    s.separation = cfg.get_double("synthgen.separation");
    s.witness_sigma = cfg.get_double("synthgen.witness_sigma");
    s.shift_enabled = cfg.get_bool("synthgen.shift_enabled");
    s.shift_sigma = cfg.get_double("synthgen.shift_sigma");
    s.n_centers = static_cast<int>(cfg.get_int("synthgen.n_centers"));
    s.fragments_min = static_cast<int>(cfg.get_int("synthgen.fragments_min"));
    s.fragments_max = static_cast<int>(cfg.get_int("synthgen.fragments_max"));
    s.artifact_frac = cfg.get_double("synthgen.artifact_frac");
    s.normal_frac = cfg.get_double("synthgen.normal_frac");
    s.seed = static_cast<uint64_t>(cfg.get_int("synthgen.seed"));
    return s;
}

SynthCohort gen_cohort_memory(const SynthConfig& cfg) {
    const Generator gen(cfg);
    SynthCohort cohort;
    for (int p = 0; p < cfg.n_patients; ++p) {
        Rng rng(mix_seed({cfg.seed, 0xBA6u, static_cast<uint64_t>(p)}));
        const int target = rng.uniform() < cfg.class_ratio ? 1 : 0;
        const int n_slides = static_cast<int>(
            rng.uniform_int(cfg.slides_per_patient_min, cfg.slides_per_patient_max));
        const std::string patient_id = "P" + zero_pad(p, 4);
        const std::string center_id = "C" + std::to_string(p % cfg.n_centers);
        for (int s = 0; s < n_slides; ++s) {
            const std::string slide_id = patient_id + "_S" + std::to_string(s);
            cohort.bags.push_back(
                gen.make_slide(slide_id, patient_id, center_id, target, rng));
            ManifestRow row;
            row.slide_id = slide_id;
            row.patient_id = patient_id;
            row.center_id = center_id;
            row.target = target;
            cohort.manifest.rows.push_back(std::move(row));
        }
    }
    return cohort;
}

CohortManifest gen_cohort(const SynthConfig& cfg, const std::string& out_dir) {
    SynthCohort cohort = gen_cohort_memory(cfg);
    const fs::path root(out_dir);
    fs::create_directories(root / "bags");

    CohortManifest relative = cohort.manifest;
    for (size_t i = 0; i < cohort.bags.size(); ++i) {
        const std::string rel = "bags/" + cohort.bags[i].slide_id + ".h5";
        write_bag(cohort.bags[i], (root / rel).string());
        relative.rows[i].file_path = rel;
    }
    write_manifest(relative, (root / "manifest.csv").string());

    CohortManifest resolved = relative;
    for (auto& row : resolved.rows) row.file_path = (root / row.file_path).string();
    return resolved;
}

std::vector<double> oracle_scores(const SynthConfig& cfg,
                                  const std::vector<FeatureBag>& bags) {
    const Generator gen(cfg);
    const int d = cfg.d;

    const Eigen::MatrixXd aat = gen.shift_a * gen.shift_a.transpose();
    const double s2 = cfg.shift_enabled ? cfg.shift_sigma * cfg.shift_sigma : 0.0;
    const Eigen::MatrixXd cov_witness =
        cfg.witness_sigma * cfg.witness_sigma * aat +
        s2 * Eigen::MatrixXd::Identity(d, d);
    const Eigen::MatrixXd cov_background =
        aat + s2 * Eigen::MatrixXd::Identity(d, d);

    struct GaussianDensity {
        Eigen::LLT<Eigen::MatrixXd> llt;
        double log_norm;
        void init(const Eigen::MatrixXd& cov) {
            llt.compute(cov);
            double logdet = 0.0;
            const auto& l = llt.matrixLLT();
            for (int i = 0; i < cov.rows(); ++i) logdet += 2.0 * std::log(l(i, i));
            log_norm = -0.5 * (cov.rows() * std::log(2.0 * M_PI) + logdet);
        }
        double log_pdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean) const {
            const Eigen::VectorXd diff = x - mean;
            const Eigen::VectorXd sol = llt.solve(diff);
            return log_norm - 0.5 * diff.dot(sol);
        }
    };
    GaussianDensity witness_pdf, background_pdf;
    witness_pdf.init(cov_witness);
    background_pdf.init(cov_background);

    const Eigen::VectorXd m1 = gen.shift_a * gen.class_mean(1) + gen.shift_b;
    const Eigen::VectorXd m0 = gen.shift_a * gen.class_mean(0) + gen.shift_b;
    const Eigen::VectorXd mb = gen.shift_b;
    const double log_w = std::log(cfg.witness_rate);
    const double log_1mw =
        cfg.witness_rate >= 1.0 ? -std::numeric_limits<double>::infinity()
                                : std::log(1.0 - cfg.witness_rate);

    auto log_mix = [&](double log_witness, double log_bg) {
        if (std::isinf(log_1mw)) return log_w + log_witness;
        const double a = log_w + log_witness;
        const double b = log_1mw + log_bg;
        const double mx = std::max(a, b);
        return mx + std::log(std::exp(a - mx) + std::exp(b - mx));
    };

    std::vector<double> scores;
    scores.reserve(bags.size());
    for (const auto& bag : bags) {
        double best = -std::numeric_limits<double>::infinity();
        for (int64_t i = 0; i < bag.features.rows(); ++i) {
            if (bag.patch_class[static_cast<size_t>(i)] !=
                static_cast<int8_t>(PatchClass::tumor))
                continue;
            const Eigen::VectorXd x = bag.features.row(i).transpose().cast<double>();
            const double log_bg = background_pdf.log_pdf(x, mb);
            const double llr = log_mix(witness_pdf.log_pdf(x, m1), log_bg) -
                               log_mix(witness_pdf.log_pdf(x, m0), log_bg);
            best = std::max(best, llr);
        }
        scores.push_back(best);
    }
    return scores;
}

double oracle_auc(const SynthConfig& cfg) {
    const SynthCohort cohort = gen_cohort_memory(cfg);
    const std::vector<double> scores = oracle_scores(cfg, cohort.bags);

    // brute-force pairwise AUC, ties count one half
    double wins = 0.0;
    int64_t pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (cohort.bags[i].target != 1) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (cohort.bags[j].target != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    require(pairs > 0, ErrorCode::bad_argument, "oracle_auc: cohort has a single class");
    return wins / static_cast<double>(pairs);
}

}  // namespace dassl
