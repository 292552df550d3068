#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "dassl/error.hpp"
#include "dassl/eval_harness.hpp"
#include "dassl/synthgen.hpp"
#include "support.hpp"

using namespace dassl;
using test::TempDir;

namespace {

// independent O(n^2) oracle: wins plus half the ties over pos/neg pairs
double brute_force_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    int64_t pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

CohortManifest fake_manifest(int n_patients, double pos_ratio, int max_slides,
                             uint64_t seed) {
    CohortManifest m;
    Rng rng(seed);
    for (int p = 0; p < n_patients; ++p) {
        const int target = rng.uniform() < pos_ratio ? 1 : 0;
        const int n_slides = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(max_slides)));
        for (int s = 0; s < n_slides; ++s) {
            ManifestRow row;
            row.patient_id = "P" + std::to_string(p);
            row.slide_id = row.patient_id + "_S" + std::to_string(s);
            row.center_id = "C0";
            row.target = target;
            m.rows.push_back(std::move(row));
        }
    }
    return m;
}

}  // namespace

TEST_CASE("roc_auc: separated, constant, and the four-point hand case") {
    CHECK(roc_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
    CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
    // pos/neg pairs: wins 3, losses 1 -> 0.75
    CHECK(roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == 0.75);
}

TEST_CASE("roc_auc requires both classes") {
    CHECK_THROWS(roc_auc({0.1, 0.2}, {1, 1}));
}

TEST_CASE("roc_auc matches the brute-force oracle exactly, ties included") {
    for (uint64_t trial = 0; trial < 5; ++trial) {
        Rng rng(40 + trial);
        std::vector<double> scores;
        std::vector<int> labels;
        for (int i = 0; i < 1000; ++i) {
            // quantized scores so ties actually occur
            scores.push_back(std::floor(rng.uniform() * 50.0) / 50.0);
            labels.push_back(rng.uniform() < 0.4 ? 1 : 0);
        }
        labels[0] = 1;
        labels[1] = 0;
        CHECK(roc_auc(scores, labels) == brute_force_auc(scores, labels));
    }
}

TEST_CASE("roc_auc is invariant under strictly increasing transforms") {
    Rng rng(50);
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 300; ++i) {
        scores.push_back(rng.normal());
        labels.push_back(i % 3 == 0 ? 1 : 0);
    }
    std::vector<double> transformed;
    for (double s : scores) transformed.push_back(std::exp(2.0 * s) + 1.0);
    CHECK(roc_auc(scores, labels) == roc_auc(transformed, labels));
}

TEST_CASE("roc_auc of negated tie-free scores is the complement") {
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 200; ++i) {
        scores.push_back(i * 0.013 + (i % 7) * 1e-4);  // strictly increasing, tie-free
        labels.push_back((i * 19) % 3 == 0 ? 1 : 0);
    }
    std::vector<double> negated;
    for (double s : scores) negated.push_back(-s);
    CHECK(roc_auc(scores, labels) + roc_auc(negated, labels) == doctest::Approx(1.0));
}

TEST_CASE("confusion metrics: perfect, hand case, and absent ratios") {
    const ConfusionMetrics perfect = confusion_metrics({1, 0, 1, 0}, {1, 0, 1, 0});
    CHECK(perfect.accuracy == 1.0);
    CHECK(*perfect.sensitivity == 1.0);
    CHECK(*perfect.specificity == 1.0);
    CHECK(*perfect.precision == 1.0);
    CHECK(*perfect.f1 == 1.0);

    // TP=1, FN=1, TN=2, FP=0
    const ConfusionMetrics hand = confusion_metrics({1, 0, 0, 0}, {1, 1, 0, 0});
    CHECK(hand.accuracy == 0.75);
    CHECK(*hand.sensitivity == 0.5);
    CHECK(*hand.specificity == 1.0);
    CHECK(*hand.precision == 1.0);
    CHECK(*hand.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    // all-negative predictions with positives present: precision undefined
    const ConfusionMetrics absent = confusion_metrics({0, 0, 0}, {1, 0, 1});
    CHECK_FALSE(absent.precision.has_value());
    CHECK_FALSE(absent.f1.has_value());
    CHECK(*absent.sensitivity == 0.0);
}

TEST_CASE("confusion metrics agree with brute-force counting") {
    for (uint64_t trial = 0; trial < 20; ++trial) {
        Rng rng(60 + trial);
        const int n = 1 + static_cast<int>(rng.below(1000));
        std::vector<int> pred, labels;
        for (int i = 0; i < n; ++i) {
            pred.push_back(rng.uniform() < 0.5 ? 1 : 0);
            labels.push_back(rng.uniform() < 0.5 ? 1 : 0);
        }
        int tp = 0, tn = 0, fp = 0, fn = 0;
        for (int i = 0; i < n; ++i) {
            if (labels[i] == 1 && pred[i] == 1) ++tp;
            if (labels[i] == 1 && pred[i] == 0) ++fn;
            if (labels[i] == 0 && pred[i] == 1) ++fp;
            if (labels[i] == 0 && pred[i] == 0) ++tn;
        }
        const ConfusionMetrics m = confusion_metrics(pred, labels);
        CHECK(m.accuracy == doctest::Approx(double(tp + tn) / n).epsilon(1e-12));
        if (tp + fn > 0) CHECK(*m.sensitivity == doctest::Approx(double(tp) / (tp + fn)));
        if (tn + fp > 0) CHECK(*m.specificity == doctest::Approx(double(tn) / (tn + fp)));
        if (tp + fp > 0) CHECK(*m.precision == doctest::Approx(double(tp) / (tp + fp)));
    }
}

TEST_CASE("kfold_split stratifies exactly on a balanced 10-patient cohort") {
    const CohortManifest m = [] {
        CohortManifest out;
        for (int p = 0; p < 10; ++p) {
            ManifestRow row;
            row.patient_id = "P" + std::to_string(p);
            row.slide_id = row.patient_id + "_S0";
            row.target = p < 5 ? 1 : 0;
            out.rows.push_back(row);
        }
        return out;
    }();
    const FoldSplit split = kfold_split(m, 5, 1);
    for (const auto& fold : split.val_patients) {
        CHECK(fold.size() == 2);
        int pos = 0;
        for (const auto& id : fold) pos += (std::stoi(id.substr(1)) < 5);
        CHECK(pos == 1);
    }
}

TEST_CASE("kfold_split keeps a patient's slides together and is seed-stable") {
    const CohortManifest m = fake_manifest(30, 0.4, 3, 70);
    const FoldSplit a = kfold_split(m, 5, 3);
    const FoldSplit b = kfold_split(m, 5, 3);
    for (int f = 0; f < 5; ++f) CHECK(a.val_patients[f] == b.val_patients[f]);

    // a patient id appears in exactly one fold
    std::map<std::string, int> seen;
    for (const auto& fold : a.val_patients)
        for (const auto& id : fold) seen[id] += 1;
    for (const auto& [id, count] : seen) CHECK(count == 1);
}

TEST_CASE("kfold_split rejects cohorts with too few patients per class") {
    const CohortManifest m = fake_manifest(6, 0.5, 1, 71);
    CHECK_THROWS(kfold_split(m, 5, 1));
}

TEST_CASE("kfold_split properties over 1000 random manifests") {
    int ratio_checked = 0;
    for (uint64_t trial = 0; trial < 1000; ++trial) {
        Rng rng(trial);
        const int n_patients = 12 + static_cast<int>(rng.below(200));
        const double ratio = 0.25 + 0.5 * rng.uniform();
        CohortManifest m = fake_manifest(n_patients, ratio, 3, 9000 + trial);

        int total_pos = 0;
        std::set<std::string> patients;
        for (const auto& row : m.rows)
            if (patients.insert(row.patient_id).second) total_pos += row.target;
        const int total = static_cast<int>(patients.size());
        const int k = 5;
        if (total_pos < k || total - total_pos < k) continue;

        const FoldSplit split = kfold_split(m, k, trial);

        // partition: every patient in exactly one fold
        std::map<std::string, int> seen;
        int covered = 0;
        for (const auto& fold : split.val_patients)
            for (const auto& id : fold) {
                seen[id] += 1;
                ++covered;
            }
        CHECK(covered == total);
        for (const auto& [id, count] : seen) CHECK(count == 1);

        // per-class counts across folds differ by at most one
        std::map<std::string, int> target_of;
        for (const auto& row : m.rows) target_of[row.patient_id] = row.target;
        std::vector<int> pos_counts, fold_sizes;
        for (const auto& fold : split.val_patients) {
            int pos = 0;
            for (const auto& id : fold) pos += target_of[id];
            pos_counts.push_back(pos);
            fold_sizes.push_back(static_cast<int>(fold.size()));
        }
        const auto [pos_min, pos_max] = std::minmax_element(pos_counts.begin(), pos_counts.end());
        CHECK(*pos_max - *pos_min <= 1);

        // ratio within +/-10% relative of global when classes are large
        if (total_pos >= 50 && total - total_pos >= 50) {
            const double global = static_cast<double>(total_pos) / total;
            for (int f = 0; f < k; ++f) {
                const double fold_ratio =
                    static_cast<double>(pos_counts[static_cast<size_t>(f)]) /
                    fold_sizes[static_cast<size_t>(f)];
                CHECK(std::abs(fold_ratio - global) / global <= 0.10);
            }
            ++ratio_checked;
        }
    }
    CHECK(ratio_checked > 100);  // the ratio clause was actually exercised
}

TEST_CASE("majority_vote follows the majority with ties toward positive") {
    const auto votes = majority_vote({{"p1", 1}, {"p1", 1}, {"p1", 0},
                                      {"p2", 0},
                                      {"p3", 1}, {"p3", 0}});
    CHECK(votes.at("p1") == 1);
    CHECK(votes.at("p2") == 0);
    CHECK(votes.at("p3") == 1);  // tie
}

TEST_CASE("aggregate_metric: identical folds give zero std, absent values skipped") {
    const MetricAggregate same = aggregate_metric({0.7, 0.7, 0.7});
    CHECK(same.mean == doctest::Approx(0.7));
    CHECK(same.stdev == 0.0);
    CHECK(same.n_defined == 3);

    const MetricAggregate two = aggregate_metric({0.6, 0.8, std::nullopt});
    CHECK(two.n_defined == 2);
    CHECK(two.mean == doctest::Approx(0.7));
    CHECK(two.stdev == doctest::Approx(std::sqrt(0.02 / 1.0)).epsilon(1e-9));
}

TEST_CASE("cross_validate produces per-fold rows and is deterministic") {
    TempDir dir("cv");
    SynthConfig sc;
    sc.n_patients = 14;
    sc.d = 8;
    sc.instances_min = 15;
    sc.instances_max = 30;
    sc.witness_rate = 0.6;
    sc.class_ratio = 0.5;
    sc.separation = 3.0;
    sc.shift_enabled = false;
    sc.seed = 77;
    const CohortManifest manifest = gen_cohort(sc, dir.str());

    Config cfg = Config::defaults();
    cfg.set("train.schedule", "sup_only");
    cfg.set("train.sup_epochs", "3");
    cfg.set("sampler.K", "16");
    cfg.set("sampler.G", "4");
    cfg.set("ssl.latent_dim", "8");
    cfg.set("mil.attn_hidden", "8");
    cfg.set("mil.n_branch", "2");
    const PipelineConfig pipeline = pipeline_from_config(cfg);

    const CVResult a = cross_validate(manifest, pipeline, 2, 5, 1);
    REQUIRE(a.slide_level.folds.size() == 2);
    REQUIRE(a.patient_level.folds.size() == 2);
    CHECK(a.slide_level.aggregate.at("auc").n_defined == 2);

    const CVResult b = cross_validate(manifest, pipeline, 2, 5, 2);  // parallel folds
    for (int f = 0; f < 2; ++f) {
        CHECK(a.slide_level.folds[f].auc == b.slide_level.folds[f].auc);
        CHECK(a.slide_level.folds[f].cm.accuracy == b.slide_level.folds[f].cm.accuracy);
        CHECK(a.patient_level.folds[f].auc == b.patient_level.folds[f].auc);
    }

    // reporting helpers accept the result
    const std::string table = metrics_table(a.slide_level, "slide-level");
    CHECK(table.find("AUC") != std::string::npos);
    const std::string csv = metrics_csv(a.slide_level);
    CHECK(csv.find("fold,auc") != std::string::npos);
}

TEST_CASE("cross_validate honors preassigned folds from the manifest") {
    TempDir dir("cvfold");
    SynthConfig sc;
    sc.n_patients = 8;
    sc.d = 6;
    sc.instances_min = 10;
    sc.instances_max = 20;
    sc.witness_rate = 0.8;
    sc.class_ratio = 0.5;
    sc.separation = 3.0;
    sc.shift_enabled = false;
    sc.seed = 78;
    CohortManifest manifest = gen_cohort(sc, dir.str());
    // assign folds by patient parity
    for (auto& row : manifest.rows)
        row.fold_id = std::stoi(row.patient_id.substr(1)) % 2;

    Config cfg = Config::defaults();
    cfg.set("train.schedule", "sup_only");
    cfg.set("train.sup_epochs", "2");
    cfg.set("ssl.latent_dim", "8");
    cfg.set("mil.attn_hidden", "4");
    cfg.set("mil.n_branch", "1");
    const CVResult res = cross_validate(manifest, pipeline_from_config(cfg), 99, 1, 1);
    CHECK(res.split.k == 2);  // from the manifest, not the k argument
}
