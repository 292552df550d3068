#include "dassl/eval_harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "dassl/bag_store.hpp"
#include "dassl/error.hpp"
#include "dassl/rng.hpp"

namespace dassl {

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    require(scores.size() == labels.size(), ErrorCode::bad_argument,
            "roc_auc: length mismatch");
    const size_t n = scores.size();
    int64_t n_pos = 0, n_neg = 0;
    for (int y : labels) (y == 1 ? n_pos : n_neg) += 1;
    require(n_pos > 0 && n_neg > 0, ErrorCode::bad_argument,
            "roc_auc: both classes must be present");

    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // average ranks over tie groups (1-based), then the Mann-Whitney statistic
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t t = i; t <= j; ++t)
            if (labels[idx[t]] == 1) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double n_pos_d = static_cast<double>(n_pos);
    return (rank_sum_pos - n_pos_d * (n_pos_d + 1.0) / 2.0) /
           (n_pos_d * static_cast<double>(n_neg));
}

ConfusionMetrics confusion_metrics(const std::vector<int>& pred,
                                   const std::vector<int>& labels) {
    require(pred.size() == labels.size(), ErrorCode::bad_argument,
            "confusion_metrics: length mismatch");
    require(!pred.empty(), ErrorCode::bad_argument, "confusion_metrics: empty input");

    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (labels[i] == 1)
            (pred[i] == 1 ? tp : fn) += 1;
        else
            (pred[i] == 1 ? fp : tn) += 1;
    }

    ConfusionMetrics m;
    m.accuracy = (tp + tn) / static_cast<double>(pred.size());
    if (tp + fn > 0) m.sensitivity = tp / (tp + fn);
    if (tn + fp > 0) m.specificity = tn / (tn + fp);
    if (tp + fp > 0) m.precision = tp / (tp + fp);
    if (m.precision && m.sensitivity && (*m.precision + *m.sensitivity) > 0.0)
        m.f1 = 2.0 * (*m.precision) * (*m.sensitivity) / (*m.precision + *m.sensitivity);
    return m;
}

FoldSplit kfold_split(const CohortManifest& manifest, int k, uint64_t seed) {
    require(k >= 2, ErrorCode::bad_argument, "kfold_split: k must be >= 2");

    // unique patients in first-appearance order, with their (consistent) target
    std::vector<std::pair<std::string, int>> patients;
    std::map<std::string, int> seen;
    for (const auto& row : manifest.rows) {
        auto it = seen.find(row.patient_id);
        if (it == seen.end()) {
            seen[row.patient_id] = row.target;
            patients.emplace_back(row.patient_id, row.target);
        } else {
            require(it->second == row.target, ErrorCode::conflicting_target,
                    "patient " + row.patient_id + " has conflicting targets");
        }
    }

    std::vector<std::string> pos, neg;
    for (const auto& [id, target] : patients) (target == 1 ? pos : neg).push_back(id);
    require(static_cast<int>(pos.size()) >= k && static_cast<int>(neg.size()) >= k,
            ErrorCode::bad_argument,
            "kfold_split: need at least k patients per class");

    Rng rng_pos(mix_seed({seed, 0xF01Du, 1}));
    Rng rng_neg(mix_seed({seed, 0xF01Du, 0}));
    rng_pos.shuffle(pos);
    rng_neg.shuffle(neg);

    FoldSplit split;
    split.k = k;
    split.val_patients.assign(static_cast<size_t>(k), {});
    for (size_t i = 0; i < pos.size(); ++i)
        split.val_patients[i % static_cast<size_t>(k)].push_back(pos[i]);
    for (size_t i = 0; i < neg.size(); ++i)
        split.val_patients[i % static_cast<size_t>(k)].push_back(neg[i]);
    return split;
}

std::map<std::string, int> majority_vote(
    const std::vector<std::pair<std::string, int>>& slide_preds_by_patient) {
    std::map<std::string, std::pair<int, int>> counts;  // patient -> (pos, total)
    for (const auto& [patient, pred] : slide_preds_by_patient) {
        auto& c = counts[patient];
        c.first += (pred == 1);
        c.second += 1;
    }
    std::map<std::string, int> out;
    for (const auto& [patient, c] : counts)
        out[patient] = (2 * c.first >= c.second) ? 1 : 0;  // tie -> positive
    return out;
}

MetricAggregate aggregate_metric(const std::vector<std::optional<double>>& values) {
    MetricAggregate agg;
    double sum = 0.0;
    for (const auto& v : values)
        if (v) {
            sum += *v;
            ++agg.n_defined;
        }
    if (agg.n_defined == 0) return agg;
    agg.mean = sum / agg.n_defined;
    bool all_equal = true;
    std::optional<double> first;
    for (const auto& v : values)
        if (v) {
            if (!first) first = v;
            else if (*v != *first) all_equal = false;
        }
    if (all_equal) {
        agg.mean = *first;  // identical folds aggregate exactly
        return agg;
    }
    if (agg.n_defined >= 2) {
        double ss = 0.0;
        for (const auto& v : values)
            if (v) ss += (*v - agg.mean) * (*v - agg.mean);
        agg.stdev = std::sqrt(ss / (agg.n_defined - 1));
    }
    return agg;
}

MetricsReport summarize_folds(const std::vector<FoldMetrics>& folds) {
    MetricsReport report;
    report.folds = folds;
    auto collect = [&](auto getter) {
        std::vector<std::optional<double>> vals;
        for (const auto& f : folds) vals.push_back(getter(f));
        return aggregate_metric(vals);
    };
    report.aggregate["auc"] =
        collect([](const FoldMetrics& f) { return std::optional<double>(f.auc); });
    report.aggregate["accuracy"] =
        collect([](const FoldMetrics& f) { return std::optional<double>(f.cm.accuracy); });
    report.aggregate["sensitivity"] =
        collect([](const FoldMetrics& f) { return f.cm.sensitivity; });
    report.aggregate["specificity"] =
        collect([](const FoldMetrics& f) { return f.cm.specificity; });
    report.aggregate["precision"] =
        collect([](const FoldMetrics& f) { return f.cm.precision; });
    report.aggregate["f1"] = collect([](const FoldMetrics& f) { return f.cm.f1; });
    return report;
}

std::vector<FeatureBag> load_bags(const CohortManifest& manifest, bool tumor_filter) {
    std::vector<FeatureBag> bags;
    bags.reserve(manifest.rows.size());
    for (const auto& row : manifest.rows) {
        FeatureBag bag = filter_tumor(read_bag(row.file_path), tumor_filter);
        require(bag.target == row.target, ErrorCode::conflicting_target,
                "bag/manifest target mismatch for slide " + row.slide_id);
        if (!bags.empty())
            require(bag.dim() == bags.front().dim(), ErrorCode::shape_mismatch,
                    "feature dim differs across bags (slide " + row.slide_id + ")");
        bags.push_back(std::move(bag));
    }
    return bags;
}

namespace {

struct SlideEval {
    std::vector<double> probs;
    std::vector<int> preds;
    std::vector<int> labels;
    std::vector<std::string> patients;
};

FoldMetrics slide_metrics(const SlideEval& ev) {
    FoldMetrics fm;
    fm.n = static_cast<int>(ev.probs.size());
    fm.auc = roc_auc(ev.probs, ev.labels);
    fm.cm = confusion_metrics(ev.preds, ev.labels);
    return fm;
}

FoldMetrics patient_metrics(const SlideEval& ev) {
    std::vector<std::pair<std::string, int>> pred_pairs;
    std::map<std::string, std::pair<double, int>> score_acc;  // sum prob, count
    std::map<std::string, int> label_by_patient;
    for (size_t i = 0; i < ev.probs.size(); ++i) {
        pred_pairs.emplace_back(ev.patients[i], ev.preds[i]);
        auto& acc = score_acc[ev.patients[i]];
        acc.first += ev.probs[i];
        acc.second += 1;
        label_by_patient[ev.patients[i]] = ev.labels[i];
    }
    const auto votes = majority_vote(pred_pairs);

    std::vector<double> scores;
    std::vector<int> preds, labels;
    for (const auto& [patient, acc] : score_acc) {
        scores.push_back(acc.first / acc.second);  // mean slide probability
        preds.push_back(votes.at(patient));
        labels.push_back(label_by_patient.at(patient));
    }
    FoldMetrics fm;
    fm.n = static_cast<int>(scores.size());
    fm.auc = roc_auc(scores, labels);
    fm.cm = confusion_metrics(preds, labels);
    return fm;
}

}  // namespace

EvalResult evaluate_model(const CohortManifest& manifest, const PipelineConfig& cfg,
                          ModelState& state) {
    const auto bags = load_bags(manifest, cfg.tumor_filter);
    Trainer trainer(cfg);

    SlideEval ev;
    EvalResult result;
    for (size_t i = 0; i < bags.size(); ++i) {
        const double prob = trainer.predict_slide(bags[i], state);
        ev.probs.push_back(prob);
        ev.preds.push_back(prob >= 0.5 ? 1 : 0);
        ev.labels.push_back(bags[i].target);
        ev.patients.push_back(bags[i].patient_id);
        result.slide_scores.push_back(prob);
        result.slide_labels.push_back(bags[i].target);
        result.slide_ids.push_back(bags[i].slide_id);
    }
    result.slide_level = slide_metrics(ev);
    result.patient_level = patient_metrics(ev);
    return result;
}

CVResult cross_validate(const CohortManifest& manifest, const PipelineConfig& cfg, int k,
                        uint64_t seed, int jobs) {
    const auto bags = load_bags(manifest, cfg.tumor_filter);
    require(!bags.empty(), ErrorCode::bad_argument, "cross_validate: empty manifest");

    CVResult result;
    if (manifest.has_folds()) {
        int max_fold = 0;
        for (const auto& row : manifest.rows) max_fold = std::max(max_fold, row.fold_id);
        result.split.k = max_fold + 1;
        result.split.val_patients.assign(static_cast<size_t>(max_fold + 1), {});
        std::map<std::string, int> fold_of;
        for (const auto& row : manifest.rows) {
            auto it = fold_of.find(row.patient_id);
            if (it == fold_of.end()) {
                fold_of[row.patient_id] = row.fold_id;
                result.split.val_patients[static_cast<size_t>(row.fold_id)].push_back(
                    row.patient_id);
            } else {
                require(it->second == row.fold_id, ErrorCode::bad_value,
                        "patient " + row.patient_id + " assigned to two folds");
            }
        }
    } else {
        result.split = kfold_split(manifest, k, seed);
    }
    const int n_folds = result.split.k;
    require(n_folds >= 2, ErrorCode::bad_argument, "cross_validate: need at least 2 folds");

    std::vector<FoldMetrics> slide_folds(static_cast<size_t>(n_folds));
    std::vector<FoldMetrics> patient_folds(static_cast<size_t>(n_folds));

    auto run_fold = [&](int f) {
        std::vector<char> in_val(bags.size(), 0);
        const auto& val_patients = result.split.val_patients[static_cast<size_t>(f)];
        for (size_t i = 0; i < bags.size(); ++i)
            in_val[i] = std::count(val_patients.begin(), val_patients.end(),
                                   bags[i].patient_id) > 0;

        std::vector<FeatureBag> train_bags;
        for (size_t i = 0; i < bags.size(); ++i)
            if (!in_val[i]) train_bags.push_back(bags[i]);
        require(!train_bags.empty(), ErrorCode::bad_argument,
                "cross_validate: fold " + std::to_string(f) + " has no training data");

        PipelineConfig fold_cfg = cfg;
        fold_cfg.train.seed = mix_seed({cfg.train.seed, 0xCFu, static_cast<uint64_t>(f)});
        Trainer trainer(fold_cfg);
        ModelState state =
            ModelState::init(fold_cfg, static_cast<int>(bags.front().dim()),
                             fold_cfg.train.seed);
        Optimizers opts(fold_cfg.train);
        trainer.train(train_bags, state, opts);

        SlideEval ev;
        for (size_t i = 0; i < bags.size(); ++i) {
            if (!in_val[i]) continue;
            const double prob = trainer.predict_slide(bags[i], state);
            ev.probs.push_back(prob);
            ev.preds.push_back(prob >= 0.5 ? 1 : 0);
            ev.labels.push_back(bags[i].target);
            ev.patients.push_back(bags[i].patient_id);
        }
        require(!ev.probs.empty(), ErrorCode::bad_argument,
                "cross_validate: fold " + std::to_string(f) + " has no validation data");
        slide_folds[static_cast<size_t>(f)] = slide_metrics(ev);
        patient_folds[static_cast<size_t>(f)] = patient_metrics(ev);
    };

    jobs = std::max(1, std::min(jobs, n_folds));
    if (jobs == 1) {
        for (int f = 0; f < n_folds; ++f) run_fold(f);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(static_cast<size_t>(jobs));
        for (int w = 0; w < jobs; ++w) {
            workers.emplace_back([&, w] {
                try {
                    for (int f = next.fetch_add(1); f < n_folds; f = next.fetch_add(1))
                        run_fold(f);
                } catch (...) {
                    errors[static_cast<size_t>(w)] = std::current_exception();
                }
            });
        }
        for (auto& t : workers) t.join();
        for (const auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    result.slide_level = summarize_folds(slide_folds);
    result.patient_level = summarize_folds(patient_folds);
    return result;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "-"; }

}  // namespace

std::string metrics_table(const MetricsReport& report, const std::string& title) {
    std::ostringstream out;
    out << title << "\n";
    out << "fold     AUC      ACC      SENS     SPEC     PREC     F1       n\n";
    for (size_t f = 0; f < report.folds.size(); ++f) {
        const auto& fm = report.folds[f];
        out << f << "        " << fmt(fm.auc) << "   " << fmt(fm.cm.accuracy) << "   "
            << fmt_opt(fm.cm.sensitivity) << "   " << fmt_opt(fm.cm.specificity) << "   "
            << fmt_opt(fm.cm.precision) << "   " << fmt_opt(fm.cm.f1) << "   " << fm.n
            << "\n";
    }
    auto agg = [&](const char* key) {
        const auto& a = report.aggregate.at(key);
        return fmt(a.mean) + "\xc2\xb1" + fmt(a.stdev);
    };
    out << "mean     " << agg("auc") << " " << agg("accuracy") << " " << agg("sensitivity")
        << " " << agg("specificity") << " " << agg("precision") << " " << agg("f1") << "\n";
    return out.str();
}

std::string metrics_csv(const MetricsReport& report) {
    std::ostringstream out;
    out << "fold,auc,accuracy,sensitivity,specificity,precision,f1,n\n";
    auto cell = [](const std::optional<double>& v) {
        return v ? std::to_string(*v) : std::string();
    };
    for (size_t f = 0; f < report.folds.size(); ++f) {
        const auto& fm = report.folds[f];
        out << f << ',' << fm.auc << ',' << fm.cm.accuracy << ',' << cell(fm.cm.sensitivity)
            << ',' << cell(fm.cm.specificity) << ',' << cell(fm.cm.precision) << ','
            << cell(fm.cm.f1) << ',' << fm.n << "\n";
    }
    const char* keys[] = {"auc", "accuracy", "sensitivity", "specificity", "precision", "f1"};
    out << "mean";
    for (const char* key : keys) out << ',' << report.aggregate.at(key).mean;
    out << ",\nstd";
    for (const char* key : keys) out << ',' << report.aggregate.at(key).stdev;
    out << ",\n";
    return out.str();
}

}  // namespace dassl
