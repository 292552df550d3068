#pragma once
// Evaluation: rank-statistic AUC, confusion metrics with absent-not-zero
// semantics for undefined ratios, patient-grouped stratified k-fold splits,
// majority voting, and the cross-validation driver.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dassl/bag.hpp"
#include "dassl/trainer.hpp"

namespace dassl {

// Mann-Whitney AUC (average ranks, ties contribute one half). Requires both
// classes present.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct ConfusionMetrics {
    double accuracy = 0.0;
    std::optional<double> sensitivity;  // TP / (TP + FN)
    std::optional<double> specificity;  // TN / (TN + FP)
    std::optional<double> precision;    // TP / (TP + FP)
    std::optional<double> f1;           // harmonic mean of precision and sensitivity
};

ConfusionMetrics confusion_metrics(const std::vector<int>& pred,
                                   const std::vector<int>& labels);

struct FoldSplit {
    int k = 0;
    // fold -> validation patient ids; folds partition the patients
    std::vector<std::vector<std::string>> val_patients;
};

// Splits patients (never slides), stratified by target via per-class
// round-robin dealing after a seeded shuffle.
FoldSplit kfold_split(const CohortManifest& manifest, int k, uint64_t seed);

// patient -> majority of its slides' hard predictions, ties toward positive.
std::map<std::string, int> majority_vote(
    const std::vector<std::pair<std::string, int>>& slide_preds_by_patient);

struct FoldMetrics {
    double auc = 0.0;
    ConfusionMetrics cm;
    int n = 0;  // items evaluated (slides or patients)
};

struct MetricAggregate {
    double mean = 0.0;
    double stdev = 0.0;  // sample standard deviation over folds
    int n_defined = 0;
};

// Aggregates one named metric over folds, skipping folds where it is absent.
MetricAggregate aggregate_metric(const std::vector<std::optional<double>>& values);

struct MetricsReport {
    std::vector<FoldMetrics> folds;
    std::map<std::string, MetricAggregate> aggregate;  // auc, accuracy, ...
};

MetricsReport summarize_folds(const std::vector<FoldMetrics>& folds);

struct CVResult {
    MetricsReport slide_level;
    MetricsReport patient_level;  // majority voting, mean slide prob as score
    FoldSplit split;
};

// Trains one model per fold on its training split and evaluates the held-out
// slides (decision threshold 0.5 on the positive-class probability). Folds
// come from the manifest's fold_id column when present, else kfold_split.
// jobs > 1 trains folds in parallel; results are identical either way.
CVResult cross_validate(const CohortManifest& manifest, const PipelineConfig& cfg, int k,
                        uint64_t seed, int jobs = 1);

// Evaluates a trained model on a manifest (no training).
struct EvalResult {
    FoldMetrics slide_level;
    FoldMetrics patient_level;
    std::vector<double> slide_scores;
    std::vector<int> slide_labels;
    std::vector<std::string> slide_ids;
};
EvalResult evaluate_model(const CohortManifest& manifest, const PipelineConfig& cfg,
                          ModelState& state);

// Loads bags for manifest rows, applying NaN filtering (read_bag) and the
// configured tumor filter. Order matches the manifest.
std::vector<FeatureBag> load_bags(const CohortManifest& manifest, bool tumor_filter);

// Reporting helpers shared by the CLI and tests.
std::string metrics_table(const MetricsReport& report, const std::string& title);
std::string metrics_csv(const MetricsReport& report);

}  // namespace dassl
