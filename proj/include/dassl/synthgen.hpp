#pragma once
// Synthetic multi-center cohort generator. Stands in for the private
// clinical cohort: bags of Gaussian instances where a witness_rate fraction
// carries a class-conditional signal, coordinates scatter around a few
// fragment centers, and an affine distortion (random rotation x per-dim
// scaling in [0.5, 2], plus bias and isotropic noise) emulates embeddings
// from an out-of-domain frozen extractor.
//
// oracle_auc scores bags with the generator's own parameters (max over
// instances of the class-conditional log-likelihood ratio over tumor rows)
// and brute-forces the AUC, giving an upper reference for trained models.

#include <cstdint>
#include <string>
#include <vector>

#include "dassl/bag.hpp"
#include "dassl/config.hpp"

namespace dassl {

struct SynthConfig {
    int n_patients = 200;
    int slides_per_patient_min = 1;
    int slides_per_patient_max = 2;
    int d = 64;
    int instances_min = 80;
    int instances_max = 320;
    double witness_rate = 0.1;   // fraction of tumor instances carrying signal
    double class_ratio = 0.35;   // P(target = 1)
    double separation = 1.5;     // witness mean offset is +/- separation * u
    double witness_sigma = 1.0;  // within-class spread of witness instances
    bool shift_enabled = true;
    double shift_sigma = 0.3;    // post-shift additive noise
    int n_centers = 3;
    int fragments_min = 1;
    int fragments_max = 8;
    double artifact_frac = 0.04;  // pure-noise rows labelled artifact
    double normal_frac = 0.04;    // pure-noise rows labelled normal
    uint64_t seed = 123;
};

SynthConfig synth_config_from(const Config& cfg);

struct SynthCohort {
    std::vector<FeatureBag> bags;
    CohortManifest manifest;  // file paths filled only by the disk writer
};

// Deterministic in-memory cohort for a given config.
SynthCohort gen_cohort_memory(const SynthConfig& cfg);

// Writes bags as <out_dir>/bags/<slide_id>.h5 plus <out_dir>/manifest.csv
// (bag paths stored relative to the manifest). Same config, same bytes.
CohortManifest gen_cohort(const SynthConfig& cfg, const std::string& out_dir);

double oracle_auc(const SynthConfig& cfg);

// The oracle's per-bag score (max over tumor instances of the true
// class-conditional log-likelihood ratio) for externally supplied bags,
// using the generator parameters implied by cfg.
std::vector<double> oracle_scores(const SynthConfig& cfg,
                                  const std::vector<FeatureBag>& bags);

}  // namespace dassl
