#pragma once
// Feature-space augmentations for two-view self-supervision. All operations
// leave padded (mask=false) rows exactly zero and never change shapes.
//
// make_views applies the enabled augmentations in a fixed order
//   instance mask -> feature replace -> instance replace -> noise ->
//   block drop -> dropout
// twice, with independent RNG streams derived from (seed, view index).

#include <cstdint>

#include "dassl/rng.hpp"
#include "dassl/sampler.hpp"

namespace dassl {

struct AugmentConfig {
    bool mask_enabled = true;
    double mask_rate = 0.1;          // fraction of valid instances zeroed
    bool feat_replace_enabled = true;
    double feat_replace_frac = 0.1;  // fraction of dims swapped in from a donor
    bool inst_replace_enabled = true;
    double inst_replace_rate = 0.05; // fraction of instances overwritten by a donor
    bool noise_enabled = true;
    double noise_sigma = 0.1;
    bool block_drop_enabled = true;
    double block_drop_frac = 0.1;    // contiguous fraction of dims zeroed
    bool dropout_enabled = true;
    double dropout_p = 0.1;          // per-element zero probability, no rescaling
    uint64_t seed = 0;
};

struct ViewPair {
    Eigen::MatrixXf view1;
    Eigen::MatrixXf view2;
    std::vector<uint8_t> valid_mask;  // shared by both views
};

using Mask = std::vector<uint8_t>;

// floor(rate * n_valid) valid instances, uniform without repeat, set to zero.
Eigen::MatrixXf instance_mask(const Eigen::MatrixXf& x, const Mask& mask, double rate,
                              Rng& rng);

// Every valid instance gets floor(frac * d) uniformly chosen dims copied from
// a uniformly chosen *different* valid instance (donors read from the input).
// No-op when fewer than two valid instances.
Eigen::MatrixXf instance_feature_replace(const Eigen::MatrixXf& x, const Mask& mask,
                                         double frac, Rng& rng);

// floor(rate * n_valid) valid instances overwritten by a copy of a uniformly
// chosen valid instance (donor may be the instance itself; donors read from
// the input).
Eigen::MatrixXf instance_replace(const Eigen::MatrixXf& x, const Mask& mask, double rate,
                                 Rng& rng);

// i.i.d. N(0, sigma^2) added to every element of every valid row.
Eigen::MatrixXf instance_feature_noise(const Eigen::MatrixXf& x, const Mask& mask,
                                       double sigma, Rng& rng);

// Per valid instance, zeroes a contiguous block of floor(frac * d) dims with
// uniform start.
Eigen::MatrixXf instance_feature_drop(const Eigen::MatrixXf& x, const Mask& mask,
                                      double frac, Rng& rng);

// Each element of each valid row independently zeroed with probability p.
Eigen::MatrixXf instance_feature_dropout(const Eigen::MatrixXf& x, const Mask& mask,
                                         double p, Rng& rng);

ViewPair make_views(const SampledBag& sampled, const AugmentConfig& cfg);

// The augmentation chain for a single view; make_views calls this twice.
Eigen::MatrixXf augment_chain(const Eigen::MatrixXf& x, const Mask& mask,
                              const AugmentConfig& cfg, Rng& rng);

}  // namespace dassl
