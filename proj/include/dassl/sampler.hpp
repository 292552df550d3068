#pragma once
// Uniform spatial sampling: coords -> unit square -> G x G grid ->
// round-robin draw of up to K instances -> optional zero padding + mask ->
// joint row shuffle. Deterministic for a fixed (bag, config) pair.

#include <cstdint>
#include <vector>

#include "dassl/bag.hpp"

namespace dassl {

struct SamplerConfig {
    int G = 32;            // grid resolution per axis
    int K = 1024;          // max instances per bag
    uint64_t seed = 0;
    bool pad_to_K = true;  // true on the SSL path, false on the supervised path
};

struct SampledBag {
    Eigen::MatrixXf features;             // K x d (padded) or n x d (unpadded)
    std::vector<uint8_t> valid_mask;      // same length as rows
    std::vector<int32_t> source_indices;  // original row per kept row, -1 for padding

    int64_t rows() const { return features.rows(); }
    int64_t n_valid() const {
        int64_t c = 0;
        for (auto m : valid_mask) c += (m != 0);
        return c;
    }
};

// Per-axis min-max to [0,1]; a constant axis maps to 0.
Eigen::MatrixXf normalize_coords(const Eigen::MatrixXf& coords);

// cell = floor(u*G) clamped to G-1 per axis; index = cell_x * G + cell_y.
std::vector<int32_t> grid_assign(const Eigen::MatrixXf& unit_coords, int G);

SampledBag uniform_sample(const FeatureBag& bag, const SamplerConfig& cfg);

}  // namespace dassl
