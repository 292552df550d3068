#include "dassl/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dassl/error.hpp"
#include "dassl/rng.hpp"

namespace dassl {

Eigen::MatrixXf normalize_coords(const Eigen::MatrixXf& coords) {
    const auto n = coords.rows();
    require(n >= 1, ErrorCode::bad_argument, "normalize_coords: empty input");
    require(coords.allFinite(), ErrorCode::bad_value, "normalize_coords: non-finite coordinate");

    Eigen::MatrixXf out(n, 2);
    for (int axis = 0; axis < 2; ++axis) {
        const float lo = coords.col(axis).minCoeff();
        const float hi = coords.col(axis).maxCoeff();
        const float span = hi - lo;
        if (span <= 0.0f) {
            out.col(axis).setZero();
        } else {
            out.col(axis) = (coords.col(axis).array() - lo) / span;
        }
    }
    return out;
}

std::vector<int32_t> grid_assign(const Eigen::MatrixXf& unit_coords, int G) {
    require(G >= 1, ErrorCode::bad_argument, "grid_assign: G must be >= 1");
    std::vector<int32_t> cells(static_cast<size_t>(unit_coords.rows()));
    for (int64_t i = 0; i < unit_coords.rows(); ++i) {
        auto clamp_cell = [G](float u) {
            int c = static_cast<int>(std::floor(u * static_cast<float>(G)));
            return std::clamp(c, 0, G - 1);
        };
        const int row = clamp_cell(unit_coords(i, 0));
        const int col = clamp_cell(unit_coords(i, 1));
        cells[static_cast<size_t>(i)] = static_cast<int32_t>(row * G + col);
    }
    return cells;
}

SampledBag uniform_sample(const FeatureBag& bag, const SamplerConfig& cfg) {
    require(cfg.G >= 1 && cfg.K >= 1, ErrorCode::bad_config, "sampler: G and K must be >= 1");
    const auto n = bag.features.rows();
    require(n >= 1, ErrorCode::bad_argument, "uniform_sample: empty bag");

    const auto unit = normalize_coords(bag.coords);
    const auto cells = grid_assign(unit, cfg.G);

    // Cells in ascending index order as the canonical base; the per-round
    // visit order is then re-randomized from this base.
    std::map<int32_t, std::vector<int32_t>> by_cell;
    for (int64_t i = 0; i < n; ++i)
        by_cell[cells[static_cast<size_t>(i)]].push_back(static_cast<int32_t>(i));

    std::vector<std::vector<int32_t>> pools;
    pools.reserve(by_cell.size());
    for (auto& [cell, rows] : by_cell) pools.push_back(std::move(rows));

    Rng rng(mix_seed({cfg.seed, 0x5a3cu}));

    const auto target = static_cast<size_t>(std::min<int64_t>(n, cfg.K));
    std::vector<int32_t> selected;
    selected.reserve(target);

    std::vector<size_t> active(pools.size());
    for (size_t i = 0; i < pools.size(); ++i) active[i] = i;

    // One uniform draw per visited cell per round, without replacement;
    // a fresh random cell order every round.
    while (selected.size() < target && !active.empty()) {
        rng.shuffle(active);
        std::vector<size_t> still_active;
        still_active.reserve(active.size());
        for (size_t pool_idx : active) {
            if (selected.size() >= target) {
                still_active.push_back(pool_idx);
                continue;
            }
            auto& pool = pools[pool_idx];
            const size_t pick = static_cast<size_t>(rng.below(pool.size()));
            selected.push_back(pool[pick]);
            pool[pick] = pool.back();
            pool.pop_back();
            if (!pool.empty()) still_active.push_back(pool_idx);
        }
        active = std::move(still_active);
    }

    const auto d = bag.features.cols();
    const auto out_rows = cfg.pad_to_K ? static_cast<int64_t>(cfg.K)
                                       : static_cast<int64_t>(selected.size());

    // Joint row permutation over features, mask, and source indices.
    std::vector<int64_t> perm(static_cast<size_t>(out_rows));
    for (int64_t i = 0; i < out_rows; ++i) perm[static_cast<size_t>(i)] = i;
    rng.shuffle(perm);

    SampledBag out;
    out.features = Eigen::MatrixXf::Zero(out_rows, d);
    out.valid_mask.assign(static_cast<size_t>(out_rows), 0);
    out.source_indices.assign(static_cast<size_t>(out_rows), -1);
    for (int64_t r = 0; r < out_rows; ++r) {
        const int64_t src_slot = perm[static_cast<size_t>(r)];
        if (src_slot < static_cast<int64_t>(selected.size())) {
            const int32_t src_row = selected[static_cast<size_t>(src_slot)];
            out.features.row(r) = bag.features.row(src_row);
            out.valid_mask[static_cast<size_t>(r)] = 1;
            out.source_indices[static_cast<size_t>(r)] = src_row;
        }
    }
    return out;
}

}  // namespace dassl
