#include <doctest.h>

#include <map>
#include <set>

#include "dassl/error.hpp"
#include "dassl/sampler.hpp"
#include "support.hpp"

using namespace dassl;
using test::random_bag;

TEST_CASE("normalize_coords maps per-axis min-max to the unit square") {
    Eigen::MatrixXf coords(2, 2);
    coords << 0, 0, 10, 20;
    const auto unit = normalize_coords(coords);
    CHECK(unit(0, 0) == 0.0f);
    CHECK(unit(0, 1) == 0.0f);
    CHECK(unit(1, 0) == 1.0f);
    CHECK(unit(1, 1) == 1.0f);
}

TEST_CASE("normalize_coords maps a constant axis to zero") {
    Eigen::MatrixXf coords(1, 2);
    coords << 5, 5;
    const auto unit = normalize_coords(coords);
    CHECK(unit(0, 0) == 0.0f);
    CHECK(unit(0, 1) == 0.0f);
}

TEST_CASE("normalize_coords hand case") {
    Eigen::MatrixXf coords(3, 2);
    coords << 0, 0, 5, 20, 10, 20;
    const auto unit = normalize_coords(coords);
    CHECK(unit(0, 0) == doctest::Approx(0.0));
    CHECK(unit(1, 0) == doctest::Approx(0.5));
    CHECK(unit(1, 1) == doctest::Approx(1.0));
    CHECK(unit(2, 0) == doctest::Approx(1.0));
    CHECK(unit(2, 1) == doctest::Approx(1.0));
}

TEST_CASE("normalize_coords rejects non-finite input") {
    Eigen::MatrixXf coords(2, 2);
    coords << 0, 0, std::numeric_limits<float>::quiet_NaN(), 1;
    try {
        normalize_coords(coords);
        FAIL("expected bad_value");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::bad_value);
    }
}

TEST_CASE("grid_assign clamps the upper edge and uses row-major cell indices") {
    Eigen::MatrixXf unit(3, 2);
    unit << 1.0f, 1.0f, 0.0f, 0.0f, 0.5f, 0.25f;
    const auto cells32 = grid_assign(unit, 32);
    CHECK(cells32[0] == 1023);  // cell (31,31)
    CHECK(cells32[1] == 0);
    const auto cells4 = grid_assign(unit, 4);
    CHECK(cells4[2] == 9);  // cell (2,1) -> 2*4+1
}

TEST_CASE("uniform_sample keeps everything and pads when under capacity") {
    const FeatureBag bag = random_bag(3, 4, 21);
    SamplerConfig cfg;
    cfg.G = 8;
    cfg.K = 64;
    cfg.seed = 5;
    cfg.pad_to_K = true;
    const SampledBag out = uniform_sample(bag, cfg);
    CHECK(out.rows() == 64);
    CHECK(out.n_valid() == 3);

    std::set<int32_t> sources;
    for (int64_t i = 0; i < out.rows(); ++i) {
        const bool valid = out.valid_mask[static_cast<size_t>(i)] != 0;
        const bool zero_row = out.features.row(i).isZero(0.0f);
        const int32_t src = out.source_indices[static_cast<size_t>(i)];
        if (valid) {
            CHECK(src >= 0);
            CHECK(out.features.row(i) == bag.features.row(src));
            CHECK(sources.insert(src).second);  // no duplication
        } else {
            CHECK(zero_row);
            CHECK(src == -1);
        }
    }
}

TEST_CASE("uniform_sample draws one patch per occupied cell in the first round") {
    // 200 rows spread over exactly 50 occupied cells of an 8x8 grid. Cells 0
    // and 63 are included and hit with exact corner coordinates so min-max
    // normalization is the identity and cell geometry is preserved.
    const int G = 8;
    FeatureBag bag = random_bag(200, 4, 22);
    std::vector<int> cells = {0, 63};
    for (int c = 1; c <= 48; ++c) cells.push_back(c);
    REQUIRE(cells.size() == 50);
    for (int i = 0; i < 200; ++i) {
        const int cell = cells[static_cast<size_t>(i % 50)];
        bag.coords(i, 0) = (static_cast<float>(cell / G) + 0.5f) / G;
        bag.coords(i, 1) = (static_cast<float>(cell % G) + 0.5f) / G;
    }
    bag.coords(0, 0) = 0.0f;  // row 0 belongs to cell 0
    bag.coords(0, 1) = 0.0f;
    bag.coords(1, 0) = 1.0f;  // row 1 belongs to cell 63 (clamped upper edge)
    bag.coords(1, 1) = 1.0f;

    const auto unit = normalize_coords(bag.coords);
    const auto assignment = grid_assign(unit, G);
    std::set<int32_t> occupied(assignment.begin(), assignment.end());
    REQUIRE(occupied.size() == 50);

    SamplerConfig cfg;
    cfg.G = G;
    cfg.K = 50;
    cfg.seed = 9;
    cfg.pad_to_K = false;
    const SampledBag out = uniform_sample(bag, cfg);
    CHECK(out.rows() == 50);

    std::map<int32_t, int> per_cell;
    for (int32_t src : out.source_indices) per_cell[assignment[static_cast<size_t>(src)]] += 1;
    CHECK(per_cell.size() == 50);
    for (const auto& [cell, count] : per_cell) CHECK(count == 1);
}

TEST_CASE("uniform_sample is deterministic for a fixed bag and config") {
    const FeatureBag bag = random_bag(120, 6, 23);
    SamplerConfig cfg;
    cfg.G = 4;
    cfg.K = 40;
    cfg.seed = 31;
    const SampledBag a = uniform_sample(bag, cfg);
    const SampledBag b = uniform_sample(bag, cfg);
    CHECK(a.features == b.features);
    CHECK(a.valid_mask == b.valid_mask);
    CHECK(a.source_indices == b.source_indices);
}

TEST_CASE("uniform_sample covers every occupied cell when K allows") {
    for (uint64_t trial = 0; trial < 100; ++trial) {
        Rng rng(400 + trial);
        const int n = 5 + static_cast<int>(rng.below(60));
        FeatureBag bag = random_bag(n, 3, 500 + trial);
        SamplerConfig cfg;
        cfg.G = 2 + static_cast<int>(rng.below(6));
        cfg.seed = trial;
        cfg.pad_to_K = false;

        const auto unit = normalize_coords(bag.coords);
        const auto assignment = grid_assign(unit, cfg.G);
        std::set<int32_t> occupied(assignment.begin(), assignment.end());
        cfg.K = static_cast<int>(occupied.size()) + static_cast<int>(rng.below(8));

        const SampledBag out = uniform_sample(bag, cfg);
        std::set<int32_t> sampled_cells;
        std::set<int32_t> seen_sources;
        for (int32_t src : out.source_indices) {
            CHECK(seen_sources.insert(src).second);
            sampled_cells.insert(assignment[static_cast<size_t>(src)]);
        }
        CHECK(sampled_cells == occupied);
        CHECK(out.rows() == std::min<int64_t>(n, cfg.K));
    }
}

TEST_CASE("uniform_sample without padding returns all-valid rows") {
    const FeatureBag bag = random_bag(30, 4, 24);
    SamplerConfig cfg;
    cfg.G = 4;
    cfg.K = 10;
    cfg.seed = 3;
    cfg.pad_to_K = false;
    const SampledBag out = uniform_sample(bag, cfg);
    CHECK(out.rows() == 10);
    CHECK(out.n_valid() == 10);
    for (auto m : out.valid_mask) CHECK(m == 1);
}

TEST_CASE("uniform_sample rejects an empty bag") {
    FeatureBag bag;
    bag.features.resize(0, 3);
    bag.coords.resize(0, 2);
    SamplerConfig cfg;
    try {
        uniform_sample(bag, cfg);
        FAIL("expected bad_argument");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::bad_argument);
    }
}
