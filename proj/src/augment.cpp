#include "dassl/augment.hpp"

#include <algorithm>
#include <cmath>

#include "dassl/error.hpp"

namespace dassl {

namespace {

std::vector<int64_t> valid_rows(const Mask& mask) {
    std::vector<int64_t> out;
    out.reserve(mask.size());
    for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) out.push_back(static_cast<int64_t>(i));
    return out;
}

void check_rate(double r, const char* what) {
    require(r >= 0.0 && r <= 1.0, ErrorCode::bad_config,
            std::string(what) + " must be in [0,1]");
}

}  // namespace

Eigen::MatrixXf instance_mask(const Eigen::MatrixXf& x, const Mask& mask, double rate,
                              Rng& rng) {
    check_rate(rate, "mask_rate");
    Eigen::MatrixXf out = x;
    const auto valid = valid_rows(mask);
    const auto k = static_cast<size_t>(std::floor(rate * static_cast<double>(valid.size())));
    if (k == 0) return out;
    for (size_t pos : rng.sample_without_replacement(valid.size(), k))
        out.row(valid[pos]).setZero();
    return out;
}

Eigen::MatrixXf instance_feature_replace(const Eigen::MatrixXf& x, const Mask& mask,
                                         double frac, Rng& rng) {
    check_rate(frac, "feat_replace_frac");
    Eigen::MatrixXf out = x;
    const auto valid = valid_rows(mask);
    const auto d = x.cols();
    const auto n_dims = static_cast<size_t>(std::floor(frac * static_cast<double>(d)));
    if (n_dims == 0 || valid.size() < 2) return out;
    for (size_t vi = 0; vi < valid.size(); ++vi) {
        // donor is a different valid instance, values from the input snapshot
        size_t donor_pos = static_cast<size_t>(rng.below(valid.size() - 1));
        if (donor_pos >= vi) ++donor_pos;
        const int64_t donor = valid[donor_pos];
        const int64_t row = valid[vi];
        for (size_t dim : rng.sample_without_replacement(static_cast<size_t>(d), n_dims))
            out(row, static_cast<int64_t>(dim)) = x(donor, static_cast<int64_t>(dim));
    }
    return out;
}

Eigen::MatrixXf instance_replace(const Eigen::MatrixXf& x, const Mask& mask, double rate,
                                 Rng& rng) {
    check_rate(rate, "inst_replace_rate");
    Eigen::MatrixXf out = x;
    const auto valid = valid_rows(mask);
    const auto k = static_cast<size_t>(std::floor(rate * static_cast<double>(valid.size())));
    if (k == 0) return out;
    for (size_t pos : rng.sample_without_replacement(valid.size(), k)) {
        const int64_t donor = valid[static_cast<size_t>(rng.below(valid.size()))];
        out.row(valid[pos]) = x.row(donor);
    }
    return out;
}

Eigen::MatrixXf instance_feature_noise(const Eigen::MatrixXf& x, const Mask& mask,
                                       double sigma, Rng& rng) {
    require(sigma >= 0.0, ErrorCode::bad_config, "noise_sigma must be >= 0");
    Eigen::MatrixXf out = x;
    if (sigma == 0.0) return out;
    for (int64_t i = 0; i < x.rows(); ++i) {
        if (!mask[static_cast<size_t>(i)]) continue;
        for (int64_t j = 0; j < x.cols(); ++j)
            out(i, j) += static_cast<float>(rng.normal(0.0, sigma));
    }
    return out;
}

Eigen::MatrixXf instance_feature_drop(const Eigen::MatrixXf& x, const Mask& mask,
                                      double frac, Rng& rng) {
    check_rate(frac, "block_drop_frac");
    Eigen::MatrixXf out = x;
    const auto d = x.cols();
    const auto len = static_cast<int64_t>(std::floor(frac * static_cast<double>(d)));
    if (len == 0) return out;
    for (int64_t i = 0; i < x.rows(); ++i) {
        if (!mask[static_cast<size_t>(i)]) continue;
        const int64_t start = static_cast<int64_t>(rng.below(static_cast<uint64_t>(d - len + 1)));
        out.row(i).segment(start, len).setZero();
    }
    return out;
}

Eigen::MatrixXf instance_feature_dropout(const Eigen::MatrixXf& x, const Mask& mask,
                                         double p, Rng& rng) {
    check_rate(p, "dropout_p");
    Eigen::MatrixXf out = x;
    if (p == 0.0) return out;
    for (int64_t i = 0; i < x.rows(); ++i) {
        if (!mask[static_cast<size_t>(i)]) continue;
        for (int64_t j = 0; j < x.cols(); ++j)
            if (rng.uniform() < p) out(i, j) = 0.0f;
    }
    return out;
}

Eigen::MatrixXf augment_chain(const Eigen::MatrixXf& x, const Mask& mask,
                              const AugmentConfig& cfg, Rng& rng) {
    Eigen::MatrixXf v = x;
    if (cfg.mask_enabled) v = instance_mask(v, mask, cfg.mask_rate, rng);
    if (cfg.feat_replace_enabled)
        v = instance_feature_replace(v, mask, cfg.feat_replace_frac, rng);
    if (cfg.inst_replace_enabled) v = instance_replace(v, mask, cfg.inst_replace_rate, rng);
    if (cfg.noise_enabled) v = instance_feature_noise(v, mask, cfg.noise_sigma, rng);
    if (cfg.block_drop_enabled) v = instance_feature_drop(v, mask, cfg.block_drop_frac, rng);
    if (cfg.dropout_enabled) v = instance_feature_dropout(v, mask, cfg.dropout_p, rng);
    return v;
}

ViewPair make_views(const SampledBag& sampled, const AugmentConfig& cfg) {
    require(sampled.features.rows() == static_cast<int64_t>(sampled.valid_mask.size()),
            ErrorCode::shape_mismatch, "make_views: mask length mismatch");
    ViewPair pair;
    pair.valid_mask = sampled.valid_mask;
    Rng rng1(mix_seed({cfg.seed, 0xA16u, 1}));
    Rng rng2(mix_seed({cfg.seed, 0xA16u, 2}));
    pair.view1 = augment_chain(sampled.features, sampled.valid_mask, cfg, rng1);
    pair.view2 = augment_chain(sampled.features, sampled.valid_mask, cfg, rng2);
    return pair;
}

}  // namespace dassl
