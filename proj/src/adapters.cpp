#include "dassl/adapters.hpp"

#include <cmath>

#include "dassl/error.hpp"
#include "dassl/rng.hpp"

namespace dassl {

AdapterKind adapter_kind_from_string(const std::string& s) {
    if (s == "none") return AdapterKind::none;
    if (s == "mlp") return AdapterKind::mlp;
    if (s == "conv1d") return AdapterKind::conv1d;
    fail(ErrorCode::bad_config, "unknown adapter.kind: " + s);
}

const char* adapter_kind_name(AdapterKind k) {
    switch (k) {
        case AdapterKind::none:   return "none";
        case AdapterKind::mlp:    return "mlp";
        case AdapterKind::conv1d: return "conv1d";
    }
    return "?";
}

FeatureAdapter FeatureAdapter::init(const AdapterConfig& cfg, uint64_t seed) {
    FeatureAdapter a;
    a.kind_ = cfg.kind;
    if (cfg.kind == AdapterKind::none) return a;

    require(cfg.input_dim >= 1, ErrorCode::bad_config, "adapter: input_dim must be >= 1");
    a.input_dim_ = cfg.input_dim;
    a.hidden_dim_ = cfg.hidden_dim > 0 ? cfg.hidden_dim : std::max(1, cfg.input_dim / 4);
    a.kernel_size_ = (cfg.kind == AdapterKind::conv1d) ? cfg.kernel_size : 1;
    require(a.kernel_size_ >= 1 && a.kernel_size_ % 2 == 1, ErrorCode::bad_config,
            "adapter: kernel_size must be odd");

    const int d = a.input_dim_;
    const int h = a.hidden_dim_;
    const int taps = a.kernel_size_;

    Rng rng(mix_seed({seed, 0xADA7u}));
    const double limit = 1.0 / std::sqrt(static_cast<double>(d) * taps);

    a.w1_taps_.reserve(static_cast<size_t>(taps));
    a.w2_taps_.reserve(static_cast<size_t>(taps));
    for (int t = 0; t < taps; ++t) {
        Tensor w1("adapter.w1.t" + std::to_string(t), h, d);
        for (int64_t i = 0; i < w1.v.rows(); ++i)
            for (int64_t j = 0; j < w1.v.cols(); ++j) w1.v(i, j) = rng.uniform(-limit, limit);
        a.w1_taps_.push_back(std::move(w1));
        // zero-init second layer: adapter is the identity at initialization
        a.w2_taps_.emplace_back("adapter.w2.t" + std::to_string(t), d, h);
    }
    a.b1_ = Tensor("adapter.b1", h, 1);
    a.b2_ = Tensor("adapter.b2", d, 1);
    return a;
}

Eigen::MatrixXd FeatureAdapter::forward(const Eigen::MatrixXd& x, Workspace& ws) const {
    if (kind_ == AdapterKind::none) {
        ws.x = x;
        return x;
    }
    require(x.cols() == input_dim_, ErrorCode::shape_mismatch,
            "adapter: input dim mismatch");
    const auto K = x.rows();
    const int r = kernel_size_ / 2;

    ws.x = x;
    ws.pre1 = Eigen::MatrixXd::Zero(K, hidden_dim_);
    ws.pre1.rowwise() += b1_.v.col(0).transpose();
    for (int o = -r; o <= r; ++o) {
        const auto& w1 = w1_taps_[static_cast<size_t>(o + r)].v;
        const int64_t t0 = std::max<int64_t>(0, -o);
        const int64_t len = K - std::abs(o);
        if (len <= 0) continue;
        ws.pre1.middleRows(t0, len) += x.middleRows(t0 + o, len) * w1.transpose();
    }
    ws.h = ws.pre1.cwiseMax(0.0);

    Eigen::MatrixXd z = x;
    z.rowwise() += b2_.v.col(0).transpose();
    for (int o = -r; o <= r; ++o) {
        const auto& w2 = w2_taps_[static_cast<size_t>(o + r)].v;
        const int64_t t0 = std::max<int64_t>(0, -o);
        const int64_t len = K - std::abs(o);
        if (len <= 0) continue;
        z.middleRows(t0, len) += ws.h.middleRows(t0 + o, len) * w2.transpose();
    }
    return z;
}

Eigen::MatrixXd FeatureAdapter::forward(const Eigen::MatrixXd& x) const {
    Workspace ws;
    return forward(x, ws);
}

Eigen::MatrixXd FeatureAdapter::backward(const Eigen::MatrixXd& dz, const Workspace& ws,
                                         bool accumulate_param_grads) {
    if (kind_ == AdapterKind::none) return dz;
    const auto K = dz.rows();
    const int r = kernel_size_ / 2;

    // dh[s] += dz[s-o] * W2o ; dW2o += dz^T * shift_o(h)
    Eigen::MatrixXd dh = Eigen::MatrixXd::Zero(K, hidden_dim_);
    for (int o = -r; o <= r; ++o) {
        auto& w2 = w2_taps_[static_cast<size_t>(o + r)];
        const int64_t t0 = std::max<int64_t>(0, -o);
        const int64_t len = K - std::abs(o);
        if (len <= 0) continue;
        dh.middleRows(t0 + o, len) += dz.middleRows(t0, len) * w2.v;
        if (accumulate_param_grads)
            w2.g += dz.middleRows(t0, len).transpose() * ws.h.middleRows(t0 + o, len);
    }
    if (accumulate_param_grads) b2_.g.col(0) += dz.colwise().sum().transpose();

    const Eigen::MatrixXd dpre1 =
        dh.cwiseProduct((ws.pre1.array() > 0.0).cast<double>().matrix());

    Eigen::MatrixXd dx = dz;
    for (int o = -r; o <= r; ++o) {
        auto& w1 = w1_taps_[static_cast<size_t>(o + r)];
        const int64_t t0 = std::max<int64_t>(0, -o);
        const int64_t len = K - std::abs(o);
        if (len <= 0) continue;
        dx.middleRows(t0 + o, len) += dpre1.middleRows(t0, len) * w1.v;
        if (accumulate_param_grads)
            w1.g += dpre1.middleRows(t0, len).transpose() * ws.x.middleRows(t0 + o, len);
    }
    if (accumulate_param_grads) b1_.g.col(0) += dpre1.colwise().sum().transpose();
    return dx;
}

TensorList FeatureAdapter::params() {
    TensorList out;
    if (kind_ == AdapterKind::none) return out;
    for (auto& t : w1_taps_) out.push_back(&t);
    out.push_back(&b1_);
    for (auto& t : w2_taps_) out.push_back(&t);
    out.push_back(&b2_);
    return out;
}

}  // namespace dassl
