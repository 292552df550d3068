#pragma once
// Residual feature adapters over frozen embeddings:
//   mlp:    z = x + W2 * relu(W1 * x + b1) + b2           (per instance)
//   conv1d: z = x + Conv1D(relu(Conv1D(x)))               (along the instance
//           axis, features as channels, odd kernel, zero same-padding)
//
// The final layer is zero-initialized, so a fresh adapter is exactly the
// identity. `none` disables the adapter entirely (frozen-feature arm).

#include <cstdint>
#include <string>
#include <vector>

#include "dassl/param.hpp"

namespace dassl {

enum class AdapterKind { none, mlp, conv1d };

AdapterKind adapter_kind_from_string(const std::string& s);
const char* adapter_kind_name(AdapterKind k);

struct AdapterConfig {
    AdapterKind kind = AdapterKind::mlp;
    int input_dim = 0;
    int hidden_dim = 0;   // 0 -> max(1, input_dim / 4)
    int kernel_size = 3;  // conv1d only, must be odd
};

class FeatureAdapter {
public:
    struct Workspace {
        Eigen::MatrixXd x;     // input, K x d
        Eigen::MatrixXd pre1;  // first-layer pre-activation, K x h
        Eigen::MatrixXd h;     // relu(pre1)
    };

    FeatureAdapter() = default;  // kind none, pass-through

    static FeatureAdapter init(const AdapterConfig& cfg, uint64_t seed);

    AdapterKind kind() const { return kind_; }
    bool has_params() const { return kind_ != AdapterKind::none; }
    int input_dim() const { return input_dim_; }
    int hidden_dim() const { return hidden_dim_; }
    int kernel_size() const { return kernel_size_; }

    // x: K x d, rows are instances. Returns z of the same shape.
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Workspace& ws) const;
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;

    // dz: gradient w.r.t. the output. Returns gradient w.r.t. the input and,
    // when accumulate_param_grads is set, adds parameter gradients in place.
    Eigen::MatrixXd backward(const Eigen::MatrixXd& dz, const Workspace& ws,
                             bool accumulate_param_grads);

    TensorList params();

private:
    AdapterKind kind_ = AdapterKind::none;
    int input_dim_ = 0;
    int hidden_dim_ = 0;
    int kernel_size_ = 1;

    // mlp: w1 (h x d), b1 (h x 1), w2 (d x h), b2 (d x 1).
    // conv1d: one tensor per kernel tap, w1_taps[t] (h x d), w2_taps[t] (d x h).
    std::vector<Tensor> w1_taps_;
    Tensor b1_;
    std::vector<Tensor> w2_taps_;
    Tensor b2_;
};

}  // namespace dassl
