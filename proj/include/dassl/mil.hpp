#pragma once
// Attention-based MIL aggregators.
//
// abmil: gated attention (tanh/sigmoid two-pathway scores), masked softmax
// over valid instances, attention-weighted pooling, affine classifier.
//
// acmil: the same gated trunk with n_branch score heads. Each branch pools
// its own embedding; final logits come from the mean branch embedding
// through a shared classifier. During training each branch's top-attended
// instance is excluded from the softmax with probability mask_rate, and a
// branch-diversity penalty (mean pairwise cosine of attention vectors) is
// reported in aux_losses. With n_branch=1 and mask_rate=0 in eval mode,
// acmil reproduces abmil exactly.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dassl/augment.hpp"  // Mask
#include "dassl/param.hpp"
#include "dassl/rng.hpp"

namespace dassl {

enum class MilKind { abmil, acmil };

MilKind mil_kind_from_string(const std::string& s);
const char* mil_kind_name(MilKind k);

struct MilConfig {
    MilKind kind = MilKind::acmil;
    int input_dim = 0;          // d_m, equals the adapter output width
    int attn_hidden = 128;
    int n_branch = 5;           // forced to 1 for abmil
    double mask_rate = 0.1;     // per-branch top-1 masking probability (training)
    double diversity_coef = 0.1;
};

struct MILOutput {
    Eigen::Vector2d logits;
    Eigen::VectorXd embedding;          // pooled bag embedding, length d_m
    Eigen::MatrixXd attention;          // n_branch x K, zeros at invalid positions
    std::map<std::string, double> aux;  // "diversity" for acmil
};

class MilModel {
public:
    struct Workspace {
        Eigen::MatrixXd z;       // K x d input
        Eigen::MatrixXd tanh_t;  // K x L
        Eigen::MatrixXd sig_g;   // K x L
        Eigen::MatrixXd gated;   // tanh_t .* sig_g
        Eigen::MatrixXd attn;    // n_branch x K
        std::vector<std::vector<int64_t>> support;  // softmax support per branch
        Eigen::MatrixXd branch_embed;               // n_branch x d
        Eigen::VectorXd embedding;
        double diversity = 0.0;
    };

    static MilModel init(const MilConfig& cfg, uint64_t seed);

    const MilConfig& config() const { return cfg_; }

    // rng is consulted only when training && mask_rate > 0.
    MILOutput forward(const Eigen::MatrixXd& z, const Mask& mask, bool training, Rng* rng,
                      Workspace& ws) const;
    MILOutput forward(const Eigen::MatrixXd& z, const Mask& mask) const;  // eval mode

    // Backpropagates d(loss)/d(logits), an external gradient on the pooled
    // embedding, and a scalar weight on the diversity penalty. Returns the
    // gradient w.r.t. the input instances; parameter gradients accumulate
    // only when requested (the SSL path traverses the MIL frozen).
    Eigen::MatrixXd backward(const Eigen::Vector2d& dlogits, const Eigen::VectorXd& dembed,
                             double ddiversity, const Workspace& ws,
                             bool accumulate_param_grads);

    TensorList params();

private:
    MilConfig cfg_;
    Tensor attn_v_;      // L x d
    Tensor attn_u_;      // L x d
    Tensor attn_w_;      // n_branch x L
    Tensor cls_w_;       // 2 x d
    Tensor cls_b_;       // 2 x 1
};

// Weighted cross-entropy on the final logits plus the configured multiple of
// the diversity penalty. class_weights are (w0, w1); pass (1,1) to disable.
struct SupervisedLoss {
    double value = 0.0;
    double ce = 0.0;
    Eigen::Vector2d dlogits = Eigen::Vector2d::Zero();
    double ddiversity = 0.0;
};

SupervisedLoss supervised_loss(const MILOutput& out, int target,
                               const Eigen::Vector2d& class_weights, double diversity_coef);

// softmax(logits)[1]
double positive_probability(const Eigen::Vector2d& logits);

}  // namespace dassl
