#pragma once
// SimSiam heads and the combined self-supervised objective
//
//   l_total = l_simsiam + cons_weight * l_cons
//
//   l_simsiam = mean over bags of 1/2 (-cos(p1, sg(m2)) - cos(p2, sg(m1)))
//   l_cons    = E_M ||z1 - z2||_2^2 + lambda * E_M ||z1||_1
//
// where m_i = project(MIL embedding of view i), p_i = predict(m_i), sg is
// stop-gradient (targets contribute value but never gradient), z_i are the
// masked adapter outputs, and E_M averages over mask-valid instances pooled
// across the batch. The L1 term deliberately uses z1 only.
//
// projector: affine -> ReLU -> per-sample normalization (eps 1e-5)
// predictor: per-sample normalization -> ReLU -> affine

#include <cstdint>
#include <optional>
#include <vector>

#include "dassl/adapters.hpp"
#include "dassl/augment.hpp"
#include "dassl/mil.hpp"
#include "dassl/param.hpp"

namespace dassl {

struct SSLConfig {
    int embed_dim = 0;    // d_m (MIL embedding width)
    int latent_dim = 256; // d_z
    double lambda = 0.1;
    double cons_weight = 0.5;
};

struct LossReport {
    double l_simsiam = 0.0;
    double l_cons = 0.0;
    double l_total = 0.0;
    std::optional<double> l_sup;
};

class SSLHeads {
public:
    struct NormWs {
        Eigen::VectorXd in;
        Eigen::VectorXd out;
        double sigma = 1.0;
    };
    struct ProjectWs {
        Eigen::VectorXd input;  // MIL embedding
        Eigen::VectorXd pre;    // affine output
        Eigen::VectorXd relu;
        NormWs norm;
    };
    struct PredictWs {
        NormWs norm;
        Eigen::VectorXd relu;
    };

    static SSLHeads init(const SSLConfig& cfg, uint64_t seed);

    int embed_dim() const { return dm_; }
    int latent_dim() const { return dz_; }

    Eigen::VectorXd project(const Eigen::VectorXd& e, ProjectWs& ws) const;
    Eigen::VectorXd project(const Eigen::VectorXd& e) const;
    Eigen::VectorXd predict(const Eigen::VectorXd& m, PredictWs& ws) const;
    Eigen::VectorXd predict(const Eigen::VectorXd& m) const;

    Eigen::VectorXd backward_project(const Eigen::VectorXd& dm, const ProjectWs& ws,
                                     bool accumulate_param_grads);
    Eigen::VectorXd backward_predict(const Eigen::VectorXd& dp, const PredictWs& ws,
                                     bool accumulate_param_grads);

    TensorList params();

private:
    int dm_ = 0;
    int dz_ = 0;
    Tensor proj_w_;  // d_z x d_m
    Tensor proj_b_;  // d_z x 1
    Tensor pred_w_;  // d_z x d_z
    Tensor pred_b_;  // d_z x 1
};

// Symmetric negative-cosine loss. Targets are stop-gradient by construction:
// dt1/dt2 are identically zero and exist only to make that contract explicit.
struct SimSiamResult {
    double value = 0.0;
    Eigen::MatrixXd dp1, dp2;  // B x d_z
    Eigen::MatrixXd dt1, dt2;  // exact zeros
};
SimSiamResult simsiam_loss(const Eigen::MatrixXd& p1, const Eigen::MatrixXd& t2,
                           const Eigen::MatrixXd& p2, const Eigen::MatrixXd& t1);

// Per-bag cross-view consistency, averaged over this bag's valid instances.
struct CvConsResult {
    double value = 0.0;
    double sum_sq = 0.0;   // unscaled sums, for pooling across a batch
    double sum_l1 = 0.0;
    int64_t n_valid = 0;
    Eigen::MatrixXd dz1, dz2;
};
CvConsResult cv_consistency_loss(const Eigen::MatrixXd& z1, const Eigen::MatrixXd& z2,
                                 const Mask& mask, double lambda);

// One bag's two views, already in double precision.
struct ViewBatchItem {
    Eigen::MatrixXd view1;
    Eigen::MatrixXd view2;
    Mask mask;
};

// Full DA-SSL objective over a batch. When accumulate_grads is set, parameter
// gradients are added into the adapter and heads; the MIL is traversed frozen
// (its parameters never receive gradient from this loss). The MIL runs in
// eval mode here so both views see a deterministic encoder.
LossReport dassl_loss(const std::vector<ViewBatchItem>& batch, FeatureAdapter& adapter,
                      MilModel& mil, SSLHeads& heads, const SSLConfig& cfg,
                      bool accumulate_grads,
                      std::vector<Eigen::VectorXd>* targets_out = nullptr);

// Same value computation but with the simsiam targets held fixed, which is
// the function the analytic gradients differentiate. Finite-difference checks
// use this.
LossReport dassl_loss_frozen_targets(const std::vector<ViewBatchItem>& batch,
                                     const FeatureAdapter& adapter, const MilModel& mil,
                                     const SSLHeads& heads, const SSLConfig& cfg,
                                     const std::vector<Eigen::VectorXd>& targets);

}  // namespace dassl
