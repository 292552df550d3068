#include "dassl/ssl_objective.hpp"

#include <cmath>

#include "dassl/error.hpp"
#include "dassl/rng.hpp"

namespace dassl {

namespace {

constexpr double kNormEps = 1e-5;    // per-sample normalization denominator
constexpr double kCosineEps = 1e-8;  // norm floor inside cosines

Eigen::VectorXd instance_norm(const Eigen::VectorXd& v, SSLHeads::NormWs& ws) {
    const auto n = static_cast<double>(v.size());
    const double mu = v.mean();
    const double var = (v.array() - mu).square().sum() / n;  // biased
    ws.in = v;
    ws.sigma = std::sqrt(var + kNormEps);
    ws.out = (v.array() - mu) / ws.sigma;
    return ws.out;
}

Eigen::VectorXd instance_norm_backward(const Eigen::VectorXd& dy,
                                       const SSLHeads::NormWs& ws) {
    const auto n = static_cast<double>(dy.size());
    const double mean_dy = dy.mean();
    const double mean_dy_y = dy.cwiseProduct(ws.out).sum() / n;
    return ((dy.array() - mean_dy) - ws.out.array() * mean_dy_y) / ws.sigma;
}

// cos(p, t) with the eps floor; dcos/dp. The 1/||p|| curvature term only
// applies while the floor is inactive.
double cosine_grad_p(const Eigen::VectorXd& p, const Eigen::VectorXd& t,
                     Eigen::VectorXd& dp) {
    const double np_raw = p.norm();
    const double np = std::max(np_raw, kCosineEps);
    const double nt = std::max(t.norm(), kCosineEps);
    const double c = p.dot(t) / (np * nt);
    dp = t / (np * nt);
    if (np_raw > kCosineEps) dp -= (c / (np * np)) * p;
    return c;
}

}  // namespace

SSLHeads SSLHeads::init(const SSLConfig& cfg, uint64_t seed) {
    require(cfg.embed_dim >= 1, ErrorCode::bad_config, "ssl: embed_dim must be >= 1");
    require(cfg.latent_dim >= 2, ErrorCode::bad_config, "ssl: latent_dim must be >= 2");

    SSLHeads h;
    h.dm_ = cfg.embed_dim;
    h.dz_ = cfg.latent_dim;
    h.proj_w_ = Tensor("ssl.proj_w", h.dz_, h.dm_);
    h.proj_b_ = Tensor("ssl.proj_b", h.dz_, 1);
    h.pred_w_ = Tensor("ssl.pred_w", h.dz_, h.dz_);
    h.pred_b_ = Tensor("ssl.pred_b", h.dz_, 1);

    Rng rng(mix_seed({seed, 0x55Cu}));
    auto fill = [&rng](Tensor& t, double limit) {
        for (int64_t i = 0; i < t.v.rows(); ++i)
            for (int64_t j = 0; j < t.v.cols(); ++j) t.v(i, j) = rng.uniform(-limit, limit);
    };
    fill(h.proj_w_, 1.0 / std::sqrt(static_cast<double>(h.dm_)));
    fill(h.pred_w_, 1.0 / std::sqrt(static_cast<double>(h.dz_)));
    return h;
}

Eigen::VectorXd SSLHeads::project(const Eigen::VectorXd& e, ProjectWs& ws) const {
    require(e.size() == dm_, ErrorCode::shape_mismatch, "project: embed dim mismatch");
    ws.input = e;
    ws.pre = proj_w_.v * e + proj_b_.v.col(0);
    ws.relu = ws.pre.cwiseMax(0.0);
    return instance_norm(ws.relu, ws.norm);
}

Eigen::VectorXd SSLHeads::project(const Eigen::VectorXd& e) const {
    ProjectWs ws;
    return project(e, ws);
}

Eigen::VectorXd SSLHeads::predict(const Eigen::VectorXd& m, PredictWs& ws) const {
    require(m.size() == dz_, ErrorCode::shape_mismatch, "predict: latent dim mismatch");
    const Eigen::VectorXd y = instance_norm(m, ws.norm);
    ws.relu = y.cwiseMax(0.0);
    return pred_w_.v * ws.relu + pred_b_.v.col(0);
}

Eigen::VectorXd SSLHeads::predict(const Eigen::VectorXd& m) const {
    PredictWs ws;
    return predict(m, ws);
}

Eigen::VectorXd SSLHeads::backward_project(const Eigen::VectorXd& dm, const ProjectWs& ws,
                                           bool accumulate_param_grads) {
    const Eigen::VectorXd drelu = instance_norm_backward(dm, ws.norm);
    const Eigen::VectorXd dpre =
        drelu.cwiseProduct((ws.pre.array() > 0.0).cast<double>().matrix());
    if (accumulate_param_grads) {
        proj_w_.g += dpre * ws.input.transpose();
        proj_b_.g.col(0) += dpre;
    }
    return proj_w_.v.transpose() * dpre;
}

Eigen::VectorXd SSLHeads::backward_predict(const Eigen::VectorXd& dp, const PredictWs& ws,
                                           bool accumulate_param_grads) {
    if (accumulate_param_grads) {
        pred_w_.g += dp * ws.relu.transpose();
        pred_b_.g.col(0) += dp;
    }
    const Eigen::VectorXd drelu = pred_w_.v.transpose() * dp;
    const Eigen::VectorXd dy =
        drelu.cwiseProduct((ws.norm.out.array() > 0.0).cast<double>().matrix());
    return instance_norm_backward(dy, ws.norm);
}

TensorList SSLHeads::params() {
    return {&proj_w_, &proj_b_, &pred_w_, &pred_b_};
}

SimSiamResult simsiam_loss(const Eigen::MatrixXd& p1, const Eigen::MatrixXd& t2,
                           const Eigen::MatrixXd& p2, const Eigen::MatrixXd& t1) {
    const auto B = p1.rows();
    require(B >= 1, ErrorCode::bad_argument, "simsiam_loss: empty batch");
    require(t2.rows() == B && p2.rows() == B && t1.rows() == B &&
                t2.cols() == p1.cols() && p2.cols() == p1.cols() && t1.cols() == p1.cols(),
            ErrorCode::shape_mismatch, "simsiam_loss: shape mismatch");

    SimSiamResult res;
    res.dp1 = Eigen::MatrixXd::Zero(B, p1.cols());
    res.dp2 = Eigen::MatrixXd::Zero(B, p1.cols());
    res.dt1 = Eigen::MatrixXd::Zero(B, p1.cols());
    res.dt2 = Eigen::MatrixXd::Zero(B, p1.cols());

    const double scale = 1.0 / (2.0 * static_cast<double>(B));
    Eigen::VectorXd dp;
    for (int64_t b = 0; b < B; ++b) {
        const double c1 = cosine_grad_p(p1.row(b).transpose(), t2.row(b).transpose(), dp);
        res.dp1.row(b) = -scale * dp.transpose();
        const double c2 = cosine_grad_p(p2.row(b).transpose(), t1.row(b).transpose(), dp);
        res.dp2.row(b) = -scale * dp.transpose();
        res.value += scale * (-c1 - c2);
    }
    return res;
}

CvConsResult cv_consistency_loss(const Eigen::MatrixXd& z1, const Eigen::MatrixXd& z2,
                                 const Mask& mask, double lambda) {
    require(z1.rows() == z2.rows() && z1.cols() == z2.cols(), ErrorCode::shape_mismatch,
            "cv_consistency_loss: shape mismatch");
    require(static_cast<int64_t>(mask.size()) == z1.rows(), ErrorCode::shape_mismatch,
            "cv_consistency_loss: mask length mismatch");

    CvConsResult res;
    res.dz1 = Eigen::MatrixXd::Zero(z1.rows(), z1.cols());
    res.dz2 = Eigen::MatrixXd::Zero(z1.rows(), z1.cols());
    for (int64_t i = 0; i < z1.rows(); ++i) {
        if (!mask[static_cast<size_t>(i)]) continue;
        ++res.n_valid;
        const Eigen::RowVectorXd diff = z1.row(i) - z2.row(i);
        res.sum_sq += diff.squaredNorm();
        res.sum_l1 += z1.row(i).cwiseAbs().sum();
        res.dz1.row(i) = 2.0 * diff + lambda * z1.row(i).array().sign().matrix();
        res.dz2.row(i) = -2.0 * diff;
    }
    require(res.n_valid > 0, ErrorCode::bad_argument, "cv_consistency_loss: all-false mask");
    const double inv_n = 1.0 / static_cast<double>(res.n_valid);
    res.value = (res.sum_sq + lambda * res.sum_l1) * inv_n;
    res.dz1 *= inv_n;
    res.dz2 *= inv_n;
    return res;
}

namespace {

struct BagForward {
    FeatureAdapter::Workspace ad1, ad2;
    MilModel::Workspace mil1, mil2;
    SSLHeads::ProjectWs proj1, proj2;
    SSLHeads::PredictWs pred1, pred2;
    Eigen::MatrixXd z1, z2;  // masked adapter outputs
    CvConsResult cons;
};

void apply_mask_rows(Eigen::MatrixXd& z, const Mask& mask) {
    for (int64_t i = 0; i < z.rows(); ++i)
        if (!mask[static_cast<size_t>(i)]) z.row(i).setZero();
}

}  // namespace

LossReport dassl_loss(const std::vector<ViewBatchItem>& batch, FeatureAdapter& adapter,
                      MilModel& mil, SSLHeads& heads, const SSLConfig& cfg,
                      bool accumulate_grads, std::vector<Eigen::VectorXd>* targets_out) {
    const auto B = static_cast<int64_t>(batch.size());
    require(B >= 1, ErrorCode::bad_argument, "dassl_loss: empty batch");

    std::vector<BagForward> fws(batch.size());
    Eigen::MatrixXd P1(B, heads.latent_dim()), P2(B, heads.latent_dim());
    Eigen::MatrixXd T1(B, heads.latent_dim()), T2(B, heads.latent_dim());
    int64_t n_valid_total = 0;

    for (int64_t b = 0; b < B; ++b) {
        const auto& item = batch[static_cast<size_t>(b)];
        auto& fw = fws[static_cast<size_t>(b)];

        fw.z1 = adapter.forward(item.view1, fw.ad1);
        fw.z2 = adapter.forward(item.view2, fw.ad2);
        apply_mask_rows(fw.z1, item.mask);
        apply_mask_rows(fw.z2, item.mask);

        // frozen traversal, eval mode: deterministic encoder for both views
        mil.forward(fw.z1, item.mask, false, nullptr, fw.mil1);
        mil.forward(fw.z2, item.mask, false, nullptr, fw.mil2);

        const Eigen::VectorXd m1 = heads.project(fw.mil1.embedding, fw.proj1);
        const Eigen::VectorXd m2 = heads.project(fw.mil2.embedding, fw.proj2);
        P1.row(b) = heads.predict(m1, fw.pred1).transpose();
        P2.row(b) = heads.predict(m2, fw.pred2).transpose();
        T1.row(b) = m1.transpose();  // detached values
        T2.row(b) = m2.transpose();

        fw.cons = cv_consistency_loss(fw.z1, fw.z2, item.mask, cfg.lambda);
        n_valid_total += fw.cons.n_valid;
    }

    const SimSiamResult sim = simsiam_loss(P1, T2, P2, T1);

    double cons_pooled = 0.0;
    for (const auto& fw : fws) cons_pooled += fw.cons.sum_sq + cfg.lambda * fw.cons.sum_l1;
    cons_pooled /= static_cast<double>(n_valid_total);

    LossReport report;
    report.l_simsiam = sim.value;
    report.l_cons = cons_pooled;
    report.l_total = sim.value + cfg.cons_weight * cons_pooled;

    if (targets_out) {
        targets_out->clear();
        for (int64_t b = 0; b < B; ++b) {
            targets_out->push_back(T1.row(b).transpose());
            targets_out->push_back(T2.row(b).transpose());
        }
    }

    if (!accumulate_grads) return report;

    for (int64_t b = 0; b < B; ++b) {
        const auto& item = batch[static_cast<size_t>(b)];
        auto& fw = fws[static_cast<size_t>(b)];

        // predictor branch only; targets receive no gradient
        const Eigen::VectorXd dm1 =
            heads.backward_predict(sim.dp1.row(b).transpose(), fw.pred1, true);
        const Eigen::VectorXd dm2 =
            heads.backward_predict(sim.dp2.row(b).transpose(), fw.pred2, true);
        const Eigen::VectorXd de1 = heads.backward_project(dm1, fw.proj1, true);
        const Eigen::VectorXd de2 = heads.backward_project(dm2, fw.proj2, true);

        Eigen::MatrixXd dz1 =
            mil.backward(Eigen::Vector2d::Zero(), de1, 0.0, fw.mil1, false);
        Eigen::MatrixXd dz2 =
            mil.backward(Eigen::Vector2d::Zero(), de2, 0.0, fw.mil2, false);

        // rescale the per-bag consistency grads to the pooled denominator
        const double rescale = cfg.cons_weight * static_cast<double>(fw.cons.n_valid) /
                               static_cast<double>(n_valid_total);
        dz1 += rescale * fw.cons.dz1;
        dz2 += rescale * fw.cons.dz2;

        // backward of the mask re-application
        apply_mask_rows(dz1, item.mask);
        apply_mask_rows(dz2, item.mask);

        adapter.backward(dz1, fw.ad1, true);
        adapter.backward(dz2, fw.ad2, true);
    }
    return report;
}

LossReport dassl_loss_frozen_targets(const std::vector<ViewBatchItem>& batch,
                                     const FeatureAdapter& adapter, const MilModel& mil,
                                     const SSLHeads& heads, const SSLConfig& cfg,
                                     const std::vector<Eigen::VectorXd>& targets) {
    const auto B = static_cast<int64_t>(batch.size());
    require(B >= 1, ErrorCode::bad_argument, "dassl_loss: empty batch");
    require(targets.size() == batch.size() * 2, ErrorCode::bad_argument,
            "dassl_loss_frozen_targets: need two targets per bag");

    Eigen::MatrixXd P1(B, heads.latent_dim()), P2(B, heads.latent_dim());
    Eigen::MatrixXd T1(B, heads.latent_dim()), T2(B, heads.latent_dim());
    double cons_sum = 0.0;
    int64_t n_valid_total = 0;

    for (int64_t b = 0; b < B; ++b) {
        const auto& item = batch[static_cast<size_t>(b)];
        Eigen::MatrixXd z1 = adapter.forward(item.view1);
        Eigen::MatrixXd z2 = adapter.forward(item.view2);
        apply_mask_rows(z1, item.mask);
        apply_mask_rows(z2, item.mask);

        const Eigen::VectorXd e1 = mil.forward(z1, item.mask).embedding;
        const Eigen::VectorXd e2 = mil.forward(z2, item.mask).embedding;
        P1.row(b) = heads.predict(heads.project(e1)).transpose();
        P2.row(b) = heads.predict(heads.project(e2)).transpose();
        T1.row(b) = targets[static_cast<size_t>(2 * b)].transpose();
        T2.row(b) = targets[static_cast<size_t>(2 * b + 1)].transpose();

        const CvConsResult cons = cv_consistency_loss(z1, z2, item.mask, cfg.lambda);
        cons_sum += cons.sum_sq + cfg.lambda * cons.sum_l1;
        n_valid_total += cons.n_valid;
    }

    LossReport report;
    report.l_simsiam = simsiam_loss(P1, T2, P2, T1).value;
    report.l_cons = cons_sum / static_cast<double>(n_valid_total);
    report.l_total = report.l_simsiam + cfg.cons_weight * report.l_cons;
    return report;
}

}  // namespace dassl
