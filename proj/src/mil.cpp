#include "dassl/mil.hpp"

#include <cmath>

#include "dassl/error.hpp"

namespace dassl {

namespace {

constexpr double kAttnNormFloor = 1e-12;

// cos(a, b) and d cos / d a for row vectors.
void cosine_pair_grad(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b,
                      double& cos_out, Eigen::RowVectorXd& da) {
    const double na = std::max(a.norm(), kAttnNormFloor);
    const double nb = std::max(b.norm(), kAttnNormFloor);
    cos_out = a.dot(b) / (na * nb);
    da = b / (na * nb) - (cos_out / (na * na)) * a;
}

}  // namespace

MilKind mil_kind_from_string(const std::string& s) {
    if (s == "abmil") return MilKind::abmil;
    if (s == "acmil") return MilKind::acmil;
    fail(ErrorCode::bad_config, "unknown mil.kind: " + s);
}

const char* mil_kind_name(MilKind k) {
    return k == MilKind::abmil ? "abmil" : "acmil";
}

MilModel MilModel::init(const MilConfig& cfg, uint64_t seed) {
    MilModel m;
    m.cfg_ = cfg;
    if (cfg.kind == MilKind::abmil) {
        m.cfg_.n_branch = 1;
        m.cfg_.mask_rate = 0.0;
    }
    require(m.cfg_.input_dim >= 1, ErrorCode::bad_config, "mil: input_dim must be >= 1");
    require(m.cfg_.attn_hidden >= 1, ErrorCode::bad_config, "mil: attn_hidden must be >= 1");
    require(m.cfg_.n_branch >= 1, ErrorCode::bad_config, "mil: n_branch must be >= 1");
    require(m.cfg_.mask_rate >= 0.0 && m.cfg_.mask_rate < 1.0, ErrorCode::bad_config,
            "mil: mask_rate must be in [0,1)");

    const int d = m.cfg_.input_dim;
    const int L = m.cfg_.attn_hidden;

    Rng rng(mix_seed({seed, 0x317Au}));
    auto fill = [&rng](Tensor& t, double limit) {
        for (int64_t i = 0; i < t.v.rows(); ++i)
            for (int64_t j = 0; j < t.v.cols(); ++j) t.v(i, j) = rng.uniform(-limit, limit);
    };

    m.attn_v_ = Tensor("mil.attn_v", L, d);
    m.attn_u_ = Tensor("mil.attn_u", L, d);
    m.attn_w_ = Tensor("mil.attn_w", m.cfg_.n_branch, L);
    m.cls_w_ = Tensor("mil.cls_w", 2, d);
    m.cls_b_ = Tensor("mil.cls_b", 2, 1);
    fill(m.attn_v_, 1.0 / std::sqrt(static_cast<double>(d)));
    fill(m.attn_u_, 1.0 / std::sqrt(static_cast<double>(d)));
    fill(m.attn_w_, 1.0 / std::sqrt(static_cast<double>(L)));
    fill(m.cls_w_, 1.0 / std::sqrt(static_cast<double>(d)));
    return m;
}

MILOutput MilModel::forward(const Eigen::MatrixXd& z, const Mask& mask, bool training,
                            Rng* rng, Workspace& ws) const {
    const auto K = z.rows();
    require(z.cols() == cfg_.input_dim, ErrorCode::shape_mismatch, "mil: input dim mismatch");
    require(static_cast<int64_t>(mask.size()) == K, ErrorCode::shape_mismatch,
            "mil: mask length mismatch");

    std::vector<int64_t> valid;
    valid.reserve(mask.size());
    for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) valid.push_back(static_cast<int64_t>(i));
    require(!valid.empty(), ErrorCode::bad_argument, "mil: no valid instances");

    const int n_branch = cfg_.n_branch;
    ws.z = z;
    ws.tanh_t = (z * attn_v_.v.transpose()).array().tanh();
    ws.sig_g = (1.0 / (1.0 + (-(z * attn_u_.v.transpose())).array().exp()));
    ws.gated = ws.tanh_t.cwiseProduct(ws.sig_g);
    const Eigen::MatrixXd scores = ws.gated * attn_w_.v.transpose();  // K x n_branch

    ws.support.assign(static_cast<size_t>(n_branch), {});
    ws.attn = Eigen::MatrixXd::Zero(n_branch, K);

    const bool stochastic = training && cfg_.mask_rate > 0.0 && valid.size() >= 2;
    for (int b = 0; b < n_branch; ++b) {
        auto& support = ws.support[static_cast<size_t>(b)];
        support = valid;
        if (stochastic) {
            require(rng != nullptr, ErrorCode::bad_argument,
                    "mil: training with mask_rate > 0 requires an rng");
            if (rng->uniform() < cfg_.mask_rate) {
                size_t top_pos = 0;
                for (size_t i = 1; i < support.size(); ++i)
                    if (scores(support[i], b) > scores(support[top_pos], b)) top_pos = i;
                support.erase(support.begin() + static_cast<int64_t>(top_pos));
            }
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t i : support) mx = std::max(mx, scores(i, b));
        double denom = 0.0;
        for (int64_t i : support) denom += std::exp(scores(i, b) - mx);
        for (int64_t i : support) ws.attn(b, i) = std::exp(scores(i, b) - mx) / denom;
    }

    ws.branch_embed = ws.attn * z;                       // n_branch x d
    ws.embedding = ws.branch_embed.colwise().mean();     // d

    MILOutput out;
    out.embedding = ws.embedding;
    out.attention = ws.attn;
    out.logits = cls_w_.v * ws.embedding + cls_b_.v.col(0);

    ws.diversity = 0.0;
    if (cfg_.kind == MilKind::acmil) {
        if (n_branch >= 2) {
            double sum = 0.0;
            int pairs = 0;
            Eigen::RowVectorXd da;
            for (int a = 0; a < n_branch; ++a) {
                for (int b = a + 1; b < n_branch; ++b) {
                    double c = 0.0;
                    cosine_pair_grad(ws.attn.row(a), ws.attn.row(b), c, da);
                    sum += c;
                    ++pairs;
                }
            }
            ws.diversity = sum / pairs;
        }
        out.aux["diversity"] = ws.diversity;
    }
    return out;
}

MILOutput MilModel::forward(const Eigen::MatrixXd& z, const Mask& mask) const {
    Workspace ws;
    return forward(z, mask, false, nullptr, ws);
}

Eigen::MatrixXd MilModel::backward(const Eigen::Vector2d& dlogits,
                                   const Eigen::VectorXd& dembed, double ddiversity,
                                   const Workspace& ws, bool accumulate_param_grads) {
    const auto K = ws.z.rows();
    const int n_branch = cfg_.n_branch;

    Eigen::VectorXd dembed_total = cls_w_.v.transpose() * dlogits;
    if (dembed.size() > 0) dembed_total += dembed;
    if (accumulate_param_grads) {
        cls_w_.g += dlogits * ws.embedding.transpose();
        cls_b_.g.col(0) += dlogits;
    }

    // embedding = mean over branches of branch_embed
    const Eigen::RowVectorXd dbranch_row = dembed_total.transpose() / n_branch;

    // d attn from pooling: dattn(b,i) = dbranch_b . z_i
    Eigen::MatrixXd dattn = Eigen::MatrixXd::Zero(n_branch, K);
    for (int b = 0; b < n_branch; ++b) dattn.row(b) = dbranch_row * ws.z.transpose();

    // d attn from the diversity penalty
    if (ddiversity != 0.0 && n_branch >= 2) {
        const double pair_scale = ddiversity / (n_branch * (n_branch - 1) / 2);
        Eigen::RowVectorXd da, db;
        for (int a = 0; a < n_branch; ++a) {
            for (int b = a + 1; b < n_branch; ++b) {
                double c = 0.0;
                cosine_pair_grad(ws.attn.row(a), ws.attn.row(b), c, da);
                dattn.row(a) += pair_scale * da;
                cosine_pair_grad(ws.attn.row(b), ws.attn.row(a), c, db);
                dattn.row(b) += pair_scale * db;
            }
        }
    }

    // pooling path into instances
    Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(K, cfg_.input_dim);
    for (int b = 0; b < n_branch; ++b)
        for (int64_t i = 0; i < K; ++i)
            if (ws.attn(b, i) != 0.0) dz.row(i) += ws.attn(b, i) * dbranch_row;

    // softmax backward per branch, restricted to its support
    Eigen::MatrixXd dscores = Eigen::MatrixXd::Zero(K, n_branch);
    for (int b = 0; b < n_branch; ++b) {
        const auto& support = ws.support[static_cast<size_t>(b)];
        double dot = 0.0;
        for (int64_t i : support) dot += ws.attn(b, i) * dattn(b, i);
        for (int64_t i : support) dscores(i, b) = ws.attn(b, i) * (dattn(b, i) - dot);
    }

    // gated attention trunk
    const Eigen::MatrixXd dgated = dscores * attn_w_.v;  // K x L
    if (accumulate_param_grads) attn_w_.g += dscores.transpose() * ws.gated;

    const Eigen::MatrixXd dtanh = dgated.cwiseProduct(ws.sig_g);
    const Eigen::MatrixXd dsig = dgated.cwiseProduct(ws.tanh_t);
    const Eigen::MatrixXd dpre_t =
        dtanh.cwiseProduct((1.0 - ws.tanh_t.array().square()).matrix());
    const Eigen::MatrixXd dpre_g = dsig.cwiseProduct(
        (ws.sig_g.array() * (1.0 - ws.sig_g.array())).matrix());

    if (accumulate_param_grads) {
        attn_v_.g += dpre_t.transpose() * ws.z;
        attn_u_.g += dpre_g.transpose() * ws.z;
    }
    dz += dpre_t * attn_v_.v + dpre_g * attn_u_.v;
    return dz;
}

TensorList MilModel::params() {
    return {&attn_v_, &attn_u_, &attn_w_, &cls_w_, &cls_b_};
}

double positive_probability(const Eigen::Vector2d& logits) {
    const double mx = logits.maxCoeff();
    const double e0 = std::exp(logits(0) - mx);
    const double e1 = std::exp(logits(1) - mx);
    return e1 / (e0 + e1);
}

SupervisedLoss supervised_loss(const MILOutput& out, int target,
                               const Eigen::Vector2d& class_weights, double diversity_coef) {
    require(target == 0 || target == 1, ErrorCode::bad_value,
            "supervised_loss: target must be 0 or 1");

    const double mx = out.logits.maxCoeff();
    const Eigen::Vector2d shifted = out.logits.array() - mx;
    const Eigen::Vector2d exps = shifted.array().exp();
    const double denom = exps.sum();
    const Eigen::Vector2d probs = exps / denom;

    const double w = class_weights(target);
    SupervisedLoss loss;
    loss.ce = -w * (shifted(target) - std::log(denom));
    loss.value = loss.ce;
    loss.dlogits = w * probs;
    loss.dlogits(target) -= w;

    auto it = out.aux.find("diversity");
    if (it != out.aux.end() && diversity_coef != 0.0) {
        loss.value += diversity_coef * it->second;
        loss.ddiversity = diversity_coef;
    }
    return loss;
}

}  // namespace dassl
