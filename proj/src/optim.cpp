#include "dassl/optim.hpp"

namespace dassl {

void SgdMomentum::step(const TensorList& params) {
    for (auto* p : params) {
        auto it = velocity_.find(p->name);
        if (it == velocity_.end())
            it = velocity_.emplace(p->name, Eigen::MatrixXd::Zero(p->v.rows(), p->v.cols()))
                     .first;
        it->second = momentum_ * it->second + p->g;
        p->v -= lr_ * it->second;
    }
}

void Adam::step(const TensorList& params) {
    for (auto* p : params) {
        auto it = state_.find(p->name);
        if (it == state_.end()) {
            State s;
            s.m = Eigen::MatrixXd::Zero(p->v.rows(), p->v.cols());
            s.v = Eigen::MatrixXd::Zero(p->v.rows(), p->v.cols());
            it = state_.emplace(p->name, std::move(s)).first;
        }
        State& s = it->second;
        s.t += 1;
        s.m = beta1_ * s.m + (1.0 - beta1_) * p->g;
        s.v = beta2_ * s.v + (1.0 - beta2_) * p->g.cwiseProduct(p->g);
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
        const Eigen::MatrixXd m_hat = s.m / bc1;
        const Eigen::MatrixXd v_hat = s.v / bc2;
        p->v -= lr_ * (m_hat.array() / (v_hat.array().sqrt() + eps_)).matrix();
    }
}

}  // namespace dassl
