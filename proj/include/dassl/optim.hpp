#pragma once
// Optimizers. State is keyed by tensor name so it can round-trip through
// checkpoints bit-exactly.

#include <cstdint>
#include <map>
#include <string>

#include "dassl/param.hpp"

namespace dassl {

class SgdMomentum {
public:
    explicit SgdMomentum(double lr, double momentum = 0.9) : lr_(lr), momentum_(momentum) {}

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    double momentum() const { return momentum_; }

    // v <- momentum*v + g ; p <- p - lr*v
    void step(const TensorList& params);

    std::map<std::string, Eigen::MatrixXd>& velocity() { return velocity_; }
    const std::map<std::string, Eigen::MatrixXd>& velocity() const { return velocity_; }

private:
    double lr_;
    double momentum_;
    std::map<std::string, Eigen::MatrixXd> velocity_;
};

class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void step(const TensorList& params);

    struct State {
        Eigen::MatrixXd m;
        Eigen::MatrixXd v;
        int64_t t = 0;
    };

    std::map<std::string, State>& state() { return state_; }
    const std::map<std::string, State>& state() const { return state_; }

private:
    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
    std::map<std::string, State> state_;
};

// Base learning rate scaled by the half-cosine schedule over total epochs.
inline double cosine_lr(double base_lr, int64_t epoch, int64_t total_epochs) {
    if (total_epochs <= 1) return base_lr;
    const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * t));
}

}  // namespace dassl
