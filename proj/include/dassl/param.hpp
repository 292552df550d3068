#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dassl {

// A named parameter matrix with its gradient accumulator. Vectors are stored
// as n x 1 matrices. All training math runs in double; float32 is only a
// storage format.
struct Tensor {
    std::string name;
    Eigen::MatrixXd v;
    Eigen::MatrixXd g;

    Tensor() = default;
    Tensor(std::string n, int64_t rows, int64_t cols)
        : name(std::move(n)),
          v(Eigen::MatrixXd::Zero(rows, cols)),
          g(Eigen::MatrixXd::Zero(rows, cols)) {}

    void zero_grad() { g.setZero(); }
};

using TensorList = std::vector<Tensor*>;

inline void zero_grads(const TensorList& params) {
    for (auto* t : params) t->zero_grad();
}

}  // namespace dassl
