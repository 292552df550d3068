#pragma once
// Shared helpers for the unit and acceptance suites.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dassl/bag.hpp"
#include "dassl/param.hpp"
#include "dassl/rng.hpp"

namespace dassl::test {

// Unique scratch directory, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("dassl_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string str() const { return path_.string(); }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline FeatureBag random_bag(int n, int d, uint64_t seed, int target = 0,
                             const std::string& slide_id = "S1",
                             const std::string& patient_id = "P1") {
    Rng rng(seed);
    FeatureBag bag;
    bag.slide_id = slide_id;
    bag.patient_id = patient_id;
    bag.center_id = "C0";
    bag.target = target;
    bag.features.resize(n, d);
    bag.coords.resize(n, 2);
    bag.patch_class.assign(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j)
            bag.features(i, j) = static_cast<float>(rng.normal());
        bag.coords(i, 0) = static_cast<float>(rng.uniform(0.0, 1000.0));
        bag.coords(i, 1) = static_cast<float>(rng.uniform(0.0, 1000.0));
    }
    return bag;
}

inline Eigen::MatrixXd random_matrix(int64_t rows, int64_t cols, uint64_t seed,
                                     double scale = 1.0) {
    Rng rng(seed);
    Eigen::MatrixXd m(rows, cols);
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
    return m;
}

inline void randomize_params(const TensorList& params, uint64_t seed, double scale = 0.3) {
    Rng rng(seed);
    for (auto* t : params)
        for (int64_t i = 0; i < t->v.rows(); ++i)
            for (int64_t j = 0; j < t->v.cols(); ++j) t->v(i, j) = scale * rng.normal();
}

inline Tensor* find_param(const TensorList& params, const std::string& name) {
    for (auto* t : params)
        if (t->name == name) return t;
    return nullptr;
}

// Central finite differences against already-accumulated analytic gradients.
// Returns the worst relative error over all parameter entries.
inline double gradcheck(const TensorList& params, const std::function<double()>& loss_fn,
                        double h = 1e-6) {
    double worst = 0.0;
    for (auto* t : params) {
        for (int64_t i = 0; i < t->v.rows(); ++i) {
            for (int64_t j = 0; j < t->v.cols(); ++j) {
                const double saved = t->v(i, j);
                t->v(i, j) = saved + h;
                const double up = loss_fn();
                t->v(i, j) = saved - h;
                const double down = loss_fn();
                t->v(i, j) = saved;
                const double fd = (up - down) / (2.0 * h);
                const double an = t->g(i, j);
                const double denom = std::max({1e-6, std::abs(fd), std::abs(an)});
                worst = std::max(worst, std::abs(fd - an) / denom);
            }
        }
    }
    return worst;
}

// Same idea for an input matrix whose analytic gradient is already known.
inline double gradcheck_input(Eigen::MatrixXd& x, const Eigen::MatrixXd& analytic,
                              const std::function<double()>& loss_fn, double h = 1e-6) {
    double worst = 0.0;
    for (int64_t i = 0; i < x.rows(); ++i) {
        for (int64_t j = 0; j < x.cols(); ++j) {
            const double saved = x(i, j);
            x(i, j) = saved + h;
            const double up = loss_fn();
            x(i, j) = saved - h;
            const double down = loss_fn();
            x(i, j) = saved;
            const double fd = (up - down) / (2.0 * h);
            const double an = analytic(i, j);
            const double denom = std::max({1e-6, std::abs(fd), std::abs(an)});
            worst = std::max(worst, std::abs(fd - an) / denom);
        }
    }
    return worst;
}

}  // namespace dassl::test
