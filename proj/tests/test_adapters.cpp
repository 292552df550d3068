#include <doctest.h>

#include "dassl/adapters.hpp"
#include "support.hpp"

using namespace dassl;
using test::find_param;
using test::gradcheck;
using test::gradcheck_input;
using test::random_matrix;
using test::randomize_params;

namespace {

FeatureAdapter make(AdapterKind kind, int d, int h, int k, uint64_t seed) {
    AdapterConfig cfg;
    cfg.kind = kind;
    cfg.input_dim = d;
    cfg.hidden_dim = h;
    cfg.kernel_size = k;
    return FeatureAdapter::init(cfg, seed);
}

}  // namespace

TEST_CASE("both adapters are exactly the identity at initialization") {
    const Eigen::MatrixXd x = random_matrix(7, 12, 31);
    FeatureAdapter mlp = make(AdapterKind::mlp, 12, 5, 1, 41);
    FeatureAdapter conv = make(AdapterKind::conv1d, 12, 5, 3, 42);
    CHECK((mlp.forward(x) - x).cwiseAbs().maxCoeff() == 0.0);
    CHECK((conv.forward(x) - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adapter initialization is seed-deterministic") {
    FeatureAdapter a = make(AdapterKind::mlp, 6, 3, 1, 7);
    FeatureAdapter b = make(AdapterKind::mlp, 6, 3, 1, 7);
    FeatureAdapter c = make(AdapterKind::mlp, 6, 3, 1, 8);
    CHECK(find_param(a.params(), "adapter.w1.t0")->v ==
          find_param(b.params(), "adapter.w1.t0")->v);
    CHECK(find_param(a.params(), "adapter.w1.t0")->v !=
          find_param(c.params(), "adapter.w1.t0")->v);
}

TEST_CASE("mlp adapter matches the hand-computed 2x2 case") {
    FeatureAdapter mlp = make(AdapterKind::mlp, 2, 2, 1, 50);
    auto params = mlp.params();
    find_param(params, "adapter.w1.t0")->v << 2, 1, 0, 1;
    find_param(params, "adapter.b1")->v << 0.5, -0.5;
    find_param(params, "adapter.w2.t0")->v << 1, 2, -1, 1;
    find_param(params, "adapter.b2")->v << 0.25, -0.25;

    Eigen::MatrixXd x(1, 2);
    x << 1, -1;
    // pre1 = (1.5, -1.5), relu = (1.5, 0), z = x + W2*relu + b2 = (2.75, -2.75)
    const Eigen::MatrixXd z = mlp.forward(x);
    CHECK(z(0, 0) == doctest::Approx(2.75).epsilon(1e-12));
    CHECK(z(0, 1) == doctest::Approx(-2.75).epsilon(1e-12));
}

TEST_CASE("x = 0 with zero biases maps to 0") {
    FeatureAdapter mlp = make(AdapterKind::mlp, 4, 2, 1, 51);
    randomize_params(mlp.params(), 52);
    find_param(mlp.params(), "adapter.b1")->v.setZero();
    find_param(mlp.params(), "adapter.b2")->v.setZero();
    const Eigen::MatrixXd z = mlp.forward(Eigen::MatrixXd::Zero(3, 4));
    CHECK(z.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("kernel-size-1 convolution equals the mlp with shared weights") {
    const int d = 6, h = 3;
    FeatureAdapter mlp = make(AdapterKind::mlp, d, h, 1, 60);
    FeatureAdapter conv = make(AdapterKind::conv1d, d, h, 1, 61);
    randomize_params(mlp.params(), 62);
    // copy the single-tap weights across
    find_param(conv.params(), "adapter.w1.t0")->v = find_param(mlp.params(), "adapter.w1.t0")->v;
    find_param(conv.params(), "adapter.b1")->v = find_param(mlp.params(), "adapter.b1")->v;
    find_param(conv.params(), "adapter.w2.t0")->v = find_param(mlp.params(), "adapter.w2.t0")->v;
    find_param(conv.params(), "adapter.b2")->v = find_param(mlp.params(), "adapter.b2")->v;

    const Eigen::MatrixXd x = random_matrix(9, d, 63);
    CHECK((mlp.forward(x) - conv.forward(x)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("conv adapter is constant over the interior for constant input") {
    const int d = 4, K = 9;
    FeatureAdapter conv = make(AdapterKind::conv1d, d, 3, 3, 70);
    randomize_params(conv.params(), 71);

    Eigen::MatrixXd x(K, d);
    const Eigen::RowVectorXd row = random_matrix(1, d, 72);
    for (int i = 0; i < K; ++i) x.row(i) = row;

    const Eigen::MatrixXd z = conv.forward(x);
    // two stacked kernel-3 convs: edge effects reach 2 rows on each side
    for (int i = 3; i <= K - 3; ++i)
        CHECK((z.row(i) - z.row(2)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((z.row(0) - z.row(2)).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("conv adapter handles K=1 and K smaller than the kernel") {
    FeatureAdapter conv = make(AdapterKind::conv1d, 5, 2, 3, 80);
    randomize_params(conv.params(), 81);
    const Eigen::MatrixXd x1 = random_matrix(1, 5, 82);
    const Eigen::MatrixXd z1 = conv.forward(x1);
    CHECK(z1.rows() == 1);
    const Eigen::MatrixXd x2 = random_matrix(2, 5, 83);
    CHECK(conv.forward(x2).rows() == 2);
}

TEST_CASE("adapter gradients match central finite differences") {
    for (const AdapterKind kind : {AdapterKind::mlp, AdapterKind::conv1d}) {
        const int d = 4, h = 3, K = 5;
        FeatureAdapter ad = make(kind, d, h, kind == AdapterKind::mlp ? 1 : 3, 90);
        randomize_params(ad.params(), 91);

        Eigen::MatrixXd x = random_matrix(K, d, 92);
        const Eigen::MatrixXd weight = random_matrix(K, d, 93);  // fixed projection

        auto loss = [&]() {
            return (ad.forward(x).cwiseProduct(weight)).sum();
        };

        zero_grads(ad.params());
        FeatureAdapter::Workspace ws;
        ad.forward(x, ws);
        const Eigen::MatrixXd dx = ad.backward(weight, ws, true);

        CHECK(gradcheck(ad.params(), loss) < 1e-4);
        CHECK(gradcheck_input(x, dx, loss) < 1e-4);
    }
}

TEST_CASE("invalid adapter configs are rejected") {
    CHECK_THROWS(make(AdapterKind::conv1d, 4, 2, 2, 1));  // even kernel
    CHECK_THROWS(make(AdapterKind::mlp, 0, 2, 1, 1));     // bad dim
    CHECK_THROWS(adapter_kind_from_string("resnet"));
}
