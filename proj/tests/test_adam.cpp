#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "knowaug/adam.hpp"

using knowaug::AdamConfig;
using knowaug::AdamOptimizer;
using knowaug::Matrix;
using knowaug::ParamGrad;

TEST_CASE("zero gradient leaves parameters unchanged") {
    AdamOptimizer opt;
    Matrix p{{1.0, -2.0}};
    Matrix g = Matrix::zeros(1, 2);
    const Matrix before = p;
    for (int i = 0; i < 5; ++i) opt.apply({{"p", &p, &g}});
    CHECK(p.data == before.data);
}

TEST_CASE("constant gradient update magnitude approaches the learning rate") {
    // Oracle: direct scalar simulation of the moment recursions.
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8, grad = 0.37;
    double m = 0.0, v = 0.0, x_ref = 1.0;
    double last_step = 0.0;
    for (int t = 1; t <= 500; ++t) {
        m = b1 * m + (1 - b1) * grad;
        v = b2 * v + (1 - b2) * grad * grad;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        last_step = lr * mhat / (std::sqrt(vhat) + eps);
        x_ref -= last_step;
    }
    CHECK(std::abs(last_step) == Catch::Approx(lr).margin(1e-6));

    AdamOptimizer opt(AdamConfig{lr, b1, b2, eps});
    Matrix p{{1.0}};
    Matrix g{{grad}};
    for (int t = 0; t < 500; ++t) opt.apply({{"x", &p, &g}});
    CHECK(p(0, 0) == Catch::Approx(x_ref).epsilon(1e-12));
}

TEST_CASE("default learning rate is 5e-4") {
    AdamOptimizer opt;
    CHECK(opt.config().lr == Catch::Approx(5e-4));
    CHECK(opt.config().beta1 == Catch::Approx(0.9));
    CHECK(opt.config().beta2 == Catch::Approx(0.999));
    CHECK(opt.config().eps == Catch::Approx(1e-8));
}

TEST_CASE("non-finite gradient reports the parameter name") {
    AdamOptimizer opt;
    Matrix p{{1.0}};
    Matrix g{{std::nan("")}};
    CHECK_THROWS_WITH(opt.apply({{"w_out", &p, &g}}),
                      Catch::Matchers::ContainsSubstring("w_out"));
}

TEST_CASE("shape mismatch between parameter and gradient is rejected") {
    AdamOptimizer opt;
    Matrix p = Matrix::zeros(2, 2);
    Matrix g = Matrix::zeros(2, 3);
    CHECK_THROWS_AS(opt.apply({{"p", &p, &g}}), knowaug::shape_error);
}
