#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "nbvae/common.hpp"
#include "nbvae/diff.hpp"
#include "nbvae/gradcheck.hpp"

using namespace nbvae;
using diff::Matrix;
using diff::Node;
using diff::Tape;

namespace {

// central finite differences of a scalar-valued rebuildable graph w.r.t.
// one parameter, compared against one reverse sweep
double worst_fd_error(diff::Parameter& p, const std::function<double()>& eval,
                      const std::function<void()>& run_backward) {
    p.zero_grad();
    run_backward();
    const double h = 1e-5;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) {
        for (Eigen::Index j = 0; j < p.value.cols(); ++j) {
            const double saved = p.value(i, j);
            p.value(i, j) = saved + h;
            const double up = eval();
            p.value(i, j) = saved - h;
            const double down = eval();
            p.value(i, j) = saved;
            const double fd = (up - down) / (2.0 * h);
            worst = std::max(worst, std::abs(p.grad(i, j) - fd) / std::max(1.0, std::abs(fd)));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("affine identity and hand arithmetic") {
    Tape t;
    Node* x = t.constant((Matrix(1, 2) << 1.0, 2.0).finished());
    Node* w = t.constant((Matrix(2, 2) << 1.0, 0.0, 0.0, 1.0).finished());
    Node* b = t.constant(Matrix::Zero(1, 2));
    Node* out = t.affine(x, w, b);
    CHECK(out->value(0, 0) == 1.0);
    CHECK(out->value(0, 1) == 2.0);

    Tape t2;
    Node* x2 = t2.constant((Matrix(1, 2) << 1.0, 1.0).finished());
    Node* w2 = t2.constant((Matrix(2, 2) << 2.0, 3.0, 4.0, 5.0).finished());
    Node* b2 = t2.constant((Matrix(1, 2) << 1.0, 1.0).finished());
    Node* out2 = t2.affine(x2, w2, b2);
    CHECK(out2->value(0, 0) == 7.0);
    CHECK(out2->value(0, 1) == 9.0);
}

TEST_CASE("affine wants agreeing shapes") {
    Tape t;
    Node* x = t.constant(Matrix::Zero(2, 3));
    Node* w = t.constant(Matrix::Zero(4, 2));
    Node* b = t.constant(Matrix::Zero(1, 2));
    CHECK_THROWS_AS(t.affine(x, w, b), DimensionError);
    Node* w_ok = t.constant(Matrix::Zero(3, 2));
    Node* b_bad = t.constant(Matrix::Zero(1, 3));
    CHECK_THROWS_AS(t.affine(x, w_ok, b_bad), DimensionError);
}

TEST_CASE("affine gradients match finite differences") {
    RandomStream rng(17);
    diff::Parameter x("x", Matrix::NullaryExpr(3, 2, [&] { return 2.0 * rng.uniform() - 1.0; }));
    diff::Parameter w("w", Matrix::NullaryExpr(2, 4, [&] { return 2.0 * rng.uniform() - 1.0; }));
    diff::Parameter b("b", Matrix::NullaryExpr(1, 4, [&] { return 2.0 * rng.uniform() - 1.0; }));

    auto eval = [&] {
        Tape t;
        return t.sum_all(t.affine(t.leaf(x), t.leaf(w), t.leaf(b)))->scalar();
    };
    auto backward = [&] {
        Tape t;
        t.backward(t.sum_all(t.affine(t.leaf(x), t.leaf(w), t.leaf(b))));
    };
    for (diff::Parameter* p : {&x, &w, &b}) {
        x.zero_grad();
        w.zero_grad();
        b.zero_grad();
        CHECK(worst_fd_error(*p, eval, backward) < 1e-6);
    }
}

TEST_CASE("elementwise closed forms") {
    Tape t;
    Node* zero = t.constant(Matrix::Zero(1, 1));
    CHECK(t.sigmoid(zero)->value(0, 0) == doctest::Approx(0.5));
    CHECK(t.softplus(zero)->value(0, 0) == doctest::Approx(0.6931471805599453));
    Node* one = t.constant(Matrix::Ones(1, 1));
    CHECK(t.lgamma(one)->value(0, 0) == doctest::Approx(0.0));
    CHECK(t.exp(zero)->value(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("elementwise domain violations name the op and index") {
    Tape t;
    Node* bad = t.constant((Matrix(1, 2) << 1.0, -2.0).finished());
    CHECK_THROWS_WITH_AS(t.log(bad), doctest::Contains("log"), NumericDomainError);
    CHECK_THROWS_WITH_AS(t.sqrt(bad), doctest::Contains("(0, 1)"), NumericDomainError);
    CHECK_THROWS_AS(t.lgamma(bad), NumericDomainError);
    Node* nonneg = t.constant((Matrix(1, 1) << 0.5).finished());
    CHECK_THROWS_AS(t.log1mexp(nonneg), NumericDomainError);
}

TEST_CASE("exp clamps its input at 30") {
    Tape t;
    Node* big = t.constant((Matrix(1, 1) << 100.0).finished());
    CHECK(t.exp(big)->value(0, 0) == doctest::Approx(std::exp(30.0)));
}

TEST_CASE("exp gradient is zero in the clamped region") {
    diff::Parameter p("x", (Matrix(1, 2) << 1.0, 50.0).finished());
    Tape t;
    Node* loss = t.sum_all(t.exp(t.leaf(p)));
    t.backward(loss);
    CHECK(p.grad(0, 0) == doctest::Approx(std::exp(1.0)));
    CHECK(p.grad(0, 1) == 0.0);
}

TEST_CASE("sigmoid output is clamped away from 0 and 1") {
    Tape t;
    Node* x = t.constant((Matrix(1, 2) << -100.0, 100.0).finished());
    Node* s = t.sigmoid(x);
    CHECK(s->value(0, 0) == 1e-7);
    CHECK(s->value(0, 1) == 1.0 - 1e-7);
    // log of the clamped output stays finite
    CHECK(std::isfinite(t.log(s)->value(0, 0)));
}

TEST_CASE("elementwise gradients match finite differences") {
    // the per-op sweep of the gradcheck harness at a few seeds
    GradCheckOptions options;
    options.seeds = 5;
    for (const auto& result : run_gradient_checks(options)) {
        INFO(result.op);
        CHECK(result.pass);
    }
}

TEST_CASE("reduce closed forms") {
    Tape t;
    Node* x = t.constant((Matrix(2, 2) << 1.0, 2.0, 3.0, 4.0).finished());
    CHECK(t.sum_all(x)->value(0, 0) == 10.0);
    Node* c = t.constant(Matrix::Constant(3, 4, 2.5));
    CHECK(t.mean_all(c)->value(0, 0) == doctest::Approx(2.5));
    Node* cols = t.sum_cols(x);
    CHECK(cols->rows() == 2);
    CHECK(cols->cols() == 1);
    CHECK(cols->value(0, 0) == 3.0);
    CHECK(cols->value(1, 0) == 7.0);
    Node* rows = t.sum_rows(x);
    CHECK(rows->rows() == 1);
    CHECK(rows->value(0, 0) == 4.0);
    CHECK(rows->value(0, 1) == 6.0);
}

TEST_CASE("gradient of a sum is all ones") {
    diff::Parameter p("x", Matrix::Constant(2, 3, 1.5));
    Tape t;
    t.backward(t.sum_all(t.leaf(p)));
    CHECK(p.grad.isApprox(Matrix::Ones(2, 3)));
}

TEST_CASE("backward: loss = sum(square(x)) gives 2x") {
    diff::Parameter p("x", (Matrix(1, 3) << 1.0, -2.0, 0.5).finished());
    Tape t;
    t.backward(t.sum_all(t.square(t.leaf(p))));
    CHECK(p.grad(0, 0) == doctest::Approx(2.0));
    CHECK(p.grad(0, 1) == doctest::Approx(-4.0));
    CHECK(p.grad(0, 2) == doctest::Approx(1.0));
}

TEST_CASE("backward sums gradients across a diamond") {
    // loss = sum(x * x + x): d/dx = 2x + 1 through two paths
    diff::Parameter p("x", (Matrix(1, 2) << 3.0, -1.0).finished());
    Tape t;
    Node* leaf = t.leaf(p);
    t.backward(t.sum_all(t.add(t.mul(leaf, leaf), leaf)));
    CHECK(p.grad(0, 0) == doctest::Approx(7.0));
    CHECK(p.grad(0, 1) == doctest::Approx(-1.0));
}

TEST_CASE("backward contract: scalar loss only, one sweep per tape") {
    diff::Parameter p("x", Matrix::Ones(2, 2));
    Tape t;
    Node* leaf = t.leaf(p);
    CHECK_THROWS_AS(t.backward(leaf), ContractError);
    Node* loss = t.sum_all(leaf);
    t.backward(loss);
    CHECK_THROWS_WITH_AS(t.backward(loss), doctest::Contains("already"), ContractError);
}

TEST_CASE("log_softmax rows are normalized and shift-invariant") {
    Tape t;
    Node* x = t.constant((Matrix(1, 3) << 1.0, 0.0, -1.0).finished());
    Node* ls = t.log_softmax_rows(x);
    CHECK(ls->value.array().exp().sum() == doctest::Approx(1.0).epsilon(1e-12));

    Node* shifted = t.constant((Matrix(1, 3) << 101.0, 100.0, 99.0).finished());
    Node* ls2 = t.log_softmax_rows(shifted);
    CHECK((ls->value - ls2->value).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("parameter leaves accumulate into Parameter::grad") {
    diff::Parameter p("x", Matrix::Constant(1, 1, 2.0));
    Tape t;
    // use the same parameter twice: gradients add
    Node* a = t.leaf(p);
    Node* b = t.leaf(p);
    t.backward(t.sum_all(t.mul(a, b)));
    CHECK(p.grad(0, 0) == doctest::Approx(4.0));  // d(x^2)/dx
}
