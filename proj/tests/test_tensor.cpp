// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "tpo/tensor.hpp"

using namespace tpo;

namespace {

// Central finite differences against the analytic gradient for a scalar
// function of one parameter tensor.
template <typename Fn>
double max_rel_grad_err(TensorPtr param, Fn fn, double h = 1e-5) {
    param->requires_grad = true;
    param->zero_grad();
    TensorPtr loss = fn(param);
    REQUIRE(loss->rows() == 1);
    REQUIRE(loss->cols() == 1);
    backward(loss);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < param->rows(); ++i)
        for (Eigen::Index j = 0; j < param->cols(); ++j) {
            const double keep = param->value(i, j);
            param->value(i, j) = keep + h;
            const double up = fn(param)->value(0, 0);
            param->value(i, j) = keep - h;
            const double down = fn(param)->value(0, 0);
            param->value(i, j) = keep;
            const double fd = (up - down) / (2 * h);
            const double an = param->grad(i, j);
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
            worst = std::max(worst, std::abs(fd - an) / denom);
        }
    return worst;
}

Mat random_mat(Eigen::Index r, Eigen::Index c, uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, scale);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = d(rng);
    return m;
}

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
    TensorPtr x = Tensor::create(random_mat(3, 4, 1));
    TensorPtr other = Tensor::create(random_mat(3, 4, 2));

    CHECK(max_rel_grad_err(x, [&](TensorPtr p) { return sum(mul(p, other)); }) < 1e-6);
    CHECK(max_rel_grad_err(x, [&](TensorPtr p) { return sum(square(add(p, other))); }) < 1e-6);
    CHECK(max_rel_grad_err(x, [&](TensorPtr p) { return sum(sigmoid(p)); }) < 1e-6);
    CHECK(max_rel_grad_err(x, [&](TensorPtr p) { return sum(tanh_op(p)); }) < 1e-6);
    CHECK(max_rel_grad_err(x, [&](TensorPtr p) { return sum(gelu(p)); }) < 1e-6);
    CHECK(max_rel_grad_err(x, [&](TensorPtr p) { return sum(softplus(p)); }) < 1e-6);
    CHECK(max_rel_grad_err(x, [&](TensorPtr p) { return sum(exp_op(scale(p, 0.3))); }) < 1e-6);
    CHECK(max_rel_grad_err(x, [&](TensorPtr p) {
              return sum(log_op(add_scalar(square(p), 1.0)));
          }) < 1e-6);
    CHECK(max_rel_grad_err(x, [&](TensorPtr p) { return sum(div(p, add_scalar(square(other), 1.0))); }) <
          1e-6);
    CHECK(max_rel_grad_err(x, [&](TensorPtr p) { return mean(maximum(p, other)); }) < 1e-5);
    CHECK(max_rel_grad_err(x, [&](TensorPtr p) { return mean(minimum(p, other)); }) < 1e-5);
}

TEST_CASE("matmul, transpose and reduction gradients") {
    TensorPtr a = Tensor::create(random_mat(3, 5, 3));
    TensorPtr b = Tensor::create(random_mat(5, 2, 4));

    CHECK(max_rel_grad_err(a, [&](TensorPtr p) { return sum(matmul(p, b)); }) < 1e-6);
    CHECK(max_rel_grad_err(b, [&](TensorPtr p) { return sum(square(matmul(a, p))); }) < 1e-6);
    CHECK(max_rel_grad_err(a, [&](TensorPtr p) { return sum(matmul(transpose(b), transpose(p))); }) <
          1e-6);
    CHECK(max_rel_grad_err(a, [&](TensorPtr p) { return mean(p); }) < 1e-6);
    CHECK(max_rel_grad_err(a, [&](TensorPtr p) { return sum(square(mean_rows(p))); }) < 1e-6);
}

TEST_CASE("softmax, log-softmax and layer norm gradients") {
    TensorPtr x = Tensor::create(random_mat(4, 6, 5));
    TensorPtr g = Tensor::create(random_mat(1, 6, 6, 0.3));
    TensorPtr bias = Tensor::create(random_mat(1, 6, 7, 0.3));
    TensorPtr w = Tensor::create(random_mat(4, 6, 8));

    CHECK(max_rel_grad_err(x, [&](TensorPtr p) { return sum(mul(softmax_rows(p), w)); }) < 1e-5);
    CHECK(max_rel_grad_err(x, [&](TensorPtr p) { return sum(mul(log_softmax_rows(p), w)); }) < 1e-5);
    CHECK(max_rel_grad_err(x, [&](TensorPtr p) { return sum(mul(layer_norm(p, g, bias), w)); }) < 1e-4);
    CHECK(max_rel_grad_err(g, [&](TensorPtr p) { return sum(mul(layer_norm(x, p, bias), w)); }) < 1e-5);
}

TEST_CASE("slicing, concatenation and gather gradients") {
    TensorPtr x = Tensor::create(random_mat(5, 4, 9));

    CHECK(max_rel_grad_err(x, [&](TensorPtr p) { return sum(square(slice_rows(p, 1, 3))); }) < 1e-6);
    CHECK(max_rel_grad_err(x, [&](TensorPtr p) { return sum(square(slice_cols(p, 2, 2))); }) < 1e-6);
    CHECK(max_rel_grad_err(x, [&](TensorPtr p) {
              return sum(square(concat_rows({slice_rows(p, 0, 2), slice_rows(p, 3, 2)})));
          }) < 1e-6);
    CHECK(max_rel_grad_err(x, [&](TensorPtr p) {
              return sum(square(concat_cols({slice_cols(p, 0, 1), slice_cols(p, 1, 3)})));
          }) < 1e-6);
    // repeated gather rows must accumulate
    CHECK(max_rel_grad_err(x, [&](TensorPtr p) {
              return sum(square(gather_rows(p, {0, 2, 2, 4})));
          }) < 1e-6);
    CHECK(max_rel_grad_err(x, [&](TensorPtr p) {
              return scale(gather_cols_per_row(slice_rows(p, 0, 1), {2}), 3.0);
          }) < 1e-6);
}

TEST_CASE("broadcast and remap gradients") {
    TensorPtr x = Tensor::create(random_mat(3, 4, 10));
    TensorPtr row = Tensor::create(random_mat(1, 4, 11));

    CHECK(max_rel_grad_err(x, [&](TensorPtr p) { return sum(square(add_rowvec(p, row))); }) < 1e-6);
    CHECK(max_rel_grad_err(row, [&](TensorPtr p) { return sum(square(add_rowvec(x, p))); }) < 1e-6);
    CHECK(max_rel_grad_err(row, [&](TensorPtr p) { return sum(square(mul_rowvec(x, p))); }) < 1e-6);

    std::vector<Eigen::Index> map = {11, 3, 7, 0, 5, 9};
    CHECK(max_rel_grad_err(x, [&](TensorPtr p) { return sum(square(remap(p, 3, 2, map))); }) < 1e-6);

    // remap is a pure relayout of the chosen sources
    TensorPtr y = remap(x, 2, 3, map);
    CHECK(y->value(0, 0) == x->value.reshaped<Eigen::RowMajor>()(11));
    CHECK(y->value(1, 2) == x->value.reshaped<Eigen::RowMajor>()(9));
}

TEST_CASE("backward accumulates across calls until grads are zeroed") {
    TensorPtr x = Tensor::create(random_mat(2, 2, 12));
    x->requires_grad = true;
    x->zero_grad();
    backward(sum(square(x)));
    Mat once = x->grad;
    backward(sum(square(x)));
    CHECK(x->grad.isApprox(2.0 * once));
    x->zero_grad();
    CHECK(x->grad.isZero());
}

TEST_CASE("shape mismatches are rejected") {
    TensorPtr a = Tensor::create(Mat::Zero(2, 3));
    TensorPtr b = Tensor::create(Mat::Zero(3, 2));
    CHECK_THROWS(add(a, b));
    CHECK_THROWS(mul(a, b));
    CHECK_THROWS(matmul(a, a));
}
