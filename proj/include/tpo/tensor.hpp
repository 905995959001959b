// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff over small dense matrices. Every tensor is a
// row-major (rows, cols) block of doubles; ops record a backward closure
// on a tape that is replayed in reverse topological order.

#ifndef TPO_TENSOR_HPP
#define TPO_TENSOR_HPP

#include <Eigen/Dense>

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace tpo {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

struct Tensor {
    Mat value;
    Mat grad;
    bool requires_grad{false};
    std::vector<TensorPtr> parents;
    std::function<void()> backprop;

    Tensor() = default;
    explicit Tensor(Mat v, bool rg = false) : value(std::move(v)), requires_grad(rg) {}

    Eigen::Index rows() const { return value.rows(); }
    Eigen::Index cols() const { return value.cols(); }
    Eigen::Index size() const { return value.size(); }

    void ensure_grad() {
        if (grad.rows() != value.rows() || grad.cols() != value.cols())
            grad = Mat::Zero(value.rows(), value.cols());
    }
    void zero_grad() { grad = Mat::Zero(value.rows(), value.cols()); }

    double item() const {
        assert(size() == 1);
        return value(0, 0);
    }

    static TensorPtr create(Mat v, bool rg = false) {
        return std::make_shared<Tensor>(std::move(v), rg);
    }
    static TensorPtr zeros(Eigen::Index r, Eigen::Index c, bool rg = false) {
        return create(Mat::Zero(r, c), rg);
    }
    static TensorPtr scalar(double v) { return create(Mat::Constant(1, 1, v)); }
    static TensorPtr randn(Eigen::Index r, Eigen::Index c, double stddev,
                           std::mt19937_64& rng, bool rg = false) {
        std::normal_distribution<double> dist(0.0, stddev);
        Mat m(r, c);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
        return create(std::move(m), rg);
    }
};

namespace detail {

inline bool track(std::initializer_list<const TensorPtr*> ps) {
    for (const TensorPtr* p : ps)
        if (*p && (*p)->requires_grad) return true;
    return false;
}

// Wires up a result node: parents + backward closure, only when gradients
// are actually needed on the path.
inline TensorPtr make_node(Mat value, std::vector<TensorPtr> parents,
                           std::function<void()> backprop) {
    bool need = false;
    for (const auto& p : parents)
        if (p->requires_grad) { need = true; break; }
    TensorPtr out = Tensor::create(std::move(value), need);
    if (need) {
        out->parents = std::move(parents);
        out->backprop = std::move(backprop);
    }
    return out;
}

}  // namespace detail

inline void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->rows() != b->rows() || a->cols() != b->cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

inline TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "add");
    TensorPtr out = detail::make_node(a->value + b->value, {a, b}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *br = b.get(), *o = out.get();
        out->backprop = [ar, br, o]() {
            if (ar->requires_grad) { ar->ensure_grad(); ar->grad += o->grad; }
            if (br->requires_grad) { br->ensure_grad(); br->grad += o->grad; }
        };
    }
    return out;
}

inline TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "sub");
    TensorPtr out = detail::make_node(a->value - b->value, {a, b}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *br = b.get(), *o = out.get();
        out->backprop = [ar, br, o]() {
            if (ar->requires_grad) { ar->ensure_grad(); ar->grad += o->grad; }
            if (br->requires_grad) { br->ensure_grad(); br->grad -= o->grad; }
        };
    }
    return out;
}

inline TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "mul");
    TensorPtr out = detail::make_node(a->value.cwiseProduct(b->value), {a, b}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *br = b.get(), *o = out.get();
        out->backprop = [ar, br, o]() {
            if (ar->requires_grad) { ar->ensure_grad(); ar->grad += o->grad.cwiseProduct(br->value); }
            if (br->requires_grad) { br->ensure_grad(); br->grad += o->grad.cwiseProduct(ar->value); }
        };
    }
    return out;
}

inline TensorPtr scale(const TensorPtr& a, double s) {
    TensorPtr out = detail::make_node(a->value * s, {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o, s]() { ar->ensure_grad(); ar->grad += o->grad * s; };
    }
    return out;
}

inline TensorPtr add_scalar(const TensorPtr& a, double s) {
    TensorPtr out = detail::make_node(a->value.array() + s, {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o]() { ar->ensure_grad(); ar->grad += o->grad; };
    }
    return out;
}

// b is a (1, n) row broadcast over every row of a.
inline TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& b) {
    if (b->rows() != 1 || b->cols() != a->cols())
        throw std::invalid_argument("add_rowvec: expected (1, cols) bias");
    Mat v = a->value.rowwise() + b->value.row(0);
    TensorPtr out = detail::make_node(std::move(v), {a, b}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *br = b.get(), *o = out.get();
        out->backprop = [ar, br, o]() {
            if (ar->requires_grad) { ar->ensure_grad(); ar->grad += o->grad; }
            if (br->requires_grad) { br->ensure_grad(); br->grad.row(0) += o->grad.colwise().sum(); }
        };
    }
    return out;
}

// b is a (1, n) row factor broadcast over every row of a.
inline TensorPtr mul_rowvec(const TensorPtr& a, const TensorPtr& b) {
    if (b->rows() != 1 || b->cols() != a->cols())
        throw std::invalid_argument("mul_rowvec: expected (1, cols) factor");
    Mat v = (a->value.array().rowwise() * b->value.row(0).array()).matrix();
    TensorPtr out = detail::make_node(std::move(v), {a, b}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *br = b.get(), *o = out.get();
        out->backprop = [ar, br, o]() {
            if (ar->requires_grad) {
                ar->ensure_grad();
                ar->grad.array() += o->grad.array().rowwise() * br->value.row(0).array();
            }
            if (br->requires_grad) {
                br->ensure_grad();
                br->grad.row(0).array() += (o->grad.array() * ar->value.array()).colwise().sum();
            }
        };
    }
    return out;
}

// Pure data-layout permutation: out flat element i takes a's flat element
// src_flat[i]. Every source index must appear exactly once for gradients
// to mean anything; used for transposed-convolution reshapes.
inline TensorPtr remap(const TensorPtr& a, Eigen::Index out_rows, Eigen::Index out_cols,
                       const std::vector<Eigen::Index>& src_flat) {
    if (static_cast<Eigen::Index>(src_flat.size()) != out_rows * out_cols)
        throw std::invalid_argument("remap: index count mismatch");
    const double* src = a->value.data();
    Mat v(out_rows, out_cols);
    double* dst = v.data();
    for (size_t i = 0; i < src_flat.size(); ++i) dst[i] = src[src_flat[i]];
    TensorPtr out = detail::make_node(std::move(v), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o, src_flat]() {
            ar->ensure_grad();
            double* g = ar->grad.data();
            const double* og = o->grad.data();
            for (size_t i = 0; i < src_flat.size(); ++i) g[src_flat[i]] += og[i];
        };
    }
    return out;
}

inline TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->cols() != b->rows()) throw std::invalid_argument("matmul: inner dims differ");
    TensorPtr out = detail::make_node(a->value * b->value, {a, b}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *br = b.get(), *o = out.get();
        out->backprop = [ar, br, o]() {
            if (ar->requires_grad) { ar->ensure_grad(); ar->grad.noalias() += o->grad * br->value.transpose(); }
            if (br->requires_grad) { br->ensure_grad(); br->grad.noalias() += ar->value.transpose() * o->grad; }
        };
    }
    return out;
}

inline TensorPtr transpose(const TensorPtr& a) {
    TensorPtr out = detail::make_node(a->value.transpose(), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o]() { ar->ensure_grad(); ar->grad += o->grad.transpose(); };
    }
    return out;
}

inline TensorPtr relu(const TensorPtr& a) {
    TensorPtr out = detail::make_node(a->value.cwiseMax(0.0), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o]() {
            ar->ensure_grad();
            ar->grad.array() += o->grad.array() * (ar->value.array() > 0.0).cast<double>();
        };
    }
    return out;
}

// tanh approximation of the Gaussian error linear unit.
inline TensorPtr gelu(const TensorPtr& a) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    Eigen::ArrayXXd x = a->value.array();
    Eigen::ArrayXXd inner = k * (x + 0.044715 * x.cube());
    Eigen::ArrayXXd t = inner.tanh();
    Mat v = (0.5 * x * (1.0 + t)).matrix();
    TensorPtr out = detail::make_node(std::move(v), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o, k]() {
            ar->ensure_grad();
            Eigen::ArrayXXd x2 = ar->value.array();
            Eigen::ArrayXXd inner2 = k * (x2 + 0.044715 * x2.cube());
            Eigen::ArrayXXd t2 = inner2.tanh();
            Eigen::ArrayXXd dinner = k * (1.0 + 3.0 * 0.044715 * x2.square());
            Eigen::ArrayXXd d = 0.5 * (1.0 + t2) + 0.5 * x2 * (1.0 - t2.square()) * dinner;
            ar->grad.array() += o->grad.array() * d;
        };
    }
    return out;
}

inline TensorPtr sigmoid(const TensorPtr& a) {
    Mat v = (1.0 / (1.0 + (-a->value.array()).exp())).matrix();
    TensorPtr out = detail::make_node(std::move(v), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o]() {
            ar->ensure_grad();
            Eigen::ArrayXXd s = o->value.array();
            ar->grad.array() += o->grad.array() * s * (1.0 - s);
        };
    }
    return out;
}

inline TensorPtr tanh_op(const TensorPtr& a) {
    Mat v = a->value.array().tanh().matrix();
    TensorPtr out = detail::make_node(std::move(v), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o]() {
            ar->ensure_grad();
            ar->grad.array() += o->grad.array() * (1.0 - o->value.array().square());
        };
    }
    return out;
}

inline TensorPtr square(const TensorPtr& a) {
    TensorPtr out = detail::make_node(a->value.array().square().matrix(), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o]() {
            ar->ensure_grad();
            ar->grad.array() += o->grad.array() * 2.0 * ar->value.array();
        };
    }
    return out;
}

inline TensorPtr abs_op(const TensorPtr& a) {
    TensorPtr out = detail::make_node(a->value.array().abs().matrix(), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o]() {
            ar->ensure_grad();
            ar->grad.array() += o->grad.array() * ar->value.array().sign();
        };
    }
    return out;
}

inline TensorPtr log_op(const TensorPtr& a) {
    TensorPtr out = detail::make_node(a->value.array().log().matrix(), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o]() {
            ar->ensure_grad();
            ar->grad.array() += o->grad.array() / ar->value.array();
        };
    }
    return out;
}

inline TensorPtr exp_op(const TensorPtr& a) {
    TensorPtr out = detail::make_node(a->value.array().exp().matrix(), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o]() {
            ar->ensure_grad();
            ar->grad.array() += o->grad.array() * o->value.array();
        };
    }
    return out;
}

inline TensorPtr maximum(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "maximum");
    TensorPtr out = detail::make_node(a->value.cwiseMax(b->value), {a, b}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *br = b.get(), *o = out.get();
        out->backprop = [ar, br, o]() {
            Eigen::ArrayXXd pick_a = (ar->value.array() >= br->value.array()).cast<double>();
            if (ar->requires_grad) { ar->ensure_grad(); ar->grad.array() += o->grad.array() * pick_a; }
            if (br->requires_grad) { br->ensure_grad(); br->grad.array() += o->grad.array() * (1.0 - pick_a); }
        };
    }
    return out;
}

inline TensorPtr minimum(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "minimum");
    TensorPtr out = detail::make_node(a->value.cwiseMin(b->value), {a, b}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *br = b.get(), *o = out.get();
        out->backprop = [ar, br, o]() {
            Eigen::ArrayXXd pick_a = (ar->value.array() <= br->value.array()).cast<double>();
            if (ar->requires_grad) { ar->ensure_grad(); ar->grad.array() += o->grad.array() * pick_a; }
            if (br->requires_grad) { br->ensure_grad(); br->grad.array() += o->grad.array() * (1.0 - pick_a); }
        };
    }
    return out;
}

inline TensorPtr div(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "div");
    TensorPtr out = detail::make_node(a->value.cwiseQuotient(b->value), {a, b}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *br = b.get(), *o = out.get();
        out->backprop = [ar, br, o]() {
            if (ar->requires_grad) {
                ar->ensure_grad();
                ar->grad.array() += o->grad.array() / br->value.array();
            }
            if (br->requires_grad) {
                br->ensure_grad();
                br->grad.array() -= o->grad.array() * ar->value.array() / br->value.array().square();
            }
        };
    }
    return out;
}

// log(1 + exp(x)), computed stably.
inline TensorPtr softplus(const TensorPtr& a) {
    Eigen::ArrayXXd x = a->value.array();
    Mat v = (x.cwiseMax(0.0) + (1.0 + (-x.abs()).exp()).log()).matrix();
    TensorPtr out = detail::make_node(std::move(v), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o]() {
            ar->ensure_grad();
            Eigen::ArrayXXd s = 1.0 / (1.0 + (-ar->value.array()).exp());
            ar->grad.array() += o->grad.array() * s;
        };
    }
    return out;
}

// out(i, 0) = a(i, ids[i]).
inline TensorPtr gather_cols_per_row(const TensorPtr& a, const std::vector<int>& ids) {
    if (static_cast<Eigen::Index>(ids.size()) != a->rows())
        throw std::invalid_argument("gather_cols_per_row: one index per row required");
    Mat v(a->rows(), 1);
    for (Eigen::Index i = 0; i < a->rows(); ++i) {
        if (ids[i] < 0 || ids[i] >= a->cols()) throw std::out_of_range("gather_cols_per_row: id");
        v(i, 0) = a->value(i, ids[i]);
    }
    TensorPtr out = detail::make_node(std::move(v), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o, ids]() {
            ar->ensure_grad();
            for (Eigen::Index i = 0; i < o->rows(); ++i) ar->grad(i, ids[i]) += o->grad(i, 0);
        };
    }
    return out;
}

inline TensorPtr sum(const TensorPtr& a) {
    TensorPtr out = detail::make_node(Mat::Constant(1, 1, a->value.sum()), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o]() { ar->ensure_grad(); ar->grad.array() += o->grad(0, 0); };
    }
    return out;
}

inline TensorPtr mean(const TensorPtr& a) {
    const double n = static_cast<double>(a->size());
    TensorPtr out = detail::make_node(Mat::Constant(1, 1, a->value.sum() / n), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o, n]() { ar->ensure_grad(); ar->grad.array() += o->grad(0, 0) / n; };
    }
    return out;
}

// Mean over rows: (r, c) -> (1, c).
inline TensorPtr mean_rows(const TensorPtr& a) {
    const double n = static_cast<double>(a->rows());
    TensorPtr out = detail::make_node(a->value.colwise().mean(), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o, n]() {
            ar->ensure_grad();
            ar->grad += (Mat::Ones(ar->rows(), 1) * o->grad.row(0)) / n;
        };
    }
    return out;
}

inline TensorPtr slice_rows(const TensorPtr& a, Eigen::Index r0, Eigen::Index n) {
    if (r0 < 0 || n < 0 || r0 + n > a->rows()) throw std::out_of_range("slice_rows");
    TensorPtr out = detail::make_node(a->value.middleRows(r0, n), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o, r0, n]() { ar->ensure_grad(); ar->grad.middleRows(r0, n) += o->grad; };
    }
    return out;
}

inline TensorPtr slice_cols(const TensorPtr& a, Eigen::Index c0, Eigen::Index n) {
    if (c0 < 0 || n < 0 || c0 + n > a->cols()) throw std::out_of_range("slice_cols");
    TensorPtr out = detail::make_node(a->value.middleCols(c0, n), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o, c0, n]() { ar->ensure_grad(); ar->grad.middleCols(c0, n) += o->grad; };
    }
    return out;
}

inline TensorPtr concat_rows(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    Eigen::Index cols = parts[0]->cols(), rows = 0;
    for (const auto& p : parts) {
        if (p->cols() != cols) throw std::invalid_argument("concat_rows: col mismatch");
        rows += p->rows();
    }
    Mat v(rows, cols);
    Eigen::Index r = 0;
    for (const auto& p : parts) { v.middleRows(r, p->rows()) = p->value; r += p->rows(); }
    TensorPtr out = detail::make_node(std::move(v), parts, nullptr);
    if (out->requires_grad) {
        Tensor* o = out.get();
        std::vector<Tensor*> raw;
        raw.reserve(parts.size());
        for (const auto& p : parts) raw.push_back(p.get());
        out->backprop = [raw, o]() {
            Eigen::Index r2 = 0;
            for (Tensor* p : raw) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    p->grad += o->grad.middleRows(r2, p->rows());
                }
                r2 += p->rows();
            }
        };
    }
    return out;
}

inline TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    Eigen::Index rows = parts[0]->rows(), cols = 0;
    for (const auto& p : parts) {
        if (p->rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += p->cols();
    }
    Mat v(rows, cols);
    Eigen::Index c = 0;
    for (const auto& p : parts) { v.middleCols(c, p->cols()) = p->value; c += p->cols(); }
    TensorPtr out = detail::make_node(std::move(v), parts, nullptr);
    if (out->requires_grad) {
        Tensor* o = out.get();
        std::vector<Tensor*> raw;
        for (const auto& p : parts) raw.push_back(p.get());
        out->backprop = [raw, o]() {
            Eigen::Index c2 = 0;
            for (Tensor* p : raw) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    p->grad += o->grad.middleCols(c2, p->cols());
                }
                c2 += p->cols();
            }
        };
    }
    return out;
}

// Row gather: out[i] = table[ids[i]].
inline TensorPtr gather_rows(const TensorPtr& table, const std::vector<int>& ids) {
    Mat v(static_cast<Eigen::Index>(ids.size()), table->cols());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table->rows()) throw std::out_of_range("gather_rows: id");
        v.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
    }
    TensorPtr out = detail::make_node(std::move(v), {table}, nullptr);
    if (out->requires_grad) {
        Tensor *tr = table.get(), *o = out.get();
        out->backprop = [tr, o, ids]() {
            tr->ensure_grad();
            for (size_t i = 0; i < ids.size(); ++i)
                tr->grad.row(ids[i]) += o->grad.row(static_cast<Eigen::Index>(i));
        };
    }
    return out;
}

// Adds a constant (non-differentiated) matrix, e.g. an attention mask.
inline TensorPtr add_const(const TensorPtr& a, const Mat& c) {
    if (a->rows() != c.rows() || a->cols() != c.cols())
        throw std::invalid_argument("add_const: shape mismatch");
    TensorPtr out = detail::make_node(a->value + c, {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o]() { ar->ensure_grad(); ar->grad += o->grad; };
    }
    return out;
}

inline TensorPtr softmax_rows(const TensorPtr& a) {
    Mat v(a->rows(), a->cols());
    for (Eigen::Index i = 0; i < a->rows(); ++i) {
        Eigen::ArrayXd r = a->value.row(i).array();
        r -= r.maxCoeff();
        Eigen::ArrayXd e = r.exp();
        v.row(i) = (e / e.sum()).matrix();
    }
    TensorPtr out = detail::make_node(std::move(v), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o]() {
            ar->ensure_grad();
            for (Eigen::Index i = 0; i < o->value.rows(); ++i) {
                Eigen::ArrayXd s = o->value.row(i).array();
                Eigen::ArrayXd g = o->grad.row(i).array();
                double dot = (s * g).sum();
                ar->grad.row(i).array() += s * (g - dot);
            }
        };
    }
    return out;
}

inline TensorPtr log_softmax_rows(const TensorPtr& a) {
    Mat v(a->rows(), a->cols());
    for (Eigen::Index i = 0; i < a->rows(); ++i) {
        Eigen::ArrayXd r = a->value.row(i).array();
        double m = r.maxCoeff();
        double lse = m + std::log((r - m).exp().sum());
        v.row(i) = (r - lse).matrix();
    }
    TensorPtr out = detail::make_node(std::move(v), {a}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *o = out.get();
        out->backprop = [ar, o]() {
            ar->ensure_grad();
            for (Eigen::Index i = 0; i < o->value.rows(); ++i) {
                Eigen::ArrayXd s = o->value.row(i).array().exp();
                Eigen::ArrayXd g = o->grad.row(i).array();
                ar->grad.row(i).array() += g - s * g.sum();
            }
        };
    }
    return out;
}

// Per-row layer normalization with learned gain/bias (each (1, c)).
inline TensorPtr layer_norm(const TensorPtr& a, const TensorPtr& gain, const TensorPtr& bias,
                            double eps = 1e-5) {
    const Eigen::Index c = a->cols();
    if (gain->cols() != c || bias->cols() != c || gain->rows() != 1 || bias->rows() != 1)
        throw std::invalid_argument("layer_norm: bad gain/bias shape");
    Mat xhat(a->rows(), c);
    Eigen::ArrayXd inv_std(a->rows());
    for (Eigen::Index i = 0; i < a->rows(); ++i) {
        Eigen::ArrayXd r = a->value.row(i).array();
        double mu = r.mean();
        double var = (r - mu).square().mean();
        double is = 1.0 / std::sqrt(var + eps);
        inv_std(i) = is;
        xhat.row(i) = ((r - mu) * is).matrix();
    }
    Mat v = (xhat.array().rowwise() * gain->value.row(0).array()).matrix();
    v.rowwise() += bias->value.row(0);
    TensorPtr out = detail::make_node(std::move(v), {a, gain, bias}, nullptr);
    if (out->requires_grad) {
        Tensor *ar = a.get(), *gr = gain.get(), *br = bias.get(), *o = out.get();
        // keep xhat/inv_std alive for backward
        auto xh = std::make_shared<Mat>(std::move(xhat));
        auto is = std::make_shared<Eigen::ArrayXd>(std::move(inv_std));
        out->backprop = [ar, gr, br, o, xh, is, c]() {
            if (gr->requires_grad) {
                gr->ensure_grad();
                gr->grad.row(0).array() += (o->grad.array() * xh->array()).colwise().sum();
            }
            if (br->requires_grad) {
                br->ensure_grad();
                br->grad.row(0) += o->grad.colwise().sum();
            }
            if (ar->requires_grad) {
                ar->ensure_grad();
                const double n = static_cast<double>(c);
                for (Eigen::Index i = 0; i < o->grad.rows(); ++i) {
                    Eigen::ArrayXd gy = o->grad.row(i).array() * gr->value.row(0).array();
                    Eigen::ArrayXd x = xh->row(i).array();
                    double s1 = gy.sum();
                    double s2 = (gy * x).sum();
                    ar->grad.row(i).array() += (*is)(i) * (gy - s1 / n - x * s2 / n);
                }
            }
        };
    }
    return out;
}

inline void backward(const TensorPtr& root) {
    assert(root->size() == 1);
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> seen;
    std::vector<std::pair<Tensor*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Tensor* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Tensor* t : order) t->ensure_grad();
    root->grad.setConstant(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop();
}

}  // namespace tpo

#endif  // TPO_TENSOR_HPP
