// SPDX-License-Identifier: Apache-2.0
//
// Layer primitives on top of the autodiff tensor: parameter registry,
// linear (optionally LoRA-adapted), layer norm, multi-head attention and
// transformer blocks.

#ifndef TPO_NN_HPP
#define TPO_NN_HPP

#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tpo/tensor.hpp"

namespace tpo {

enum class Act { Gelu, Relu };

inline TensorPtr activate(const TensorPtr& x, Act a) {
    return a == Act::Gelu ? gelu(x) : relu(x);
}

// Ordered name -> tensor registry. Names are hierarchical module paths
// ("lm.block0.attn.wq.W"); the checkpoint format and the freeze maps key
// off the first path segment.
struct ParamStore {
    std::vector<std::string> order;
    std::map<std::string, TensorPtr> params;

    TensorPtr add(const std::string& name, TensorPtr t) {
        if (params.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        t->requires_grad = true;
        params[name] = t;
        order.push_back(name);
        return t;
    }
    TensorPtr randn(const std::string& name, Eigen::Index r, Eigen::Index c, double stddev,
                    std::mt19937_64& rng) {
        return add(name, Tensor::randn(r, c, stddev, rng));
    }
    TensorPtr zeros(const std::string& name, Eigen::Index r, Eigen::Index c) {
        return add(name, Tensor::zeros(r, c));
    }
    TensorPtr ones(const std::string& name, Eigen::Index r, Eigen::Index c) {
        return add(name, Tensor::create(Mat::Ones(r, c)));
    }
    TensorPtr at(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw std::out_of_range("no parameter: " + name);
        return it->second;
    }
    void zero_grads() {
        for (auto& [_, t] : params) t->zero_grad();
    }
};

// Low-rank delta on a linear layer: effective weight W + (alpha/rank) * B*A.
// A is stored (in, rank) and B (rank, out); B starts at zero so a freshly
// attached adapter is an exact identity.
struct LoraAdapter {
    int rank{16};
    double alpha{32.0};
    TensorPtr A;  // (in, rank)
    TensorPtr B;  // (rank, out)

    double scaling() const { return alpha / static_cast<double>(rank); }
};

struct Linear {
    TensorPtr W;  // (in, out)
    TensorPtr b;  // (1, out)
    std::shared_ptr<LoraAdapter> adapter;  // null unless LoRA is attached

    void init(ParamStore& ps, const std::string& prefix, int in, int out, std::mt19937_64& rng) {
        W = ps.randn(prefix + ".W", in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng);
        b = ps.zeros(prefix + ".b", 1, out);
    }

    TensorPtr forward(const TensorPtr& x) const {
        TensorPtr y = add_rowvec(matmul(x, W), b);
        if (adapter) y = add(y, scale(matmul(matmul(x, adapter->A), adapter->B), adapter->scaling()));
        return y;
    }

    // Folds the adapter delta into the base weight (in place).
    void merge_adapter() {
        if (!adapter) return;
        W->value.noalias() += adapter->scaling() * (adapter->A->value * adapter->B->value);
        adapter.reset();
    }
    // Drops the adapter; the base weight was never touched by apply, so
    // outputs return to the base model exactly.
    void detach_adapter() { adapter.reset(); }
};

struct LayerNormModule {
    TensorPtr gain, bias;

    void init(ParamStore& ps, const std::string& prefix, int dim) {
        gain = ps.ones(prefix + ".gain", 1, dim);
        bias = ps.zeros(prefix + ".bias", 1, dim);
    }
    TensorPtr forward(const TensorPtr& x) const { return layer_norm(x, gain, bias); }
};

inline Mat causal_mask(Eigen::Index n) {
    Mat m = Mat::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = -1e30;
    return m;
}

struct MultiheadAttention {
    int num_heads{4};
    int dim{64};
    Linear wq, wk, wv, wo;

    void init(ParamStore& ps, const std::string& prefix, int d, int heads, std::mt19937_64& rng) {
        dim = d;
        num_heads = heads;
        wq.init(ps, prefix + ".wq", d, d, rng);
        wk.init(ps, prefix + ".wk", d, d, rng);
        wv.init(ps, prefix + ".wv", d, d, rng);
        wo.init(ps, prefix + ".wo", d, d, rng);
    }

    // q_in (Lq, d), kv_in (Lk, d); mask, when given, is additive (Lq, Lk).
    TensorPtr forward(const TensorPtr& q_in, const TensorPtr& kv_in, const Mat* mask) const {
        const int dh = dim / num_heads;
        TensorPtr q = wq.forward(q_in), k = wk.forward(kv_in), v = wv.forward(kv_in);
        std::vector<TensorPtr> heads;
        heads.reserve(num_heads);
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        for (int h = 0; h < num_heads; ++h) {
            TensorPtr qh = slice_cols(q, h * dh, dh);
            TensorPtr kh = slice_cols(k, h * dh, dh);
            TensorPtr vh = slice_cols(v, h * dh, dh);
            TensorPtr scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
            if (mask) scores = add_const(scores, *mask);
            heads.push_back(matmul(softmax_rows(scores), vh));
        }
        return wo.forward(concat_cols(heads));
    }
};

struct FeedForward {
    Linear fc1, fc2;
    Act act{Act::Gelu};

    void init(ParamStore& ps, const std::string& prefix, int d, int hidden, Act a,
              std::mt19937_64& rng) {
        act = a;
        fc1.init(ps, prefix + ".fc1", d, hidden, rng);
        fc2.init(ps, prefix + ".fc2", hidden, d, rng);
    }
    TensorPtr forward(const TensorPtr& x) const { return fc2.forward(activate(fc1.forward(x), act)); }
};

// Pre-LN transformer block; self-attention when kv == nullptr, otherwise
// cross-attention onto the given context.
struct TransformerBlock {
    MultiheadAttention attn;
    FeedForward ffn;
    LayerNormModule ln1, ln2;

    void init(ParamStore& ps, const std::string& prefix, int d, int heads, int hidden, Act a,
              std::mt19937_64& rng) {
        attn.init(ps, prefix + ".attn", d, heads, rng);
        ffn.init(ps, prefix + ".ffn", d, hidden, a, rng);
        ln1.init(ps, prefix + ".ln1", d);
        ln2.init(ps, prefix + ".ln2", d);
    }

    TensorPtr forward(const TensorPtr& x, const TensorPtr& kv, const Mat* mask) const {
        TensorPtr nx = ln1.forward(x);
        TensorPtr ctx = kv ? kv : nx;
        TensorPtr h = add(x, attn.forward(nx, ctx, mask));
        return add(h, ffn.forward(ln2.forward(h)));
    }
};

// Two-layer perceptron head.
struct Mlp2 {
    Linear fc1, fc2;
    Act act{Act::Relu};

    void init(ParamStore& ps, const std::string& prefix, int in, int hidden, int out, Act a,
              std::mt19937_64& rng) {
        act = a;
        fc1.init(ps, prefix + ".fc1", in, hidden, rng);
        fc2.init(ps, prefix + ".fc2", hidden, out, rng);
    }
    TensorPtr forward(const TensorPtr& x) const { return fc2.forward(activate(fc1.forward(x), act)); }
};

}  // namespace tpo

#endif  // TPO_NN_HPP
