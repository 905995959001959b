// SPDX-License-Identifier: Apache-2.0
//
// Task heads: region box regression, temporal grounding (strong and
// simple variants), and the mask head (adapter + decoder + memory bank).
// Every output satisfies its type invariants by construction.

#ifndef TPO_HEADS_HPP
#define TPO_HEADS_HPP

#include <deque>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "tpo/config.hpp"
#include "tpo/nn.hpp"
#include "tpo/tensor.hpp"
#include "tpo/types.hpp"

namespace tpo {

struct NoObjectError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// raw (1,4) -> valid corners: squash to (0,1)^4 as (cx*, cy*, w, h), then
// x1 = cx*(1-w), x2 = x1 + w (same for y). Corners stay inside [0,1] and
// are strictly ordered for any finite input; the size floor keeps the
// ordering strict even where sigmoid saturates to machine zero.
constexpr double kMinExtent = 1e-4;

inline TensorPtr size_floor(const TensorPtr& s) {
    return add_scalar(scale(s, 1.0 - kMinExtent), kMinExtent);
}

inline TensorPtr box_reparam(const TensorPtr& raw) {
    TensorPtr s = sigmoid(raw);
    TensorPtr cx = slice_cols(s, 0, 1), cy = slice_cols(s, 1, 1);
    TensorPtr w = size_floor(slice_cols(s, 2, 1)), h = size_floor(slice_cols(s, 3, 1));
    TensorPtr one_w = add_scalar(scale(w, -1.0), 1.0);
    TensorPtr one_h = add_scalar(scale(h, -1.0), 1.0);
    TensorPtr x1 = mul(cx, one_w), y1 = mul(cy, one_h);
    TensorPtr x2 = add(x1, w), y2 = add(y1, h);
    return concat_cols({x1, y1, x2, y2});
}

inline Box box_from_tensor(const TensorPtr& t) {
    return Box{t->value(0, 0), t->value(0, 1), t->value(0, 2), t->value(0, 3)};
}

inline TensorPtr box_to_tensor(const Box& b) {
    Mat m(1, 4);
    m << b.x1, b.y1, b.x2, b.y2;
    return Tensor::create(std::move(m));
}

// raw (1,2) -> (start, end) with 0 <= start < end <= 1.
inline TensorPtr span_reparam(const TensorPtr& raw) {
    TensorPtr s = sigmoid(raw);
    TensorPtr c = slice_cols(s, 0, 1), len = size_floor(slice_cols(s, 1, 1));
    TensorPtr start = mul(c, add_scalar(scale(len, -1.0), 1.0));
    return concat_cols({start, add(start, len)});
}

inline TimeSpan span_from_tensor(const TensorPtr& t) {
    return TimeSpan{t->value(0, 0), t->value(0, 1)};
}

inline TensorPtr span_to_tensor(const TimeSpan& s) {
    Mat m(1, 2);
    m << s.start, s.end;
    return Tensor::create(std::move(m));
}

// Two-layer MLP with ReLU, per the region-head recipe; GELU in the
// smooth-activation configuration so finite-difference checks hold.
struct RegionHead {
    Mlp2 mlp;

    void init(ParamStore& ps, const BackboneConfig& c, std::mt19937_64& rng) {
        mlp.init(ps, "head_region.mlp", c.c_dim, 2 * c.c_dim, 4,
                 c.smooth_activations ? Act::Gelu : Act::Relu, rng);
    }
    TensorPtr forward(const TensorPtr& e) const { return box_reparam(mlp.forward(e)); }
    Box predict(const TensorPtr& e) const { return box_from_tensor(forward(e)); }
};

// Ablation baseline: span straight from the task embedding, no video
// features, no cross-attention.
struct SimpleTemporalHead {
    Mlp2 mlp;

    void init(ParamStore& ps, const BackboneConfig& c, std::mt19937_64& rng) {
        mlp.init(ps, "head_simple_temporal.mlp", c.c_dim, 2 * c.c_dim, 2,
                 c.smooth_activations ? Act::Gelu : Act::Relu, rng);
    }
    TensorPtr forward(const TensorPtr& e) const { return span_reparam(mlp.forward(e)); }
    TimeSpan predict(const TensorPtr& e) const { return span_from_tensor(forward(e)); }
};

// Frames cross-attend to the query tokens with the temporal task embedding
// appended as the final query token; span regression + per-frame saliency.
struct TemporalHead {
    BackboneConfig cfg;
    Linear frame_proj, query_proj;
    TensorPtr tpos;  // (T_max, C)
    TransformerBlock cross1, cross2;
    Mlp2 span_mlp;
    Linear saliency;

    void init(ParamStore& ps, const BackboneConfig& c, std::mt19937_64& rng) {
        cfg = c;
        Act a = c.smooth_activations ? Act::Gelu : Act::Relu;
        frame_proj.init(ps, "head_temporal.frame_proj", c.c_dim, c.c_dim, rng);
        query_proj.init(ps, "head_temporal.query_proj", c.c_dim, c.c_dim, rng);
        tpos = ps.randn("head_temporal.tpos", c.t_max, c.c_dim, 0.1, rng);
        cross1.init(ps, "head_temporal.cross1", c.c_dim, c.num_heads, 2 * c.c_dim, a, rng);
        cross2.init(ps, "head_temporal.cross2", c.c_dim, c.num_heads, 2 * c.c_dim, a, rng);
        span_mlp.init(ps, "head_temporal.span_mlp", c.c_dim, 2 * c.c_dim, 2, a, rng);
        saliency.init(ps, "head_temporal.saliency", c.c_dim, 1, rng);
    }

    struct Out {
        TensorPtr span;             // (1, 2), valid by construction
        TensorPtr saliency_logits;  // (T, 1)
    };

    // frame_feats (T, C); query_feats (Lq, C); e (1, C).
    Out forward(const TensorPtr& frame_feats, const TensorPtr& query_feats,
                const TensorPtr& e) const {
        const Eigen::Index T = frame_feats->rows();
        if (T < 2) throw std::invalid_argument("temporal head needs at least 2 frames");
        TensorPtr q_ctx = query_proj.forward(concat_rows({query_feats, e}));
        TensorPtr x = add(frame_proj.forward(frame_feats), slice_rows(tpos, 0, T));
        x = cross1.forward(x, q_ctx, nullptr);
        x = cross2.forward(x, q_ctx, nullptr);
        TensorPtr sal = saliency.forward(x);  // logits
        // pool frames weighted by saliency probability, renormalized
        TensorPtr w = sigmoid(sal);
        TensorPtr norm = add_scalar(sum(w), 1e-6);
        TensorPtr pooled = matmul(transpose(w), x);  // (1, C)
        TensorPtr pooled_n = matmul(div(Tensor::scalar(1.0), norm), pooled);
        TensorPtr span = span_reparam(span_mlp.forward(pooled_n));
        return {span, sal};
    }

    static SaliencyCurve saliency_curve(const TensorPtr& logits) {
        SaliencyCurve c;
        c.scores.resize(logits->rows());
        for (Eigen::Index i = 0; i < logits->rows(); ++i)
            c.scores[i] = 1.0 / (1.0 + std::exp(-logits->value(i, 0)));
        return c;
    }
};

// Single MLP replacing the prompt encoder: task embedding -> prompt.
struct MaskAdapter {
    Mlp2 mlp;

    void init(ParamStore& ps, const BackboneConfig& c, std::mt19937_64& rng) {
        mlp.init(ps, "mask_adapter.mlp", c.c_dim, c.c_dim, c.c_dim,
                 c.smooth_activations ? Act::Gelu : Act::Relu, rng);
    }
    TensorPtr forward(const TensorPtr& e) const { return mlp.forward(e); }
};

// Two transposed-convolution upsampling stages (stride = kernel, so each
// stage is a per-cell linear followed by a layout permutation), with
// feature-wise modulation by the prompt between the stages.
struct MaskDecoder {
    BackboneConfig cfg;
    int ch{32}, k1{4}, k2{2};
    Linear up1;          // (C, k1*k1*ch)
    Linear film_gamma;   // (C, ch)
    Linear film_beta;    // (C, ch)
    Linear up2;          // (ch, k2*k2)
    std::vector<Eigen::Index> map1, map2;

    void init(ParamStore& ps, const BackboneConfig& c, std::mt19937_64& rng) {
        cfg = c;
        k2 = 2;
        k1 = c.patch_size / k2;
        Act a = c.smooth_activations ? Act::Gelu : Act::Relu;
        (void)a;
        up1.init(ps, "mask_decoder.up1", c.c_dim, k1 * k1 * ch, rng);
        film_gamma.init(ps, "mask_decoder.film_gamma", c.c_dim, ch, rng);
        film_beta.init(ps, "mask_decoder.film_beta", c.c_dim, ch, rng);
        up2.init(ps, "mask_decoder.up2", ch, k2 * k2, rng);
        structure_up1();
        structure_up2();
        build_maps();
    }

    // Channels 0..2 of the first stage start as pass-throughs of the
    // encoder's pooled color planes (subcell (r%k1, c%k1) of the patch),
    // so the frozen decoder is usable from the start and the trainable
    // adapter only has to learn the gating.
    void structure_up1() {
        const int sub = 4;
        if (k1 != sub || 3 * sub * sub > cfg.c_dim) return;
        Mat& W = up1.W->value;
        W *= 0.2;
        for (int pr = 0; pr < k1; ++pr)
            for (int pc = 0; pc < k1; ++pc)
                for (int m = 0; m < 3; ++m) {
                    int in_dim = (pr * sub + pc) * 3 + m;  // pooled plane from the vision encoder
                    int out_dim = (pr * k1 + pc) * ch + m;
                    W(in_dim, out_dim) += 1.0;
                }
    }

    // Every sub-pixel position of the final 2x reads the channels with the
    // same weights; otherwise the frozen stage bakes in a row/column
    // striping pattern the trainable adapter cannot undo.
    void structure_up2() {
        Mat& W = up2.W->value;
        Eigen::VectorXd mean = W.rowwise().mean();
        for (int j = 0; j < k2 * k2; ++j) W.col(j) = mean;
    }

    void build_maps() {
        const int g = cfg.patches_per_side();
        const int s1 = g * k1;  // intermediate side
        map1.resize(static_cast<size_t>(s1) * s1 * ch);
        for (int r = 0; r < s1; ++r)
            for (int c = 0; c < s1; ++c)
                for (int m = 0; m < ch; ++m) {
                    Eigen::Index cell = (r / k1) * g + (c / k1);
                    Eigen::Index src = cell * (k1 * k1 * ch) + ((r % k1) * k1 + (c % k1)) * ch + m;
                    map1[(static_cast<size_t>(r) * s1 + c) * ch + m] = src;
                }
        const int s2 = s1 * k2;  // output side (= frame_size)
        map2.resize(static_cast<size_t>(s2) * s2);
        for (int r = 0; r < s2; ++r)
            for (int c = 0; c < s2; ++c) {
                Eigen::Index cell = (r / k2) * s1 + (c / k2);
                map2[static_cast<size_t>(r) * s2 + c] = cell * (k2 * k2) + (r % k2) * k2 + (c % k2);
            }
    }

    // frame_patch_feats (P, C), prompt (1, C) -> logits (H*W, 1).
    TensorPtr forward(const TensorPtr& frame_patch_feats, const TensorPtr& prompt) const {
        if (frame_patch_feats->cols() != cfg.c_dim) throw std::invalid_argument("mask_decode: bad features");
        const int g = cfg.patches_per_side();
        if (frame_patch_feats->rows() != g * g) throw std::invalid_argument("mask_decode: bad patch count");
        const int s1 = g * k1, s2 = s1 * k2;
        TensorPtr x = up1.forward(frame_patch_feats);              // (P, k1*k1*ch)
        x = remap(x, static_cast<Eigen::Index>(s1) * s1, ch, map1);  // (s1*s1, ch)
        TensorPtr gamma = add_scalar(film_gamma.forward(prompt), 1.0);
        TensorPtr beta = film_beta.forward(prompt);
        x = add_rowvec(mul_rowvec(x, gamma), beta);
        x = cfg.smooth_activations ? gelu(x) : relu(x);
        x = up2.forward(x);                                        // (s1*s1, k2*k2)
        return remap(x, static_cast<Eigen::Index>(s2) * s2, 1, map2);
    }

    MaskGrid decode(const TensorPtr& frame_patch_feats, const TensorPtr& prompt) const {
        TensorPtr lg = forward(frame_patch_feats, prompt);
        std::vector<double> flat(lg->value.data(), lg->value.data() + lg->size());
        return MaskGrid::from_logits(flat, cfg.frame_size, cfg.frame_size);
    }
};

// Rolling store of (pooled frame features, prompt actually used) pairs.
// Parameter-free: recall is a softmax attention over pooled features.
struct MemoryBank {
    struct Entry {
        Eigen::RowVectorXd frame_pooled;
        Eigen::RowVectorXd prompt;
        int frame_index;
    };
    size_t capacity{4};
    std::deque<Entry> entries;

    bool empty() const { return entries.empty(); }
    size_t size() const { return entries.size(); }

    void push(Eigen::RowVectorXd pooled, Eigen::RowVectorXd prompt, int frame_index) {
        entries.push_back({std::move(pooled), std::move(prompt), frame_index});
        while (entries.size() > capacity) entries.pop_front();
    }

    // Blends the base prompt with prompts recalled from similar frames.
    Eigen::RowVectorXd recall(const Eigen::RowVectorXd& pooled,
                              const Eigen::RowVectorXd& base_prompt) const {
        if (entries.empty()) throw std::logic_error("memory bank is empty");
        const double tau = std::sqrt(static_cast<double>(pooled.size()));
        Eigen::VectorXd sims(entries.size());
        for (size_t i = 0; i < entries.size(); ++i)
            sims[static_cast<Eigen::Index>(i)] = pooled.dot(entries[i].frame_pooled) / tau;
        sims.array() -= sims.maxCoeff();
        Eigen::VectorXd w = sims.array().exp();
        w /= w.sum();
        Eigen::RowVectorXd mem = Eigen::RowVectorXd::Zero(base_prompt.size());
        for (size_t i = 0; i < entries.size(); ++i)
            mem += w[static_cast<Eigen::Index>(i)] * entries[i].prompt;
        return 0.5 * base_prompt + 0.5 * mem;
    }
};

// Tight axis-aligned box of the positive pixels, in normalized coords.
inline std::optional<Box> try_box_from_mask(const MaskGrid& m) {
    int rmin = m.height, rmax = -1, cmin = m.width, cmax = -1;
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c)
            if (m.at(r, c)) {
                rmin = std::min(rmin, r);
                rmax = std::max(rmax, r);
                cmin = std::min(cmin, c);
                cmax = std::max(cmax, c);
            }
    if (rmax < 0) return std::nullopt;
    return Box{static_cast<double>(cmin) / m.width, static_cast<double>(rmin) / m.height,
               static_cast<double>(cmax + 1) / m.width, static_cast<double>(rmax + 1) / m.height};
}

inline Box box_from_mask(const MaskGrid& m) {
    auto b = try_box_from_mask(m);
    if (!b) throw NoObjectError("no-object: mask is empty");
    return *b;
}

}  // namespace tpo

#endif  // TPO_HEADS_HPP
