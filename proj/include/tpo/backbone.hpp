// SPDX-License-Identifier: Apache-2.0
//
// The miniature multimodal backbone: frame-local patch vision encoder,
// learned-query connector (4 tokens per frame), a 2-layer causal LM with
// optional LoRA on the attention projections, the task-token registry and
// the box prompt encoder.

#ifndef TPO_BACKBONE_HPP
#define TPO_BACKBONE_HPP

#include <map>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tpo/config.hpp"
#include "tpo/nn.hpp"
#include "tpo/tensor.hpp"
#include "tpo/types.hpp"
#include "tpo/vocab.hpp"

namespace tpo {

// One head per task token; Tracking and Segmentation share the mask head.
enum class HeadId : int { Region = 0, Temporal = 1, Mask = 2 };
constexpr int kNumHeads = 3;

inline const char* head_name(HeadId h) {
    switch (h) {
        case HeadId::Region: return "region";
        case HeadId::Temporal: return "temporal";
        case HeadId::Mask: return "mask";
    }
    return "?";
}

inline HeadId head_for_kind(TaskKind k) {
    switch (k) {
        case TaskKind::SpatialGrounding: return HeadId::Region;
        case TaskKind::TemporalGrounding: return HeadId::Temporal;
        case TaskKind::Tracking:
        case TaskKind::Segmentation: return HeadId::Mask;
        case TaskKind::Conversation: break;
    }
    throw std::invalid_argument("no head for conversation");
}

// Residual-stream layout shared by the structured initializations. The
// frozen backbone computes query-to-object binding through two wired
// attention hops: block 0 copies the queried color word's RGB code next
// to every later row, block 1 matches that code against per-patch mean
// colors and deposits a coverage-weighted patch histogram. Heads then
// only have to decode, which is what the staged freeze schedule trains.
namespace stream {
constexpr int kSubcell = 0;     // 48 dims: 4x4-subcell RGB means per patch
constexpr int kPatchPos = 48;   // 16 dims: one-hot patch index
constexpr int kMeanRgb = 64;    // 3 dims: patch mean RGB minus background
constexpr int kWordRgb = 67;    // 3 dims: color-word RGB code (rgb - 0.5)
constexpr int kColorMark = 70;  // 1 dim: color-word marker
constexpr int kCodeCopy = 71;   // 3 dims: hop-1 copy of the queried code
constexpr int kHist = 74;       // 16 dims: color-matched patch histogram
constexpr int kHistRgb = 90;    // 3 dims: color-matched mean RGB
constexpr int kDims = 96;       // wiring engages only at this width or more
}  // namespace stream

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct LengthError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DispatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Frame-local: per-frame patch embedding + one self-attention block.
struct VisionEncoder {
    BackboneConfig cfg;
    Linear patch_embed;
    TensorPtr patch_pos;  // (P, C)
    TransformerBlock block;

    void init(ParamStore& ps, const BackboneConfig& c, std::mt19937_64& rng) {
        cfg = c;
        const int P = c.patches_per_frame();
        patch_embed.init(ps, "vision.patch_embed", c.patch_dim(), c.c_dim, rng);
        structure_patch_embed();
        patch_pos = ps.randn("vision.patch_pos", P, c.c_dim, 0.02, rng);
        structure_patch_pos();
        Act a = c.smooth_activations ? Act::Gelu : Act::Relu;
        block.init(ps, "vision.block0", c.c_dim, c.num_heads, 2 * c.c_dim, a, rng);
        // damp the random residual branches so the structured embedding
        // stays readable through the frozen stages, and keep the position
        // and color planes free of random writes entirely
        block.attn.wo.W->value *= 0.1;
        block.ffn.fc2.W->value *= 0.1;
        if (c.c_dim >= stream::kDims) {
            const int quiet = c.c_dim - stream::kPatchPos;
            block.attn.wo.W->value.rightCols(quiet).setZero();
            block.ffn.fc2.W->value.rightCols(quiet).setZero();
        }
    }

    // One-hot patch index on the dims above the pooled color planes, so a
    // token's position survives pooling downstream.
    void structure_patch_pos() {
        const int planes = 4 * 4 * 3;
        const int P = cfg.patches_per_frame();
        if (planes + P > cfg.c_dim) return;
        for (int i = 0; i < P; ++i) patch_pos->value(i, planes + i) += 0.75;
    }

    // The first 4*4*3 output dims of the patch projection start as 2x2-pixel
    // subcell means, so pixel-level content survives the frozen stages.
    // Dims kMeanRgb.. carry the background-centered patch mean color that
    // block 1 of the LM keys its binding attention on.
    void structure_patch_embed() {
        const int p = cfg.patch_size;
        const int sub = 4;                   // subcells per side
        const int px = p / sub;              // pixels per subcell side
        const int planes = sub * sub * 3;
        if (planes > cfg.c_dim || px < 1) return;
        Mat& W = patch_embed.W->value;
        for (int out = 0; out < planes; ++out) {
            W.col(out) *= 0.05;  // keep a little noise on top of the pooled plane
            int ch = out % 3, sc = (out / 3) % sub, sr = out / (3 * sub);
            for (int u = sr * px; u < (sr + 1) * px; ++u)
                for (int v = sc * px; v < (sc + 1) * px; ++v)
                    W((u * p + v) * 3 + ch, out) += 1.0 / (px * px);
        }
        if (cfg.c_dim < stream::kDims) return;
        W.rightCols(cfg.c_dim - planes) *= 0.05;  // quiet circuit/marker dims
        for (int ch = 0; ch < 3; ++ch) {
            for (int u = 0; u < p; ++u)
                for (int v = 0; v < p; ++v)
                    W((u * p + v) * 3 + ch, stream::kMeanRgb + ch) += 1.0 / (p * p);
            patch_embed.b->value(0, stream::kMeanRgb + ch) = -kBackgroundLevel;
        }
    }

    // frame pixels (H*W*3 row-major) -> patch matrix (P, patch_dim)
    Mat extract_patches(const std::vector<double>& frame) const {
        const int H = cfg.frame_size, p = cfg.patch_size, g = cfg.patches_per_side();
        Mat out(cfg.patches_per_frame(), cfg.patch_dim());
        for (int pr = 0; pr < g; ++pr)
            for (int pc = 0; pc < g; ++pc) {
                int row = pr * g + pc, k = 0;
                for (int u = 0; u < p; ++u)
                    for (int v = 0; v < p; ++v)
                        for (int c = 0; c < 3; ++c)
                            out(row, k++) = frame[((pr * p + u) * H + pc * p + v) * 3 + c];
            }
        return out;
    }

    // (P, C) features for one frame.
    TensorPtr encode_frame(const std::vector<double>& frame) const {
        TensorPtr patches = Tensor::create(extract_patches(frame));
        TensorPtr x = add(patch_embed.forward(patches), patch_pos);
        return block.forward(x, nullptr, nullptr);
    }

    std::vector<TensorPtr> encode_frames(const VisualInput& x) const {
        if (!x.valid()) throw ConfigError("visual input violates invariants");
        if (x.height != cfg.frame_size || x.width != cfg.frame_size)
            throw ConfigError("visual input size does not match config");
        if (x.frames_count > cfg.t_max) throw ConfigError("too many frames for config");
        std::vector<TensorPtr> out;
        out.reserve(x.frames.size());
        for (const auto& f : x.frames) out.push_back(encode_frame(f));
        return out;
    }
};

// Learned-query cross-attention per frame, plus a block-mean skip and a
// frame-index embedding. Output: num_connector_queries tokens per frame.
struct Connector {
    BackboneConfig cfg;
    TensorPtr queries;    // (Q, C)
    MultiheadAttention cross;
    LayerNormModule ln_kv;
    Linear proj;
    TensorPtr frame_pos;  // (T_max, C)
    std::vector<std::vector<Eigen::Index>> block_rows;  // patch rows pooled into each query slot

    void init(ParamStore& ps, const BackboneConfig& c, std::mt19937_64& rng) {
        cfg = c;
        queries = ps.randn("connector.queries", c.num_connector_queries, c.c_dim, 0.5, rng);
        cross.init(ps, "connector.cross", c.c_dim, c.num_heads, rng);
        cross.wo.W->value *= 0.1;  // the block-mean skip carries the signal
        ln_kv.init(ps, "connector.ln_kv", c.c_dim);
        proj.init(ps, "connector.proj", c.c_dim, c.c_dim, rng);
        proj.W->value *= 0.05;
        proj.W->value += Mat::Identity(c.c_dim, c.c_dim);
        frame_pos = ps.randn("connector.frame_pos", c.t_max, c.c_dim, 0.02, rng);
        build_blocks();
    }

    void build_blocks() {
        const int Q = cfg.num_connector_queries, g = cfg.patches_per_side();
        int qr = static_cast<int>(std::sqrt(static_cast<double>(Q)));
        while (qr > 1 && Q % qr != 0) --qr;
        int qc = Q / qr;
        block_rows.assign(Q, {});
        for (int pr = 0; pr < g; ++pr)
            for (int pc = 0; pc < g; ++pc) {
                int q = std::min(pr * qr / g, qr - 1) * qc + std::min(pc * qc / g, qc - 1);
                block_rows[q].push_back(pr * g + pc);
            }
        // a patch grid coarser than the query grid leaves slots empty;
        // back-fill each with its nearest patch so pooling stays defined
        for (int q = 0; q < Q; ++q)
            if (block_rows[q].empty()) {
                int pr = std::min((q / qc) * g / qr, g - 1);
                int pc = std::min((q % qc) * g / qc, g - 1);
                block_rows[q].push_back(pr * g + pc);
            }
    }

    // per-frame features (P, C) -> (Q, C) LM tokens for that frame.
    TensorPtr connect_frame(const TensorPtr& feats, int frame_index) const {
        TensorPtr kv = ln_kv.forward(feats);
        TensorPtr attended = cross.forward(queries, kv, nullptr);
        std::vector<TensorPtr> pooled;
        for (const auto& rows : block_rows) {
            std::vector<int> ids(rows.begin(), rows.end());
            pooled.push_back(mean_rows(gather_rows(feats, ids)));
        }
        TensorPtr skip = concat_rows(pooled);
        TensorPtr tokens = proj.forward(add(attended, skip));
        TensorPtr fp = slice_rows(frame_pos, frame_index, 1);
        return add_rowvec(tokens, fp);
    }

    TensorPtr connect(const std::vector<TensorPtr>& frames) const {
        std::vector<TensorPtr> per_frame;
        per_frame.reserve(frames.size());
        for (size_t t = 0; t < frames.size(); ++t)
            per_frame.push_back(connect_frame(frames[t], static_cast<int>(t)));
        return concat_rows(per_frame);
    }
};

struct LanguageModel {
    BackboneConfig cfg;
    TensorPtr tok_embed;  // (vocab, C)
    TensorPtr pos_embed;  // (ctx_max, C)
    std::vector<TransformerBlock> blocks;
    LayerNormModule ln_f;
    Linear head;          // (C, vocab)

    void init(ParamStore& ps, const BackboneConfig& c, std::mt19937_64& rng) {
        cfg = c;
        tok_embed = ps.randn("lm.tok_embed", c.vocab_size, c.c_dim, 0.5, rng);
        pos_embed = ps.randn("lm.pos_embed", c.ctx_max, c.c_dim, 0.02, rng);
        Act a = c.smooth_activations ? Act::Gelu : Act::Relu;
        blocks.resize(c.num_lm_layers);
        for (int i = 0; i < c.num_lm_layers; ++i) {
            blocks[i].init(ps, "lm.block" + std::to_string(i), c.c_dim, c.num_heads, 4 * c.c_dim,
                           a, rng);
            // quiet residual branches: the frozen base stays near-identity
            // and the low-rank adapters do the talking
            blocks[i].attn.wo.W->value *= 0.1;
            blocks[i].ffn.fc2.W->value *= 0.1;
        }
        ln_f.init(ps, "lm.ln_f", c.c_dim);
        head.init(ps, "lm.head", c.c_dim, c.vocab_size, rng);
        structure_color_embeddings();
        structure_binding_circuit();
    }

    // Color words carry their RGB code and a marker on dedicated dims; the
    // circuit dims of every embedding are quieted so the wiring reads clean
    // signals.
    void structure_color_embeddings() {
        if (cfg.c_dim < stream::kDims) return;
        tok_embed->value.rightCols(cfg.c_dim - stream::kMeanRgb) *= 0.05;
        const Vocab& v = Vocab::get();
        for (const auto& [name, rgb] : Palette::colors()) {
            auto it = v.index.find(name);
            if (it == v.index.end() || it->second >= cfg.vocab_size) continue;
            for (int ch = 0; ch < 3; ++ch)
                tok_embed->value(it->second, stream::kWordRgb + ch) += 1.5 * (rgb[ch] - 0.5);
            tok_embed->value(it->second, stream::kColorMark) += 1.5;
        }
    }

    // Wires head 0 of the first two blocks as the frozen binding circuit.
    // Block 0: every row queries for the color-word marker and receives its
    // RGB code on kCodeCopy. Block 1: rows with a code attend to patches
    // keyed by mean color and receive position one-hots and mean RGB on
    // kHist/kHistRgb. The head-0 slice is cleared first so random init
    // cannot drown the wiring; the adapters later repopulate it.
    void structure_binding_circuit() {
        if (cfg.c_dim < stream::kDims || blocks.size() < 2) return;
        const int dh = cfg.c_dim / cfg.num_heads;
        auto clear_head0 = [&](TransformerBlock& b) {
            b.attn.wq.W->value.leftCols(dh).setZero();
            b.attn.wk.W->value.leftCols(dh).setZero();
            b.attn.wv.W->value.leftCols(dh).setZero();
            b.attn.wo.W->value.topRows(dh).setZero();
        };
        for (auto* b : {&blocks[0], &blocks[1]}) {
            clear_head0(*b);
            // only the wired head may write into the circuit dims at init;
            // the adapters are free to regrow these paths during training
            const int quiet = cfg.c_dim - stream::kMeanRgb;
            b->attn.wo.W->value.rightCols(quiet).setZero();
            b->ffn.fc2.W->value.rightCols(quiet).setZero();
        }

        MultiheadAttention& a0 = blocks[0].attn;
        a0.wq.b->value(0, 0) = 3.0;                     // constant marker query
        a0.wk.W->value(stream::kColorMark, 0) = 3.0;
        for (int ch = 0; ch < 3; ++ch) {
            a0.wv.W->value(stream::kWordRgb + ch, 1 + ch) = 1.0;
            a0.wo.W->value(1 + ch, stream::kCodeCopy + ch) = 0.5;
        }

        MultiheadAttention& a1 = blocks[1].attn;
        const int P = 16;                               // patch one-hot width
        for (int ch = 0; ch < 3; ++ch) {
            a1.wq.W->value(stream::kCodeCopy + ch, ch) = 2.0;
            a1.wk.W->value(stream::kMeanRgb + ch, ch) = 2.0;
            a1.wv.W->value(stream::kMeanRgb + ch, 3 + P + ch) = 1.0;
            a1.wo.W->value(3 + P + ch, stream::kHistRgb + ch) = 1.0;
        }
        for (int i = 0; i < P; ++i) {
            a1.wv.W->value(stream::kPatchPos + i, 3 + i) = 1.0;
            a1.wo.W->value(3 + i, stream::kHist + i) = 1.0;
        }
    }

    struct Out {
        TensorPtr logits;  // (L, vocab)
        TensorPtr hidden;  // (L, C)
    };

    // embeds: already-assembled input embeddings (L, C).
    Out forward(const TensorPtr& embeds) const {
        const Eigen::Index L = embeds->rows();
        if (L > cfg.ctx_max) throw LengthError("sequence exceeds context limit");
        TensorPtr x = add(embeds, slice_rows(pos_embed, 0, L));
        Mat mask = causal_mask(L);
        for (const auto& b : blocks) x = b.forward(x, nullptr, &mask);
        TensorPtr h = ln_f.forward(x);
        return {head.forward(h), h};
    }

    std::vector<Linear*> lora_targets() {
        std::vector<Linear*> t;
        for (auto& b : blocks) {
            t.push_back(&b.attn.wq);
            t.push_back(&b.attn.wk);
            t.push_back(&b.attn.wv);
            t.push_back(&b.attn.wo);
            t.push_back(&b.ffn.fc1);
            t.push_back(&b.ffn.fc2);
        }
        t.push_back(&head);
        return t;
    }
};

// A learnable task token plus its indicator special token.
struct TaskToken {
    HeadId head;
    int indicator_token_id;
    TensorPtr embedding;  // (1, C)
};

struct Backbone {
    BackboneConfig cfg;
    ParamStore params;
    VisionEncoder vision;
    Connector connector;
    LanguageModel lm;
    std::vector<TaskToken> task_tokens;  // indexed by HeadId
    Mlp2 box_prompt;
    bool lora_attached{false};

    explicit Backbone(const BackboneConfig& c) : cfg(c) {
        cfg.validate();
        std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
        vision.init(params, cfg, rng);
        connector.init(params, cfg, rng);
        lm.init(params, cfg, rng);
        const std::pair<HeadId, int> regs[] = {
            {HeadId::Region, Vocab::kBox},
            {HeadId::Temporal, Vocab::kTime},
            {HeadId::Mask, Vocab::kMask},
        };
        for (auto [h, ind] : regs) {
            TensorPtr emb = params.randn(std::string("token.") + head_name(h), 1, cfg.c_dim, 0.5, rng);
            if (cfg.c_dim >= stream::kDims)  // keep the circuit dims readable
                emb->value.rightCols(cfg.c_dim - stream::kMeanRgb) *= 0.05;
            task_tokens.push_back(TaskToken{h, ind, emb});
        }
        Act a = cfg.smooth_activations ? Act::Gelu : Act::Relu;
        box_prompt.init(params, "box_prompt", 4, cfg.c_dim, cfg.c_dim, a, rng);
    }

    const TaskToken& token_for(HeadId h) const {
        for (const auto& t : task_tokens)
            if (t.head == h) return t;
        throw DispatchError("unregistered task id");
    }

    // --- LoRA -----------------------------------------------------------
    // Attaches rank/alpha adapters to the LM attention projections. B is
    // zero-initialized, so outputs are unchanged until training moves it.
    void apply_lora(std::mt19937_64& rng) {
        if (lora_attached) return;
        int idx = 0;
        for (Linear* t : lm.lora_targets()) {
            auto ad = std::make_shared<LoraAdapter>();
            ad->rank = cfg.lora_rank;
            ad->alpha = cfg.lora_alpha;
            std::string prefix = "lm_lora.t" + std::to_string(idx++);
            ad->A = params.randn(prefix + ".A", t->W->rows(), cfg.lora_rank,
                                 1.0 / std::sqrt(static_cast<double>(t->W->rows())), rng);
            ad->B = params.zeros(prefix + ".B", cfg.lora_rank, t->W->cols());
            t->adapter = ad;
        }
        lora_attached = true;
    }
    void detach_lora() {
        for (Linear* t : lm.lora_targets()) t->detach_adapter();
        lora_attached = false;
    }
    void merge_lora() {
        for (Linear* t : lm.lora_targets()) t->merge_adapter();
        lora_attached = false;
    }

    // --- forward pieces -------------------------------------------------
    std::vector<TensorPtr> encode_visual_frames(const VisualInput& x) const {
        return vision.encode_frames(x);
    }

    // (T*P, C), one feature vector per patch per frame.
    TensorPtr encode_visual(const VisualInput& x) const {
        return concat_rows(vision.encode_frames(x));
    }

    // Per-frame pooled features (T, C), used by the temporal head.
    TensorPtr frame_features(const std::vector<TensorPtr>& frames) const {
        std::vector<TensorPtr> pooled;
        pooled.reserve(frames.size());
        for (const auto& f : frames) pooled.push_back(mean_rows(f));
        return concat_rows(pooled);
    }

    TensorPtr connect(const std::vector<TensorPtr>& frames) const { return connector.connect(frames); }

    // Assembles input embeddings: visual tokens, then text. Rows tagged
    // VisualPlaceholder take the injected embedding (box prompt); an
    // optional task-token embedding is appended at the end.
    TensorPtr assemble(const TensorPtr& visual_tokens, const TokenSequence& text,
                       const TensorPtr& injected, const TensorPtr& appended) const {
        std::vector<TensorPtr> parts;
        if (visual_tokens) parts.push_back(visual_tokens);
        size_t i = 0;
        while (i < text.size()) {
            if (text.roles[i] == TokenRole::VisualPlaceholder) {
                if (!injected) throw DispatchError("placeholder present but nothing to inject");
                parts.push_back(injected);
                ++i;
                continue;
            }
            size_t j = i;
            while (j < text.size() && text.roles[j] != TokenRole::VisualPlaceholder) ++j;
            parts.push_back(gather_rows(lm.tok_embed,
                                        std::vector<int>(text.ids.begin() + i, text.ids.begin() + j)));
            i = j;
        }
        if (appended) parts.push_back(appended);
        return concat_rows(parts);
    }

    LanguageModel::Out lm_forward(const TensorPtr& visual_tokens, const TokenSequence& text,
                                  const TensorPtr& injected = nullptr,
                                  const TensorPtr& appended = nullptr) const {
        return lm.forward(assemble(visual_tokens, text, injected, appended));
    }

    // e_i: appends the task token after the context (which must already
    // hold the emitted indicator token) and returns the last hidden state.
    TensorPtr task_embedding(HeadId head, const TensorPtr& visual_tokens, const TokenSequence& text,
                             const TensorPtr& injected = nullptr) const {
        const TaskToken& tok = token_for(head);
        auto out = lm_forward(visual_tokens, text, injected, tok.embedding);
        return slice_rows(out.hidden, out.hidden->rows() - 1, 1);
    }

    TensorPtr encode_box_prompt(const Box& b) const {
        b.validate();
        Mat m(1, 4);
        m << b.x1, b.y1, b.x2, b.y2;
        return box_prompt.forward(Tensor::create(std::move(m)));
    }

    // Differentiable variant for gradient checks.
    TensorPtr encode_box_prompt(const TensorPtr& coords) const {
        return box_prompt.forward(coords);
    }
};

}  // namespace tpo

#endif  // TPO_BACKBONE_HPP
