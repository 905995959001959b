// SPDX-License-Identifier: Apache-2.0
//
// Full model: backbone plus all task heads in one parameter store, the
// per-record loss assembly used by training, and greedy decoding plus
// head predictions used by evaluation.

#ifndef TPO_MODEL_HPP
#define TPO_MODEL_HPP

#include <optional>
#include <string>
#include <vector>

#include "tpo/backbone.hpp"
#include "tpo/heads.hpp"
#include "tpo/losses.hpp"
#include "tpo/routing.hpp"
#include "tpo/types.hpp"
#include "tpo/vocab.hpp"

namespace tpo {

struct Model {
    BackboneConfig cfg;
    Backbone bb;
    RegionHead region;
    TemporalHead temporal;
    SimpleTemporalHead simple_temporal;
    MaskAdapter mask_adapter;
    MaskDecoder mask_decoder;
    bool use_simple_temporal{false};  // ablation switch
    LossWeights weights;

    explicit Model(const BackboneConfig& c) : cfg(c), bb(c) {
        std::mt19937_64 rng(c.seed ^ 0x71c9d2f3a5b8e604ull);
        region.init(bb.params, c, rng);
        temporal.init(bb.params, c, rng);
        simple_temporal.init(bb.params, c, rng);
        mask_adapter.init(bb.params, c, rng);
        mask_decoder.init(bb.params, c, rng);
        std::mt19937_64 lora_rng(c.seed ^ 0x2b5f8a1cd4e79306ull);
        bb.apply_lora(lora_rng);
    }

    ParamStore& params() { return bb.params; }
    const ParamStore& params() const { return bb.params; }
};

// --- sequence assembly --------------------------------------------------

// BOS + query (+ box placeholder) + the task-indicator token.
inline AssembledQuery build_task_sequence(const Backbone& bb, TaskKind kind,
                                          const std::string& query,
                                          const std::optional<Box>& init_box) {
    AssembledQuery q = build_query_sequence(bb, query, init_box);
    q.text.push(Vocab::indicator_token(kind), TokenRole::TaskIndicator);
    return q;
}

struct LmPass {
    LanguageModel::Out out;
    int vis_rows{0};
    int text_len{0};
    bool appended{false};

    // row whose logits predict the indicator (= last row before it)
    int assign_row() const { return vis_rows + text_len - 2; }
    // hidden row of the appended task token
    int task_row() const { return vis_rows + text_len; }
    int row_of_text(int i) const { return vis_rows + i; }
};

inline LmPass run_lm(const Model& m, const TensorPtr& visual_tokens, const AssembledQuery& q,
                     const TensorPtr& appended = nullptr) {
    LmPass p;
    p.out = m.bb.lm_forward(visual_tokens, q.text, q.injected, appended);
    p.vis_rows = visual_tokens ? static_cast<int>(visual_tokens->rows()) : 0;
    p.text_len = static_cast<int>(q.text.size());
    p.appended = appended != nullptr;
    return p;
}

inline TensorPtr restricted_assign_logits(const LmPass& p) {
    TensorPtr row = slice_rows(p.out.logits, p.assign_row(), 1);
    std::vector<TensorPtr> cols;
    for (int id : indicator_ids()) cols.push_back(slice_cols(row, id, 1));
    return concat_cols(cols);
}

// --- gold tensors -------------------------------------------------------

inline TensorPtr mask_to_tensor(const MaskGrid& m) {
    Mat g(static_cast<Eigen::Index>(m.values.size()), 1);
    for (size_t i = 0; i < m.values.size(); ++i)
        g(static_cast<Eigen::Index>(i), 0) = m.values[i];
    return Tensor::create(std::move(g));
}

inline MaskGrid rasterize_box_mask(const Box& b, int h, int w) {
    MaskGrid m;
    m.height = h;
    m.width = w;
    m.values.assign(static_cast<size_t>(h) * w, 0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double x = (c + 0.5) / w, y = (r + 0.5) / h;
            if (x >= b.x1 && x <= b.x2 && y >= b.y1 && y <= b.y2)
                m.values[static_cast<size_t>(r) * w + c] = 1;
        }
    return m;
}

inline TensorPtr saliency_to_tensor(const SaliencyCurve& c) {
    Mat g(static_cast<Eigen::Index>(c.scores.size()), 1);
    for (size_t i = 0; i < c.scores.size(); ++i) g(static_cast<Eigen::Index>(i), 0) = c.scores[i];
    return Tensor::create(std::move(g));
}

// --- mask pipeline ------------------------------------------------------

// Per-frame prompt: adapter output, blended through the memory bank from
// the second frame on. Pushed prompts equal the base prompt, so the blend
// is exact at train time too; the bank still exercises its ring contract.
inline std::vector<TensorPtr> mask_logit_sequence(const Model& m,
                                                  const std::vector<TensorPtr>& frames,
                                                  const TensorPtr& e) {
    TensorPtr base = m.mask_adapter.forward(e);
    MemoryBank bank;
    bank.capacity = static_cast<size_t>(m.cfg.k_mem);
    std::vector<TensorPtr> logits;
    for (size_t t = 0; t < frames.size(); ++t) {
        Eigen::RowVectorXd pooled = frames[t]->value.colwise().mean();
        TensorPtr prompt = base;
        if (!bank.empty()) {
            Eigen::RowVectorXd blended = bank.recall(pooled, base->value.row(0));
            // every pushed prompt equals base, so the blend is numerically
            // the base prompt; carry only the (zero) residual as a constant
            // so the gradient to base stays exact
            Mat resid = Mat::Zero(1, base->cols());
            resid.row(0) = blended - base->value.row(0);
            prompt = add_const(base, resid);
        }
        logits.push_back(m.mask_decoder.forward(frames[t], prompt));
        bank.push(pooled, base->value.row(0), static_cast<int>(t));
    }
    return logits;
}

// --- per-record losses --------------------------------------------------

struct RecordLoss {
    TensorPtr loss;
    LossReport report;
};

inline RecordLoss conversation_loss(const Model& m, const ConversationRecord& rec) {
    const Vocab& v = Vocab::get();
    auto frames = m.bb.encode_visual_frames(rec.visual);
    TensorPtr vis = m.bb.connect(frames);
    AssembledQuery q = build_task_sequence(m.bb, TaskKind::Conversation, rec.query_text,
                                           std::nullopt);
    std::vector<int> answer_ids = v.encode(rec.answer_text);
    answer_ids.push_back(Vocab::kEos);
    for (int id : answer_ids) q.text.push(id, TokenRole::Answer);
    LmPass p = run_lm(m, vis, q);
    // answers start right after the indicator; each target is predicted
    // from the previous row
    std::vector<int> rows, targets;
    for (size_t i = 0; i < q.text.size(); ++i)
        if (q.text.roles[i] == TokenRole::Answer) {
            rows.push_back(p.row_of_text(static_cast<int>(i)) - 1);
            targets.push_back(q.text.ids[i]);
        }
    TensorPtr l_mllm = loss_mllm(p.out.logits, rows, targets);
    // the assign row here is the one predicting the indicator, which is
    // followed by the answer, not an appended token
    int ind_pos = -1;
    for (size_t i = 0; i < q.text.size(); ++i)
        if (q.text.roles[i] == TokenRole::TaskIndicator) ind_pos = static_cast<int>(i);
    TensorPtr row = slice_rows(p.out.logits, p.row_of_text(ind_pos) - 1, 1);
    std::vector<TensorPtr> cols;
    for (int id : indicator_ids()) cols.push_back(slice_cols(row, id, 1));
    TensorPtr l_assign = loss_assign(concat_cols(cols), TaskKind::Conversation);
    RecordLoss r;
    r.loss = add(scale(l_mllm, m.weights.w_mllm), scale(l_assign, m.weights.w_assign));
    r.report = total_loss(l_mllm->value(0, 0), l_assign->value(0, 0), {});
    r.report.batch_composition["conversation"] = 1;
    return r;
}

inline RecordLoss task_loss(const Model& m, const TaskRecord& rec) {
    if (rec.kind == TaskKind::Conversation)
        throw DispatchError("conversation records take the dialogue path");
    auto frames = m.bb.encode_visual_frames(rec.visual);
    TensorPtr vis = m.bb.connect(frames);
    std::optional<Box> init_box;
    if (rec.kind == TaskKind::Tracking)
        init_box = std::get<TrackAnnotation>(rec.annotation).init_box;
    AssembledQuery q = build_task_sequence(m.bb, rec.kind, rec.query_text, init_box);
    const HeadId head = head_for_kind(rec.kind);
    LmPass p = run_lm(m, vis, q, m.bb.token_for(head).embedding);
    TensorPtr e = slice_rows(p.out.hidden, p.task_row(), 1);
    TensorPtr l_assign = loss_assign(restricted_assign_logits(p), rec.kind);

    TensorPtr l_task;
    switch (rec.kind) {
        case TaskKind::SpatialGrounding: {
            TensorPtr pred = m.region.forward(e);
            l_task = loss_region(pred, box_to_tensor(std::get<Box>(rec.annotation)), m.weights);
            break;
        }
        case TaskKind::TemporalGrounding: {
            const auto& ann = std::get<TemporalAnnotation>(rec.annotation);
            if (m.use_simple_temporal) {
                l_task = loss_span_l1(m.simple_temporal.forward(e), span_to_tensor(ann.span));
            } else {
                std::vector<int> qrows;
                for (size_t i = 0; i < q.text.size(); ++i)
                    if (q.text.roles[i] == TokenRole::Query)
                        qrows.push_back(p.row_of_text(static_cast<int>(i)));
                TensorPtr qfeats = gather_rows(p.out.hidden, qrows);
                auto out = m.temporal.forward(m.bb.frame_features(frames), qfeats, e);
                l_task = loss_temporal(out.span, out.saliency_logits, span_to_tensor(ann.span),
                                       saliency_to_tensor(ann.saliency));
            }
            break;
        }
        case TaskKind::Tracking: {
            const auto& ann = std::get<TrackAnnotation>(rec.annotation);
            auto logits = mask_logit_sequence(m, frames, e);
            std::vector<TensorPtr> gold;
            std::vector<bool> no_obj;
            for (size_t t = 0; t < ann.boxes.size(); ++t) {
                MaskGrid g = ann.boxes[t]
                                 ? rasterize_box_mask(*ann.boxes[t], m.cfg.frame_size,
                                                      m.cfg.frame_size)
                                 : MaskGrid{m.cfg.frame_size, m.cfg.frame_size,
                                            std::vector<uint8_t>(
                                                static_cast<size_t>(m.cfg.frame_size) *
                                                    m.cfg.frame_size,
                                                0),
                                            {}};
                gold.push_back(mask_to_tensor(g));
                no_obj.push_back(!ann.boxes[t].has_value());
            }
            l_task = loss_mask(logits, gold, no_obj);
            break;
        }
        case TaskKind::Segmentation: {
            const auto& ann = std::get<SegmentationAnnotation>(rec.annotation);
            auto logits = mask_logit_sequence(m, frames, e);
            std::vector<TensorPtr> gold;
            std::vector<bool> no_obj(ann.occluded.begin(), ann.occluded.end());
            for (const auto& g : ann.masks) gold.push_back(mask_to_tensor(g));
            l_task = loss_mask(logits, gold, no_obj);
            break;
        }
        case TaskKind::Conversation:
            throw DispatchError("conversation records take the dialogue path");
    }

    RecordLoss r;
    r.loss = add(scale(l_assign, m.weights.w_assign), scale(l_task, m.weights.w_task));
    r.report = total_loss(0.0, l_assign->value(0, 0),
                          {{head_name(head), l_task->value(0, 0)}});
    r.report.batch_composition[task_kind_name(rec.kind)] = 1;
    return r;
}

// --- prediction (evaluation path) --------------------------------------

struct Prediction {
    RoutingDecision routing;
    std::optional<Box> box;
    std::optional<TimeSpan> span;
    SaliencyCurve saliency;
    std::vector<std::optional<Box>> track_boxes;
    std::vector<MaskGrid> masks;
    std::string answer_text;
};

inline RoutingDecision route_only(const Model& m, const TaskKind kind_hint,
                                  const VisualInput& visual, const std::string& query,
                                  const std::optional<Box>& init_box) {
    (void)kind_hint;
    auto frames = m.bb.encode_visual_frames(visual);
    TensorPtr vis = m.bb.connect(frames);
    AssembledQuery q = build_query_sequence(m.bb, query, init_box);
    return assign_task(m.bb, vis, q);
}

// Runs the model end to end. When forced_kind is set the router is
// bypassed (used to score head quality independently of routing).
inline Prediction predict(const Model& m, const VisualInput& visual, const std::string& query,
                          const std::optional<Box>& init_box = std::nullopt,
                          std::optional<TaskKind> forced_kind = std::nullopt,
                          int max_answer_tokens = 40) {
    auto frames = m.bb.encode_visual_frames(visual);
    TensorPtr vis = m.bb.connect(frames);
    AssembledQuery q0 = build_query_sequence(m.bb, query, init_box);
    Prediction out;
    out.routing = assign_task(m.bb, vis, q0);
    TaskKind kind = forced_kind.value_or(out.routing.kind);

    if (kind == TaskKind::Conversation) {
        // greedy decode after the emitted indicator
        AssembledQuery q = build_task_sequence(m.bb, TaskKind::Conversation, query, init_box);
        std::vector<int> generated;
        for (int step = 0; step < max_answer_tokens; ++step) {
            AssembledQuery qq = q;
            for (int id : generated) qq.text.push(id, TokenRole::Answer);
            auto lm_out = m.bb.lm_forward(vis, qq.text, qq.injected);
            // generation stays inside the closed lexicon
            Eigen::Index best = 0;
            lm_out.logits->value.row(lm_out.logits->rows() - 1)
                .head(Vocab::get().size())
                .maxCoeff(&best);
            if (best == Vocab::kEos) break;
            generated.push_back(static_cast<int>(best));
        }
        out.answer_text = Vocab::get().decode(generated);
        return out;
    }

    const HeadId head = head_for_kind(kind);
    AssembledQuery q = build_task_sequence(m.bb, kind, query, init_box);
    LmPass p = run_lm(m, vis, q, m.bb.token_for(head).embedding);
    TensorPtr e = slice_rows(p.out.hidden, p.task_row(), 1);

    switch (kind) {
        case TaskKind::SpatialGrounding:
            out.box = m.region.predict(e);
            break;
        case TaskKind::TemporalGrounding: {
            if (m.use_simple_temporal) {
                out.span = m.simple_temporal.predict(e);
            } else {
                std::vector<int> qrows;
                for (size_t i = 0; i < q.text.size(); ++i)
                    if (q.text.roles[i] == TokenRole::Query)
                        qrows.push_back(p.row_of_text(static_cast<int>(i)));
                auto t = m.temporal.forward(m.bb.frame_features(frames),
                                            gather_rows(p.out.hidden, qrows), e);
                out.span = span_from_tensor(t.span);
                out.saliency = TemporalHead::saliency_curve(t.saliency_logits);
            }
            break;
        }
        case TaskKind::Tracking:
        case TaskKind::Segmentation: {
            auto logits = mask_logit_sequence(m, frames, e);
            for (const auto& lg : logits) {
                std::vector<double> flat(lg->value.data(), lg->value.data() + lg->size());
                out.masks.push_back(
                    MaskGrid::from_logits(flat, m.cfg.frame_size, m.cfg.frame_size));
            }
            if (kind == TaskKind::Tracking)
                for (const auto& mk : out.masks) out.track_boxes.push_back(try_box_from_mask(mk));
            break;
        }
        case TaskKind::Conversation:
            break;
    }
    return out;
}

}  // namespace tpo

#endif  // TPO_MODEL_HPP
