// SPDX-License-Identifier: Apache-2.0
//
// Task assignment and dispatch. The LM reads the visual tokens and the
// query, then the logits at the first generated position are restricted
// to the five task-indicator tokens and renormalized; argmax picks the
// task. Conversation bypasses the heads entirely.

#ifndef TPO_ROUTING_HPP
#define TPO_ROUTING_HPP

#include <optional>
#include <vector>

#include "tpo/backbone.hpp"
#include "tpo/tensor.hpp"
#include "tpo/types.hpp"
#include "tpo/vocab.hpp"

namespace tpo {

struct RoutingDecision {
    TaskKind kind{TaskKind::Conversation};
    double confidence{0};
    int indicator_position{0};  // sequence row whose logits decided the task
};

struct DispatchPlan {
    TaskKind kind{TaskKind::Conversation};
    std::optional<HeadId> head;        // empty for conversation
    bool needs_box_prompt{false};      // tracking seeds the mask head with a box
};

inline DispatchPlan dispatch_for(TaskKind kind) {
    DispatchPlan p;
    p.kind = kind;
    if (kind != TaskKind::Conversation) p.head = head_for_kind(kind);
    p.needs_box_prompt = kind == TaskKind::Tracking;
    return p;
}

// BOS + encoded query; tracking records get a trailing placeholder row
// where the box-prompt embedding is injected.
struct AssembledQuery {
    TokenSequence text;
    TensorPtr injected;  // box prompt or nullptr
};

inline AssembledQuery build_query_sequence(const Backbone& bb, const std::string& query_text,
                                           const std::optional<Box>& init_box = std::nullopt) {
    AssembledQuery q;
    q.text.push(Vocab::kBos, TokenRole::Query);
    for (int id : Vocab::get().encode(query_text)) q.text.push(id, TokenRole::Query);
    if (init_box) {
        q.text.push(Vocab::kVis, TokenRole::VisualPlaceholder);
        q.injected = bb.encode_box_prompt(*init_box);
    }
    return q;
}

inline const std::vector<int>& indicator_ids() {
    static const std::vector<int> ids = {Vocab::kConv, Vocab::kBox, Vocab::kTime, Vocab::kTrack,
                                         Vocab::kMask};
    return ids;
}

// (1, 5) logits over the indicator tokens at the first generated
// position, differentiable for L_assign.
inline TensorPtr routing_logits(const LanguageModel::Out& out) {
    TensorPtr last = slice_rows(out.logits, out.logits->rows() - 1, 1);
    std::vector<TensorPtr> cols;
    for (int id : indicator_ids()) cols.push_back(slice_cols(last, id, 1));
    return concat_cols(cols);
}

inline RoutingDecision decide_from_logits(const TensorPtr& restricted, int position) {
    Eigen::Index best = 0;
    restricted->value.row(0).maxCoeff(&best);
    // softmax over the restricted set for the reported confidence
    Mat z = restricted->value.row(0).array() - restricted->value.row(0).maxCoeff();
    Mat e = z.array().exp();
    RoutingDecision d;
    d.kind = static_cast<TaskKind>(best);
    d.confidence = e(0, best) / e.sum();
    d.indicator_position = position;
    return d;
}

inline RoutingDecision assign_task(const Backbone& bb, const TensorPtr& visual_tokens,
                                   const AssembledQuery& q) {
    auto out = bb.lm_forward(visual_tokens, q.text, q.injected);
    TensorPtr restricted = routing_logits(out);
    return decide_from_logits(restricted, static_cast<int>(out.logits->rows()) - 1);
}

}  // namespace tpo

#endif  // TPO_ROUTING_HPP
