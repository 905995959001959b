// SPDX-License-Identifier: Apache-2.0
//
// Every term of the composed training objective, differentiable through
// the graph, plus the per-batch LossReport bookkeeping. The total is the
// plain unweighted sum L_mllm + L_assign + sum_i L_task_i; optional
// weights are config knobs that default to 1.

#ifndef TPO_LOSSES_HPP
#define TPO_LOSSES_HPP

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tpo/tensor.hpp"
#include "tpo/types.hpp"

namespace tpo {

enum class RegionLossMode { L1Giou, Mse };

struct LossWeights {
    double lambda_l1 = 5.0;   // DETR convention
    double lambda_giou = 2.0;
    double w_mllm = 1.0;      // Eq-level weights; unweighted sum by default
    double w_assign = 1.0;
    double w_task = 1.0;
    RegionLossMode region_mode = RegionLossMode::L1Giou;
};

// Token-level cross-entropy restricted to the given logit rows.
inline TensorPtr loss_cross_entropy(const TensorPtr& logits, const std::vector<int>& rows,
                                    const std::vector<int>& targets) {
    if (rows.size() != targets.size() || rows.empty())
        throw std::invalid_argument("cross_entropy: rows/targets mismatch");
    TensorPtr lsm = log_softmax_rows(logits);
    std::vector<TensorPtr> picked;
    picked.reserve(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        TensorPtr r = slice_rows(lsm, rows[i], 1);
        picked.push_back(gather_cols_per_row(r, {targets[i]}));
    }
    return scale(mean(concat_rows(picked)), -1.0);
}

// L_mllm: cross-entropy over the answer span only. rows[i] is the logit
// row that predicts answer token targets[i].
inline TensorPtr loss_mllm(const TensorPtr& logits, const std::vector<int>& answer_rows,
                           const std::vector<int>& answer_targets) {
    return loss_cross_entropy(logits, answer_rows, answer_targets);
}

// L_assign: 5-way cross-entropy over the restricted routing logits (1, 5).
inline TensorPtr loss_assign(const TensorPtr& routing_logits, TaskKind gold) {
    if (routing_logits->rows() != 1 || routing_logits->cols() != kNumTaskKinds)
        throw std::invalid_argument("loss_assign: expected (1, 5) logits");
    return loss_cross_entropy(routing_logits, {0}, {static_cast<int>(gold)});
}

// Differentiable generalized IoU of two (1, 4) corner boxes, in [-1, 1].
inline TensorPtr giou_op(const TensorPtr& pred, const TensorPtr& gold) {
    auto coord = [](const TensorPtr& b, int i) { return slice_cols(b, i, 1); };
    TensorPtr zero = Tensor::scalar(0.0);
    TensorPtr ix1 = maximum(coord(pred, 0), coord(gold, 0));
    TensorPtr iy1 = maximum(coord(pred, 1), coord(gold, 1));
    TensorPtr ix2 = minimum(coord(pred, 2), coord(gold, 2));
    TensorPtr iy2 = minimum(coord(pred, 3), coord(gold, 3));
    TensorPtr iw = maximum(sub(ix2, ix1), zero);
    TensorPtr ih = maximum(sub(iy2, iy1), zero);
    TensorPtr inter = mul(iw, ih);
    auto area = [&](const TensorPtr& b) {
        return mul(sub(coord(b, 2), coord(b, 0)), sub(coord(b, 3), coord(b, 1)));
    };
    TensorPtr uni = sub(add(area(pred), area(gold)), inter);
    TensorPtr iou = div(inter, add_scalar(uni, 1e-12));
    TensorPtr hx1 = minimum(coord(pred, 0), coord(gold, 0));
    TensorPtr hy1 = minimum(coord(pred, 1), coord(gold, 1));
    TensorPtr hx2 = maximum(coord(pred, 2), coord(gold, 2));
    TensorPtr hy2 = maximum(coord(pred, 3), coord(gold, 3));
    TensorPtr hull = mul(sub(hx2, hx1), sub(hy2, hy1));
    TensorPtr gap = div(sub(hull, uni), add_scalar(hull, 1e-12));
    return sub(iou, gap);
}

// lambda_l1 * sum|d| + lambda_giou * (1 - GIoU); or plain MSE when the
// exact-appendix mode is selected.
inline TensorPtr loss_region(const TensorPtr& pred, const TensorPtr& gold,
                             const LossWeights& w = {}) {
    if (w.region_mode == RegionLossMode::Mse) return mean(square(sub(pred, gold)));
    TensorPtr l1 = sum(abs_op(sub(pred, gold)));
    TensorPtr g = giou_op(pred, gold);
    TensorPtr one_minus = add_scalar(scale(g, -1.0), 1.0);
    return add(scale(l1, w.lambda_l1), scale(one_minus, w.lambda_giou));
}

// Binary cross-entropy with logits, averaged over all elements.
inline TensorPtr bce_with_logits(const TensorPtr& logits, const TensorPtr& targets) {
    check_same_shape(logits, targets, "bce_with_logits");
    return mean(sub(softplus(logits), mul(logits, targets)));
}

// L1 on the span + BCE on per-frame saliency.
inline TensorPtr loss_temporal(const TensorPtr& pred_span, const TensorPtr& saliency_logits,
                               const TensorPtr& gold_span, const TensorPtr& gold_saliency) {
    TensorPtr l1 = sum(abs_op(sub(pred_span, gold_span)));
    return add(l1, bce_with_logits(saliency_logits, gold_saliency));
}

// Span-only variant for the simple-head ablation.
inline TensorPtr loss_span_l1(const TensorPtr& pred_span, const TensorPtr& gold_span) {
    return sum(abs_op(sub(pred_span, gold_span)));
}

// BCE + Dice for one frame; Dice uses +1 smoothing so empty-vs-empty is 0.
inline TensorPtr loss_mask_frame(const TensorPtr& logits, const TensorPtr& gold,
                                 bool no_object) {
    TensorPtr bce = bce_with_logits(logits, gold);
    if (no_object) return bce;  // box/dice supervision masked on occluded frames
    TensorPtr p = sigmoid(logits);
    TensorPtr inter = sum(mul(p, gold));
    TensorPtr denom = add_scalar(add(sum(p), sum(gold)), 1.0);
    TensorPtr dice = sub(Tensor::scalar(1.0), div(add_scalar(scale(inter, 2.0), 1.0), denom));
    return add(bce, dice);
}

// Mean over frames.
inline TensorPtr loss_mask(const std::vector<TensorPtr>& logits_seq,
                           const std::vector<TensorPtr>& gold_seq,
                           const std::vector<bool>& no_object) {
    if (logits_seq.size() != gold_seq.size() || logits_seq.empty())
        throw std::invalid_argument("loss_mask: sequence mismatch");
    TensorPtr acc = loss_mask_frame(logits_seq[0], gold_seq[0], !no_object.empty() && no_object[0]);
    for (size_t i = 1; i < logits_seq.size(); ++i)
        acc = add(acc, loss_mask_frame(logits_seq[i], gold_seq[i],
                                       i < no_object.size() && no_object[i]));
    return scale(acc, 1.0 / static_cast<double>(logits_seq.size()));
}

struct LossReport {
    double l_mllm{0};
    double l_assign{0};
    std::map<std::string, double> l_task_per_head;
    double total{0};
    std::map<std::string, int> batch_composition;

    double recomputed_sum() const {
        double s = l_mllm + l_assign;
        for (const auto& [_, v] : l_task_per_head) s += v;
        return s;
    }
    bool additive(double rel_tol = 1e-6) const {
        double s = recomputed_sum();
        double denom = std::max(1.0, std::abs(s));
        return std::abs(s - total) <= rel_tol * denom;
    }
};

// Composes the report; heads absent from the batch contribute exactly 0.
inline LossReport total_loss(double l_mllm, double l_assign,
                             const std::map<std::string, double>& l_task) {
    LossReport r;
    r.l_mllm = l_mllm;
    r.l_assign = l_assign;
    r.l_task_per_head = l_task;
    r.total = r.recomputed_sum();
    return r;
}

}  // namespace tpo

#endif  // TPO_LOSSES_HPP
