// SPDX-License-Identifier: Apache-2.0
//
// Evaluation: per-task metric tables, routing accuracy, conversation
// exact-match, and the text-only baseline scored by parsing coordinates
// out of generated answers.

#ifndef TPO_EVAL_HPP
#define TPO_EVAL_HPP

#include <chrono>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpo/data.hpp"
#include "tpo/metrics.hpp"
#include "tpo/model.hpp"

namespace tpo {

constexpr int kEvalSchemaVersion = 1;

struct EvalReport {
    int schema_version{kEvalSchemaVersion};
    uint64_t config_hash{0};
    uint64_t seed{0};
    double wall_clock_sec{0};
    double routing_accuracy{-1};
    double spatial_miou{-1};
    std::map<double, double> spatial_recall;
    double temporal_miou{-1};
    std::map<double, double> temporal_recall;
    double tracking_auc{-1};
    double tracking_precision{-1};
    double seg_j{-1}, seg_f{-1}, seg_jf{-1};
    double conversation_accuracy{-1};
};

inline json eval_report_to_json(const EvalReport& r) {
    auto recall_json = [](const std::map<double, double>& m) {
        json j = json::object();
        for (const auto& [k, v] : m) {
            char key[16];
            std::snprintf(key, sizeof(key), "%.1f", k);
            j[key] = v;
        }
        return j;
    };
    return json{{"schema_version", r.schema_version},
                {"config_hash", r.config_hash},
                {"seed", r.seed},
                {"wall_clock_sec", r.wall_clock_sec},
                {"routing_accuracy", r.routing_accuracy},
                {"spatial_miou", r.spatial_miou},
                {"spatial_recall", recall_json(r.spatial_recall)},
                {"temporal_miou", r.temporal_miou},
                {"temporal_recall", recall_json(r.temporal_recall)},
                {"tracking_auc", r.tracking_auc},
                {"tracking_precision", r.tracking_precision},
                {"seg_j", r.seg_j},
                {"seg_f", r.seg_f},
                {"seg_jf", r.seg_jf},
                {"conversation_accuracy", r.conversation_accuracy}};
}

// json dumps are compared verbatim by the determinism check, so exclude
// wall clock, the only nondeterministic field.
inline std::string eval_report_fingerprint(const EvalReport& r) {
    json j = eval_report_to_json(r);
    j.erase("wall_clock_sec");
    return j.dump();
}

inline std::optional<Box> init_box_of(const TaskRecord& rec) {
    if (rec.kind == TaskKind::Tracking)
        return std::get<TrackAnnotation>(rec.annotation).init_box;
    return std::nullopt;
}

// Fraction of records whose restricted-argmax task matches the gold kind.
inline double eval_routing(const Model& m, const std::vector<GeneratedTask>& tasks,
                           const std::vector<GeneratedConversation>& convs) {
    int hit = 0, n = 0;
    for (const auto& g : tasks) {
        auto d = route_only(m, g.record.kind, g.record.visual, g.record.query_text,
                            init_box_of(g.record));
        hit += d.kind == g.record.kind;
        ++n;
    }
    for (const auto& g : convs) {
        auto d = route_only(m, TaskKind::Conversation, g.record.visual, g.record.query_text,
                            std::nullopt);
        hit += d.kind == TaskKind::Conversation;
        ++n;
    }
    return n ? static_cast<double>(hit) / n : 0.0;
}

// Per-sample IoU of the region head against the gold box; gold-routed so
// the score isolates head quality.
inline std::vector<double> eval_spatial_ious(const Model& m,
                                             const std::vector<GeneratedTask>& recs) {
    std::vector<double> ious;
    for (const auto& g : recs) {
        auto p = predict(m, g.record.visual, g.record.query_text, std::nullopt,
                         TaskKind::SpatialGrounding);
        ious.push_back(p.box ? metric_iou(*p.box, std::get<Box>(g.record.annotation)) : 0.0);
    }
    return ious;
}

inline std::vector<double> eval_temporal_tious(const Model& m,
                                               const std::vector<GeneratedTask>& recs) {
    std::vector<double> tious;
    for (const auto& g : recs) {
        auto p = predict(m, g.record.visual, g.record.query_text, std::nullopt,
                         TaskKind::TemporalGrounding);
        const auto& gold = std::get<TemporalAnnotation>(g.record.annotation).span;
        tious.push_back(p.span ? metric_tiou(*p.span, gold) : 0.0);
    }
    return tious;
}

inline TrackingScore eval_tracking_score(const Model& m, const std::vector<GeneratedTask>& recs) {
    double auc = 0, prec = 0;
    for (const auto& g : recs) {
        const auto& ann = std::get<TrackAnnotation>(g.record.annotation);
        auto p = predict(m, g.record.visual, g.record.query_text, ann.init_box,
                         TaskKind::Tracking);
        auto s = metric_tracking(p.track_boxes, ann.boxes);
        auc += s.success_auc;
        prec += s.precision;
    }
    TrackingScore s;
    if (!recs.empty()) {
        s.success_auc = auc / recs.size();
        s.precision = prec / recs.size();
    }
    return s;
}

inline JfScore eval_segmentation_score(const Model& m, const std::vector<GeneratedTask>& recs) {
    JfScore total;
    for (const auto& g : recs) {
        const auto& ann = std::get<SegmentationAnnotation>(g.record.annotation);
        auto p = predict(m, g.record.visual, g.record.query_text, std::nullopt,
                         TaskKind::Segmentation);
        auto s = metric_jf(p.masks, ann.masks);
        total.j += s.j;
        total.f += s.f;
    }
    if (!recs.empty()) {
        total.j /= recs.size();
        total.f /= recs.size();
        total.jf = 0.5 * (total.j + total.f);
    }
    return total;
}

inline double eval_conversation_accuracy(const Model& m,
                                         const std::vector<GeneratedConversation>& recs) {
    int hit = 0;
    for (const auto& g : recs) {
        auto p = predict(m, g.record.visual, g.record.query_text, std::nullopt,
                         TaskKind::Conversation);
        std::string gold = Vocab::get().decode(Vocab::get().encode(g.record.answer_text));
        hit += p.answer_text == gold;
    }
    return recs.empty() ? 0.0 : static_cast<double>(hit) / recs.size();
}

// --- text-only baseline -------------------------------------------------

// The baseline answers with coordinate text; score by parsing the first
// bracketed group. Unparseable answers score 0, mirroring how a grounding
// benchmark would score free text with no valid box.
inline std::vector<double> eval_spatial_ious_text(const Model& m,
                                                  const std::vector<GeneratedTask>& recs) {
    std::vector<double> ious;
    for (const auto& g : recs) {
        auto p = predict(m, g.record.visual, g.record.query_text, std::nullopt,
                         TaskKind::Conversation);
        auto groups = parse_number_groups(p.answer_text);
        double iou = 0.0;
        if (!groups.empty() && groups[0].size() == 4) {
            Box b{groups[0][0], groups[0][1], groups[0][2], groups[0][3]};
            if (b.valid()) iou = metric_iou(b, std::get<Box>(g.record.annotation));
        }
        ious.push_back(iou);
    }
    return ious;
}

inline std::vector<double> eval_temporal_tious_text(const Model& m,
                                                    const std::vector<GeneratedTask>& recs) {
    std::vector<double> tious;
    for (const auto& g : recs) {
        auto p = predict(m, g.record.visual, g.record.query_text, std::nullopt,
                         TaskKind::Conversation);
        auto groups = parse_number_groups(p.answer_text);
        double tiou = 0.0;
        if (!groups.empty() && groups[0].size() == 2) {
            TimeSpan s{groups[0][0], groups[0][1]};
            if (s.valid())
                tiou = metric_tiou(s, std::get<TemporalAnnotation>(g.record.annotation).span);
        }
        tious.push_back(tiou);
    }
    return tious;
}

// --- full report --------------------------------------------------------

struct EvalSet {
    std::vector<GeneratedTask> spatial, temporal, tracking, segmentation;
    std::vector<GeneratedConversation> conversations;
};

inline EvalSet make_eval_set(uint64_t seed, int n_per_task, int frame_size = 32,
                             const std::vector<size_t>& template_indices = {},
                             int frames_temporal = 16, int frames_tracking = 8,
                             int frames_segmentation = 4) {
    EvalSet s;
    s.spatial = gen_spatial(seed, n_per_task, frame_size, template_indices);
    s.temporal = gen_temporal(seed + 1, n_per_task, frames_temporal, frame_size,
                              template_indices);
    s.tracking = gen_tracking(seed + 2, n_per_task, frames_tracking, frame_size,
                              template_indices);
    s.segmentation = gen_segmentation(seed + 3, n_per_task, frames_segmentation, frame_size,
                                      template_indices);
    s.conversations = gen_conversation(seed + 4, n_per_task, false, frame_size, template_indices);
    return s;
}

inline EvalReport evaluate(const Model& m, const EvalSet& set, uint64_t seed,
                           uint64_t config_hash) {
    auto t0 = std::chrono::steady_clock::now();
    EvalReport r;
    r.seed = seed;
    r.config_hash = config_hash;
    std::vector<GeneratedTask> all_tasks;
    for (const auto* v : {&set.spatial, &set.temporal, &set.tracking, &set.segmentation})
        all_tasks.insert(all_tasks.end(), v->begin(), v->end());
    r.routing_accuracy = eval_routing(m, all_tasks, set.conversations);
    auto ious = eval_spatial_ious(m, set.spatial);
    r.spatial_miou = metric_miou(ious);
    r.spatial_recall = metric_recall_at(ious);
    auto tious = eval_temporal_tious(m, set.temporal);
    r.temporal_miou = metric_miou(tious);
    r.temporal_recall = metric_recall_at(tious);
    auto ts = eval_tracking_score(m, set.tracking);
    r.tracking_auc = ts.success_auc;
    r.tracking_precision = ts.precision;
    auto jf = eval_segmentation_score(m, set.segmentation);
    r.seg_j = jf.j;
    r.seg_f = jf.f;
    r.seg_jf = jf.jf;
    r.conversation_accuracy = eval_conversation_accuracy(m, set.conversations);
    r.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

}  // namespace tpo

#endif  // TPO_EVAL_HPP
