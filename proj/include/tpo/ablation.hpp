// SPDX-License-Identifier: Apache-2.0
//
// Comparative runs. Every arm within an ablation shares the data
// manifest, seed and step budget; only the mechanism under study differs.

#ifndef TPO_ABLATION_HPP
#define TPO_ABLATION_HPP

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpo/eval.hpp"
#include "tpo/training.hpp"

namespace tpo {

struct AblationOptions {
    std::vector<uint64_t> seeds{11, 12, 13};
    int train_records_per_task{64};
    int eval_records_per_task{32};
    int steps{400};
    int batch_size{4};
    double lr_scale{1.0};
    uint64_t data_seed{900};
};

struct AblationArm {
    std::string name;
    // metric name -> per-seed values, plus the mean under "<name>"
    std::map<std::string, std::vector<double>> per_seed;
    std::map<std::string, double> mean;
};

struct AblationReport {
    std::string kind;
    std::vector<uint64_t> seeds;
    uint64_t config_hash{0};
    json data_manifest;
    std::vector<AblationArm> arms;
};

inline json ablation_report_to_json(const AblationReport& r) {
    json arms = json::array();
    for (const auto& a : r.arms) {
        json per = json::object(), mean = json::object();
        for (const auto& [k, v] : a.per_seed) per[k] = v;
        for (const auto& [k, v] : a.mean) mean[k] = v;
        arms.push_back({{"name", a.name}, {"per_seed", per}, {"mean", mean}});
    }
    return json{{"kind", r.kind},
                {"seeds", r.seeds},
                {"config_hash", r.config_hash},
                {"data_manifest", r.data_manifest},
                {"arms", arms}};
}

namespace detail_ablate {

inline void finish_arm(AblationArm& a) {
    for (const auto& [k, vals] : a.per_seed) {
        double s = 0;
        for (double v : vals) s += v;
        a.mean[k] = vals.empty() ? 0.0 : s / vals.size();
    }
}

// Stage-2-style plan restricted to a task subset; routing is bypassed at
// eval time, so stage 1 is not part of the matched budget.
inline StagePlan subset_plan(const BackboneConfig& cfg, const std::vector<std::string>& kinds,
                             int steps, int batch_size) {
    StagePlan p = build_stage_plan("2", cfg);
    p.steps = steps;
    p.batch_size = batch_size;
    p.mixture.clear();
    for (const auto& k : kinds) p.mixture[k] = 1.0;
    if (p.mixture.count("conversation")) {
        // conversation needs the dialogue channel, which stage 2 freezes
        p.lr["lm_lora."] = 2e-5;
    }
    return p;
}

inline TrainSet build_train_set(const AblationOptions& o, int frames_temporal = 16) {
    TrainSet s;
    s.tasks[TaskKind::SpatialGrounding] = gen_spatial(o.data_seed, o.train_records_per_task);
    s.tasks[TaskKind::TemporalGrounding] =
        gen_temporal(o.data_seed + 1, o.train_records_per_task, frames_temporal);
    s.tasks[TaskKind::Tracking] = gen_tracking(o.data_seed + 2, o.train_records_per_task);
    s.tasks[TaskKind::Segmentation] = gen_segmentation(o.data_seed + 3, o.train_records_per_task);
    s.conversations = gen_conversation(o.data_seed + 4, o.train_records_per_task, false);
    return s;
}

inline json manifest(const AblationOptions& o) {
    return json{{"data_seed", o.data_seed},
                {"train_records_per_task", o.train_records_per_task},
                {"eval_records_per_task", o.eval_records_per_task},
                {"steps", o.steps},
                {"batch_size", o.batch_size}};
}

}  // namespace detail_ablate

// Task heads vs. the same tasks serialized to coordinate text.
inline AblationReport ablate_textualized(const BackboneConfig& base_cfg,
                                         const AblationOptions& o) {
    AblationReport rep;
    rep.kind = "textualized";
    rep.seeds = o.seeds;
    rep.config_hash = content_hash(json(base_cfg));
    rep.data_manifest = detail_ablate::manifest(o);
    AblationArm heads_arm{"task_heads", {}, {}};
    AblationArm text_arm{"textualized", {}, {}};

    TrainSet train = detail_ablate::build_train_set(o);
    EvalSet eval_set = make_eval_set(o.data_seed + 100, o.eval_records_per_task);

    // same records, serialized through the text channel
    std::vector<GeneratedConversation> text_train;
    for (TaskKind k : {TaskKind::SpatialGrounding, TaskKind::TemporalGrounding})
        for (const auto& g : train.tasks[k]) {
            GeneratedConversation c;
            c.record = textualize(g.record);
            c.scene = g.scene;
            text_train.push_back(std::move(c));
        }

    for (uint64_t seed : o.seeds) {
        BackboneConfig cfg = base_cfg;
        cfg.seed = seed;
        TrainOptions topt;
        topt.lr_scale = o.lr_scale;
        topt.sample_seed = seed;

        {
            Model m(cfg);
            AdamW opt;
            StagePlan plan =
                detail_ablate::subset_plan(cfg, {"spatial", "temporal"}, o.steps, o.batch_size);
            train_stage(m, plan, train, opt, topt);
            heads_arm.per_seed["spatial_miou"].push_back(
                metric_miou(eval_spatial_ious(m, eval_set.spatial)));
            heads_arm.per_seed["temporal_r_at_0.5"].push_back(
                metric_recall_at(eval_temporal_tious(m, eval_set.temporal)).at(0.5));
        }
        {
            Model m(cfg);
            AdamW opt;
            StagePlan plan;
            plan.stage = "text";
            plan.steps = o.steps;
            plan.batch_size = o.batch_size;
            plan.mixture = {{"conversation", 1}};
            // the text arm gets the whole language pathway, not just LoRA
            plan.lr = {{"lm_lora.", 1e-4}, {"lm.head", 1e-4}, {"lm.tok_embed", 1e-4},
                       {"lm.pos_embed", 1e-4}};
            TrainSet text_set;
            text_set.conversations = text_train;
            train_stage(m, plan, text_set, opt, topt);
            text_arm.per_seed["spatial_miou"].push_back(
                metric_miou(eval_spatial_ious_text(m, eval_set.spatial)));
            text_arm.per_seed["temporal_r_at_0.5"].push_back(
                metric_recall_at(eval_temporal_tious_text(m, eval_set.temporal)).at(0.5));
        }
    }
    detail_ablate::finish_arm(heads_arm);
    detail_ablate::finish_arm(text_arm);
    rep.arms = {heads_arm, text_arm};
    return rep;
}

// DETR-style temporal head vs. the bare 2-layer MLP.
inline AblationReport ablate_simple_head(const BackboneConfig& base_cfg,
                                         const AblationOptions& o) {
    AblationReport rep;
    rep.kind = "simple_head";
    rep.seeds = o.seeds;
    rep.config_hash = content_hash(json(base_cfg));
    rep.data_manifest = detail_ablate::manifest(o);
    AblationArm strong{"temporal_head", {}, {}};
    AblationArm simple{"simple_temporal_head", {}, {}};

    TrainSet train = detail_ablate::build_train_set(o);
    EvalSet eval_set = make_eval_set(o.data_seed + 100, o.eval_records_per_task);

    for (uint64_t seed : o.seeds) {
        BackboneConfig cfg = base_cfg;
        cfg.seed = seed;
        TrainOptions topt;
        topt.lr_scale = o.lr_scale;
        topt.sample_seed = seed;
        for (bool use_simple : {false, true}) {
            Model m(cfg);
            m.use_simple_temporal = use_simple;
            AdamW opt;
            StagePlan plan = detail_ablate::subset_plan(cfg, {"temporal"}, o.steps, o.batch_size);
            train_stage(m, plan, train, opt, topt);
            auto tious = eval_temporal_tious(m, eval_set.temporal);
            AblationArm& arm = use_simple ? simple : strong;
            arm.per_seed["temporal_r_at_0.5"].push_back(metric_recall_at(tious).at(0.5));
            arm.per_seed["temporal_miou"].push_back(metric_miou(tious));
        }
    }
    detail_ablate::finish_arm(strong);
    detail_ablate::finish_arm(simple);
    rep.arms = {strong, simple};
    return rep;
}

// Which tasks train together: T / R / M / R+M / T+R+M / T+R+M+C.
inline AblationReport ablate_head_subsets(const BackboneConfig& base_cfg,
                                          const AblationOptions& o) {
    AblationReport rep;
    rep.kind = "head_subsets";
    rep.seeds = o.seeds;
    rep.config_hash = content_hash(json(base_cfg));
    rep.data_manifest = detail_ablate::manifest(o);

    const std::vector<std::pair<std::string, std::vector<std::string>>> rows = {
        {"T", {"temporal"}},
        {"R", {"spatial"}},
        {"M", {"tracking", "segmentation"}},
        {"R+M", {"spatial", "tracking", "segmentation"}},
        {"T+R+M", {"temporal", "spatial", "tracking", "segmentation"}},
        {"T+R+M+C", {"temporal", "spatial", "tracking", "segmentation", "conversation"}},
    };

    TrainSet train = detail_ablate::build_train_set(o);
    EvalSet eval_set = make_eval_set(o.data_seed + 100, o.eval_records_per_task);

    for (const auto& [name, kinds] : rows) {
        AblationArm arm{name, {}, {}};
        auto has = [&](const char* k) {
            for (const auto& s : kinds)
                if (s == k) return true;
            return false;
        };
        for (uint64_t seed : o.seeds) {
            BackboneConfig cfg = base_cfg;
            cfg.seed = seed;
            TrainOptions topt;
            topt.lr_scale = o.lr_scale;
            topt.sample_seed = seed;
            Model m(cfg);
            AdamW opt;
            StagePlan plan = detail_ablate::subset_plan(cfg, kinds, o.steps, o.batch_size);
            train_stage(m, plan, train, opt, topt);
            if (has("temporal"))
                arm.per_seed["temporal_r_at_0.5"].push_back(
                    metric_recall_at(eval_temporal_tious(m, eval_set.temporal)).at(0.5));
            if (has("spatial"))
                arm.per_seed["spatial_miou"].push_back(
                    metric_miou(eval_spatial_ious(m, eval_set.spatial)));
            if (has("tracking"))
                arm.per_seed["tracking_auc"].push_back(
                    eval_tracking_score(m, eval_set.tracking).success_auc);
            if (has("segmentation"))
                arm.per_seed["seg_j"].push_back(
                    eval_segmentation_score(m, eval_set.segmentation).j);
        }
        detail_ablate::finish_arm(arm);
        rep.arms.push_back(arm);
    }
    return rep;
}

// Temporal training with vs. without temporally grounded dialogue mixed in.
inline AblationReport ablate_no_reasoning_mix(const BackboneConfig& base_cfg,
                                              const AblationOptions& o) {
    AblationReport rep;
    rep.kind = "no_reasoning_mix";
    rep.seeds = o.seeds;
    rep.config_hash = content_hash(json(base_cfg));
    rep.data_manifest = detail_ablate::manifest(o);
    AblationArm with_mix{"with_temporal_dialogue", {}, {}};
    AblationArm without{"without_temporal_dialogue", {}, {}};

    TrainSet base_train = detail_ablate::build_train_set(o);
    EvalSet eval_set = make_eval_set(o.data_seed + 100, o.eval_records_per_task);

    for (uint64_t seed : o.seeds) {
        BackboneConfig cfg = base_cfg;
        cfg.seed = seed;
        TrainOptions topt;
        topt.lr_scale = o.lr_scale;
        topt.sample_seed = seed;
        for (bool temporal_refs : {true, false}) {
            Model m(cfg);
            AdamW opt;
            TrainSet train = base_train;
            train.conversations =
                gen_conversation(o.data_seed + 4, o.train_records_per_task, temporal_refs);
            StagePlan plan = detail_ablate::subset_plan(cfg, {"temporal", "conversation"},
                                                        o.steps, o.batch_size);
            train_stage(m, plan, train, opt, topt);
            AblationArm& arm = temporal_refs ? with_mix : without;
            arm.per_seed["temporal_r_at_0.5"].push_back(
                metric_recall_at(eval_temporal_tious(m, eval_set.temporal)).at(0.5));
        }
    }
    detail_ablate::finish_arm(with_mix);
    detail_ablate::finish_arm(without);
    rep.arms = {with_mix, without};
    return rep;
}

inline AblationReport run_ablation(const std::string& kind, const BackboneConfig& cfg,
                                   const AblationOptions& o = {}) {
    if (kind == "textualized") return ablate_textualized(cfg, o);
    if (kind == "simple_head") return ablate_simple_head(cfg, o);
    if (kind == "head_subsets") return ablate_head_subsets(cfg, o);
    if (kind == "no_reasoning_mix") return ablate_no_reasoning_mix(cfg, o);
    throw std::invalid_argument("unknown ablation kind: " + kind);
}

}  // namespace tpo

#endif  // TPO_ABLATION_HPP
