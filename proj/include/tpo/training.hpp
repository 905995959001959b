// SPDX-License-Identifier: Apache-2.0
//
// Staged training: per-stage freeze/lr maps keyed by parameter-name
// prefixes, warmup + cosine schedule, decoupled-weight-decay Adam, and
// the optimization loop with mixture sampling and loss logging.

#ifndef TPO_TRAINING_HPP
#define TPO_TRAINING_HPP

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tpo/checkpoint.hpp"
#include "tpo/data.hpp"
#include "tpo/model.hpp"

namespace tpo {

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OptimConfig {
    double weight_decay = 0.02;
    double warmup_ratio = 0.2;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// Linear warmup to peak over warmup_ratio*total, then cosine decay to 0.
inline double lr_schedule(int step, int total_steps, double peak, double warmup_ratio = 0.2) {
    if (total_steps <= 0 || peak <= 0) return 0.0;
    const double warm = warmup_ratio * total_steps;
    if (step <= 0) return 0.0;
    if (step < warm) return peak * step / warm;
    if (step >= total_steps) return 0.0;
    const double t = (step - warm) / (total_steps - warm);
    return peak * 0.5 * (1.0 + std::cos(t * M_PI));
}

// Which modules train at which peak lr; any parameter whose name matches
// no prefix (or maps to 0) is frozen. Longest matching prefix wins.
struct StagePlan {
    std::string stage;                    // "1", "2", "3a", "3b"
    std::map<std::string, double> lr;     // name prefix -> peak lr
    int steps{0};
    int batch_size{4};
    std::map<std::string, double> mixture;  // task-kind name -> sampling weight
    bool assign_only_tasks{false};          // stage 1 supervises routing only

    double lr_for(const std::string& param_name) const {
        size_t best_len = 0;
        double best = 0.0;
        for (const auto& [prefix, v] : lr)
            if (param_name.rfind(prefix, 0) == 0 && prefix.size() >= best_len) {
                best_len = prefix.size();
                best = v;
            }
        return best;
    }
    bool trainable(const std::string& param_name) const { return lr_for(param_name) > 0.0; }
};

// Stage lrs follow the training-settings table: the LM trains through its
// low-rank adapter at 2e-5 in every stage; heads and task tokens join in
// stage 2 (temporal token 2e-4, heads 1e-4, mask decoder always frozen);
// stage 3 unfreezes the vision encoder and connector at 2e-5. "3b" is
// stage 3 with conversation data mixed back in.
inline StagePlan build_stage_plan(const std::string& stage, const BackboneConfig& cfg) {
    (void)cfg;
    StagePlan p;
    p.stage = stage;
    if (stage == "1") {
        p.steps = 500;
        p.assign_only_tasks = true;
        p.lr = {{"lm_lora.", 2e-5}};
        p.mixture = {{"conversation", 1}, {"spatial", 1}, {"temporal", 1}, {"tracking", 1},
                     {"segmentation", 1}};
    } else if (stage == "2") {
        p.steps = 1500;
        p.lr = {{"lm_lora.", 2e-5},
                {"head_region.", 1e-4},
                {"head_temporal.", 1e-4},
                {"head_simple_temporal.", 1e-4},
                {"mask_adapter.", 1e-4},
                {"box_prompt.", 1e-4},
                {"token.temporal", 2e-4},
                {"token.region", 1e-4},
                {"token.mask", 1e-4}};
        p.mixture = {{"spatial", 1}, {"temporal", 1}, {"tracking", 1}, {"segmentation", 1}};
    } else if (stage == "3a" || stage == "3b") {
        p.steps = 2000;
        p.lr = {{"vision.", 2e-5},
                {"connector.", 2e-5},
                {"lm_lora.", 2e-5},
                {"head_region.", 2e-5},
                {"head_temporal.", 2e-5},
                {"head_simple_temporal.", 2e-5},
                {"mask_adapter.", 2e-5},
                {"box_prompt.", 2e-5},
                {"token.", 2e-5}};
        p.mixture = {{"spatial", 1}, {"temporal", 1}, {"tracking", 1}, {"segmentation", 1}};
        if (stage == "3b") p.mixture["conversation"] = 1;
    } else {
        throw TrainingError("unknown stage: " + stage);
    }
    return p;
}

// Decoupled weight decay Adam over the trainable subset.
struct AdamW {
    OptimConfig cfg;
    OptimizerState state;

    void step(ParamStore& params, const StagePlan& plan, double schedule_scale) {
        ++state.step;
        const double t = static_cast<double>(state.step);
        const double bc1 = 1.0 - std::pow(cfg.beta1, t);
        const double bc2 = 1.0 - std::pow(cfg.beta2, t);
        for (const auto& name : params.order) {
            const double peak = plan.lr_for(name);
            if (peak <= 0.0) continue;  // frozen: never touched, bitwise stable
            const double lr = peak * schedule_scale;
            TensorPtr p = params.params.at(name);
            Mat& g = p->grad;
            Mat& m = state.m.try_emplace(name, Mat::Zero(p->rows(), p->cols())).first->second;
            Mat& v = state.v.try_emplace(name, Mat::Zero(p->rows(), p->cols())).first->second;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
            Mat mhat = m / bc1;
            Mat vhat = v / bc2;
            p->value -= lr * cfg.weight_decay * p->value;  // decoupled decay
            p->value -= lr * (mhat.array() / (vhat.array().sqrt() + cfg.eps)).matrix();
        }
    }
};

struct TrainSet {
    std::vector<GeneratedConversation> conversations;
    std::map<TaskKind, std::vector<GeneratedTask>> tasks;
};

struct TrainOptions {
    int steps_override{0};       // 0 = use the plan's count
    double lr_scale{1.0};        // desk-scale boost over the paper's peaks
    uint64_t sample_seed{1234};
    int log_every{10};
};

// Stage-1 supervision for task records: routing only, no head forward.
inline RecordLoss task_assign_loss(const Model& m, const TaskRecord& rec) {
    auto frames = m.bb.encode_visual_frames(rec.visual);
    TensorPtr vis = m.bb.connect(frames);
    std::optional<Box> init_box;
    if (rec.kind == TaskKind::Tracking)
        init_box = std::get<TrackAnnotation>(rec.annotation).init_box;
    AssembledQuery q = build_task_sequence(m.bb, rec.kind, rec.query_text, init_box);
    LmPass p = run_lm(m, vis, q);
    // with no appended token the indicator is the last text token, so the
    // deciding row is text_len-2 relative to the visual prefix
    TensorPtr row = slice_rows(p.out.logits, p.vis_rows + p.text_len - 2, 1);
    std::vector<TensorPtr> cols;
    for (int id : indicator_ids()) cols.push_back(slice_cols(row, id, 1));
    TensorPtr l_assign = loss_assign(concat_cols(cols), rec.kind);
    RecordLoss r;
    r.loss = scale(l_assign, m.weights.w_assign);
    r.report = total_loss(0.0, l_assign->value(0, 0), {});
    r.report.batch_composition[task_kind_name(rec.kind)] = 1;
    return r;
}

struct TrainLogs {
    std::vector<LossReport> steps;  // one merged report per optimizer step
};

inline LossReport merge_reports(const std::vector<LossReport>& parts) {
    LossReport out;
    std::map<std::string, double> task;
    for (const auto& p : parts) {
        out.l_mllm += p.l_mllm;
        out.l_assign += p.l_assign;
        for (const auto& [k, v] : p.l_task_per_head) task[k] += v;
        for (const auto& [k, v] : p.batch_composition) out.batch_composition[k] += v;
    }
    const double n = static_cast<double>(parts.size());
    out.l_mllm /= n;
    out.l_assign /= n;
    for (auto& [k, v] : task) v /= n;
    out.l_task_per_head = task;
    out.total = out.recomputed_sum();
    return out;
}

inline TrainLogs train_stage(Model& model, const StagePlan& plan, const TrainSet& data,
                             AdamW& opt, const TrainOptions& options = {}) {
    const int total = options.steps_override > 0 ? options.steps_override : plan.steps;
    std::vector<std::string> kinds;
    std::vector<double> weights;
    for (const auto& [k, w] : plan.mixture) {
        if (w <= 0) continue;
        if (k == "conversation" ? data.conversations.empty()
                                : !data.tasks.count(task_kind_from_name(k)) ||
                                      data.tasks.at(task_kind_from_name(k)).empty())
            throw TrainingError("stage " + plan.stage + " mixture needs '" + k + "' data");
        kinds.push_back(k);
        weights.push_back(w);
    }
    std::mt19937_64 rng(options.sample_seed ^ std::hash<std::string>{}(plan.stage));
    std::discrete_distribution<int> pick_kind(weights.begin(), weights.end());
    TrainLogs logs;
    for (int step = 0; step < total; ++step) {
        model.params().zero_grads();
        std::vector<LossReport> parts;
        for (int b = 0; b < plan.batch_size; ++b) {
            const std::string& kind = kinds[pick_kind(rng)];
            RecordLoss rl;
            if (kind == "conversation") {
                const auto& recs = data.conversations;
                rl = conversation_loss(model,
                                       recs[rng() % recs.size()].record);
            } else {
                const auto& recs = data.tasks.at(task_kind_from_name(kind));
                const TaskRecord& rec = recs[rng() % recs.size()].record;
                rl = plan.assign_only_tasks ? task_assign_loss(model, rec)
                                            : task_loss(model, rec);
            }
            if (!std::isfinite(rl.loss->value(0, 0)))
                throw TrainingError("non-finite loss at stage " + plan.stage + " step " +
                                    std::to_string(step) + " on " + kind + " record");
            backward(scale(rl.loss, 1.0 / plan.batch_size));
            parts.push_back(rl.report);
        }
        const double sched =
            lr_schedule(step + 1, total, 1.0, opt.cfg.warmup_ratio) * options.lr_scale;
        opt.step(model.params(), plan, sched);
        logs.steps.push_back(merge_reports(parts));
    }
    return logs;
}

}  // namespace tpo

#endif  // TPO_TRAINING_HPP
