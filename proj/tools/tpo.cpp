// SPDX-License-Identifier: Apache-2.0
//
// Command-line harness: dataset generation, staged training, evaluation,
// ablations and report rendering, all rooted in one run directory.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tpo/ablation.hpp"
#include "tpo/checkpoint.hpp"
#include "tpo/report.hpp"
#include "tpo/training.hpp"

namespace fs = std::filesystem;
using namespace tpo;

namespace {

struct CliArgs {
    std::string config_path;
    std::string stage;
    std::string out = "run";
    uint64_t seed = 0;
    bool seed_set = false;
    bool force = false;
};

RunConfig load_run_config(const CliArgs& a) {
    RunConfig cfg;
    if (!a.config_path.empty()) {
        std::ifstream f(a.config_path);
        if (!f) throw ReportError("cannot read config: " + a.config_path);
        json j = json::parse(f);
        cfg = j.get<RunConfig>();
    }
    if (a.seed_set) cfg.backbone.seed = a.seed;
    cfg.backbone.validate();
    return cfg;
}

// The overwrite guard: an artifact produced under the same config hash is
// never silently replaced.
void guard_artifact(const fs::path& path, uint64_t hash, bool force) {
    if (force || !fs::exists(path)) return;
    uint64_t existing = 0;
    bool known = false;
    if (path.extension() == ".json") {
        try {
            std::ifstream f(path);
            json j = json::parse(f);
            if (j.contains("config_hash")) {
                existing = j.at("config_hash").get<uint64_t>();
                known = true;
            }
        } catch (...) {}
    } else if (path.extension() == ".bin") {
        try {
            std::ifstream is(path, std::ios::binary);
            char magic[8];
            is.read(magic, 8);
            uint32_t version;
            is.read(reinterpret_cast<char*>(&version), 4);
            is.read(reinterpret_cast<char*>(&existing), 8);
            known = static_cast<bool>(is);
        } catch (...) {}
    }
    if (!known || existing == hash)
        throw ReportError("refusing to overwrite " + path.string() +
                          " from an identical config (use --force)");
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw ReportError("cannot open for writing: " + path.string());
    f << j.dump(2) << "\n";
}

void persist_config(const fs::path& dir, const RunConfig& cfg) {
    json j(cfg);
    j["config_hash"] = run_config_hash(cfg);
    write_json_file(dir / "config.json", j);
}

// Shared data recipe: training shards at data_seed.., held-out eval split
// at data_seed+100.. so the two never overlap.
TrainSet training_data(const RunConfig& cfg) {
    TrainSet s;
    s.tasks[TaskKind::SpatialGrounding] =
        gen_spatial(cfg.data_seed, cfg.train_per_task, cfg.backbone.frame_size);
    s.tasks[TaskKind::TemporalGrounding] =
        gen_temporal(cfg.data_seed + 1, cfg.train_per_task, 16, cfg.backbone.frame_size);
    s.tasks[TaskKind::Tracking] =
        gen_tracking(cfg.data_seed + 2, cfg.train_per_task, 8, cfg.backbone.frame_size);
    s.tasks[TaskKind::Segmentation] =
        gen_segmentation(cfg.data_seed + 3, cfg.train_per_task, 4, cfg.backbone.frame_size);
    s.conversations =
        gen_conversation(cfg.data_seed + 4, cfg.train_per_task, false, cfg.backbone.frame_size);
    return s;
}

uint64_t file_hash(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    uint64_t h = 1469598103934665603ull;
    char buf[4096];
    while (f.read(buf, sizeof(buf)) || f.gcount())
        for (std::streamsize i = 0; i < f.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    return h;
}

int cmd_generate(const CliArgs& a, const RunConfig& cfg) {
    const fs::path dir(a.out);
    const uint64_t hash = run_config_hash(cfg);
    guard_artifact(dir / "manifest.json", hash, a.force);
    fs::create_directories(dir);
    persist_config(dir, cfg);

    TrainSet data = training_data(cfg);
    json shards = json::object();
    auto emit = [&](const std::string& name, auto&& writer) {
        const fs::path p = dir / (name + ".jsonl");
        writer(p.string());
        shards[name] = json{{"path", p.filename().string()},
                            {"content_hash", file_hash(p)}};
    };
    for (auto& [kind, recs] : data.tasks) {
        shards[task_kind_name(kind)] = json();
        const auto& r = recs;
        emit(task_kind_name(kind),
             [&](const std::string& p) { write_task_records(p, r); });
        shards[task_kind_name(kind)]["count"] = r.size();
    }
    emit("conversation", [&](const std::string& p) {
        write_conversation_records(p, data.conversations);
    });
    shards["conversation"]["count"] = data.conversations.size();

    json manifest{{"config_hash", hash},
                  {"data_seed", cfg.data_seed},
                  {"train_per_task", cfg.train_per_task},
                  {"shards", shards}};
    write_json_file(dir / "manifest.json", manifest);
    std::cout << "generated " << shards.size() << " shards under " << dir.string() << "\n";
    return 0;
}

fs::path ckpt_path(const fs::path& dir, const std::string& stage) {
    return dir / ("ckpt_stage" + stage + ".bin");
}

// Latest checkpoint in pipeline order, if any.
std::optional<std::string> newest_stage(const fs::path& dir) {
    for (const char* s : {"3b", "3a", "2", "1"})
        if (fs::exists(ckpt_path(dir, s))) return std::string(s);
    return std::nullopt;
}

int cmd_train(const CliArgs& a, const RunConfig& cfg) {
    if (a.stage.empty()) throw ReportError("train requires --stage (1 | 2 | 3a | 3b)");
    const fs::path dir(a.out);
    const uint64_t hash = run_config_hash(cfg);
    guard_artifact(ckpt_path(dir, a.stage), hash, a.force);
    fs::create_directories(dir);
    persist_config(dir, cfg);

    Model m(cfg.backbone);
    // stages chain: each resumes from the latest earlier checkpoint
    static const std::map<std::string, std::vector<std::string>> prev = {
        {"1", {}}, {"2", {"1"}}, {"3a", {"2", "1"}}, {"3b", {"3a", "2", "1"}}};
    if (!prev.count(a.stage)) throw TrainingError("unknown stage: " + a.stage);
    for (const auto& p : prev.at(a.stage))
        if (fs::exists(ckpt_path(dir, p))) {
            uint64_t h = load_checkpoint(ckpt_path(dir, p).string(), m.params());
            if (h != hash)
                throw ReportError("checkpoint " + ckpt_path(dir, p).string() +
                                  " was trained under a different config");
            std::cout << "resumed from stage " << p << "\n";
            break;
        }

    StagePlan plan = build_stage_plan(a.stage, cfg.backbone);
    if (cfg.batch_size > 0) plan.batch_size = cfg.batch_size;
    TrainOptions topt;
    topt.steps_override = cfg.steps_override;
    topt.lr_scale = cfg.lr_scale;
    topt.sample_seed = cfg.sample_seed;

    TrainSet data = training_data(cfg);
    AdamW opt;
    TrainLogs logs = train_stage(m, plan, data, opt, topt);

    save_checkpoint(ckpt_path(dir, a.stage).string(), m.params(), hash, &opt.state);
    json steps = json::array();
    for (const auto& r : logs.steps) {
        json heads = json::object();
        for (const auto& [k, v] : r.l_task_per_head) heads[k] = v;
        steps.push_back(json{{"total", r.total},
                             {"l_mllm", r.l_mllm},
                             {"l_assign", r.l_assign},
                             {"l_task_per_head", heads}});
    }
    write_json_file(dir / ("train_log_stage" + a.stage + ".json"),
                    json{{"config_hash", hash}, {"stage", a.stage}, {"steps", steps}});
    std::cout << "stage " << a.stage << " done: " << logs.steps.size() << " steps, final loss "
              << (logs.steps.empty() ? 0.0 : logs.steps.back().total) << "\n";
    return 0;
}

int cmd_eval(const CliArgs& a, const RunConfig& cfg) {
    const fs::path dir(a.out);
    const uint64_t hash = run_config_hash(cfg);
    guard_artifact(dir / "eval_report.json", hash, a.force);
    fs::create_directories(dir);
    persist_config(dir, cfg);

    Model m(cfg.backbone);
    if (auto stage = newest_stage(dir)) {
        uint64_t h = load_checkpoint(ckpt_path(dir, *stage).string(), m.params());
        if (h != hash)
            throw ReportError("checkpoint was trained under a different config");
        std::cout << "evaluating stage " << *stage << " checkpoint\n";
    } else {
        std::cout << "no checkpoint found; evaluating the initialized model\n";
    }

    EvalSet set = make_eval_set(cfg.data_seed + 100, cfg.eval_per_task,
                                cfg.backbone.frame_size);
    EvalReport r = evaluate(m, set, cfg.backbone.seed, hash);
    write_json_file(dir / "eval_report.json", eval_report_to_json(r));
    std::ofstream md(dir / "eval_report.md");
    md << eval_report_markdown(r);
    std::cout << eval_report_markdown(r);
    return 0;
}

int cmd_ablate(const CliArgs& a, const RunConfig& cfg) {
    const fs::path dir(a.out);
    const uint64_t hash = run_config_hash(cfg);
    const fs::path out = dir / ("ablation_" + cfg.ablation_kind + ".json");
    guard_artifact(out, hash, a.force);
    fs::create_directories(dir);
    persist_config(dir, cfg);

    AblationReport r = run_ablation(cfg.ablation_kind, cfg.backbone, cfg.ablation);
    r.config_hash = hash;
    write_json_file(out, ablation_report_to_json(r));
    std::cout << ablation_report_markdown(r);
    return 0;
}

int cmd_report(const CliArgs& a) {
    const fs::path dir(a.out);
    if (!fs::is_directory(dir)) throw ReportError("no run directory: " + dir.string());
    std::ostringstream md;
    md << "# run report\n\n";

    if (fs::exists(dir / "config.json")) {
        std::ifstream f(dir / "config.json");
        json j = json::parse(f);
        md << "config hash: `" << j.value("config_hash", 0ull) << "`\n\n";
    }
    // loss curves, one image per trained stage
    for (const char* stage : {"1", "2", "3a", "3b"}) {
        const fs::path log = dir / (std::string("train_log_stage") + stage + ".json");
        if (!fs::exists(log)) continue;
        std::ifstream f(log);
        json j = json::parse(f);
        PlotSeries total{"total", {}, 30, 90, 200};
        for (const auto& s : j.at("steps")) total.values.push_back(s.at("total"));
        const std::string img_name = std::string("loss_stage") + stage + ".png";
        write_png((dir / img_name).string(), render_line_plot({total}));
        md << "## stage " << stage << "\n\nsteps: " << total.values.size()
           << ", final loss: " << (total.values.empty() ? 0.0 : total.values.back())
           << "\n\n![stage " << stage << " loss](" << img_name << ")\n\n";
    }
    if (fs::exists(dir / "eval_report.json")) {
        std::ifstream f(dir / "eval_report.json");
        json j = json::parse(f);
        md << "## evaluation\n\n";
        std::ifstream t(dir / "eval_report.md");
        if (t) md << t.rdbuf() << "\n";
        // metric bars as a plot for quick visual comparison
        PlotSeries bars{"metrics", {}, 200, 60, 60};
        for (const char* k : {"routing_accuracy", "spatial_miou", "temporal_miou",
                              "tracking_auc", "seg_jf"})
            bars.values.push_back(std::max(0.0, j.value(k, 0.0)));
        write_png((dir / "eval_metrics.png").string(), render_line_plot({bars}));
        md << "![metrics](eval_metrics.png)\n\n";
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("ablation_", 0) != 0 || entry.path().extension() != ".json") continue;
        std::ifstream f(entry.path());
        json j = json::parse(f);
        AblationReport r;
        r.kind = j.at("kind");
        for (const auto& aj : j.at("arms")) {
            AblationArm arm;
            arm.name = aj.at("name");
            for (auto it = aj.at("per_seed").begin(); it != aj.at("per_seed").end(); ++it)
                arm.per_seed[it.key()] = it.value().get<std::vector<double>>();
            for (auto it = aj.at("mean").begin(); it != aj.at("mean").end(); ++it)
                arm.mean[it.key()] = it.value();
            r.arms.push_back(std::move(arm));
        }
        md << ablation_report_markdown(r) << "\n";
    }
    std::ofstream out(dir / "report.md");
    out << md.str();
    std::cout << "wrote " << (dir / "report.md").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale task-token grounding pipeline"};
    app.require_subcommand(1);
    CliArgs a;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", a.config_path, "run config JSON");
        sub->add_option("--out", a.out, "run directory");
        sub->add_option("--seed", a.seed, "override the model seed")
            ->each([&](const std::string&) { a.seed_set = true; });
        sub->add_flag("--force", a.force, "overwrite existing artifacts");
        return sub;
    };
    CLI::App* gen = add_common(app.add_subcommand("generate", "write dataset shards + manifest"));
    CLI::App* train = add_common(app.add_subcommand("train", "train one stage"));
    train->add_option("--stage", a.stage, "1 | 2 | 3a | 3b");
    CLI::App* evalc = add_common(app.add_subcommand("eval", "score the newest checkpoint"));
    CLI::App* ablate = add_common(app.add_subcommand("ablate", "run the configured ablation"));
    CLI::App* report = add_common(app.add_subcommand("report", "render tables and plots"));

    CLI11_PARSE(app, argc, argv);
    try {
        if (gen->parsed()) return cmd_generate(a, load_run_config(a));
        if (train->parsed()) return cmd_train(a, load_run_config(a));
        if (evalc->parsed()) return cmd_eval(a, load_run_config(a));
        if (ablate->parsed()) return cmd_ablate(a, load_run_config(a));
        if (report->parsed()) return cmd_report(a);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
