// SPDX-License-Identifier: Apache-2.0
//
// Run configuration, PNG plot emission and human-readable report
// rendering for the command-line harness.

#ifndef TPO_REPORT_HPP
#define TPO_REPORT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "tpo/ablation.hpp"
#include "tpo/config.hpp"
#include "tpo/eval.hpp"

namespace tpo {

struct ReportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --- run configuration ----------------------------------------------------

constexpr int kRunConfigSchemaVersion = 1;

// Everything a run needs: model, data sizes, per-stage budgets, ablation
// arms. Serialized as JSON; content_hash() of the canonical dump names the
// run for the overwrite guard.
struct RunConfig {
    BackboneConfig backbone;
    uint64_t data_seed = 900;
    int train_per_task = 256;
    int eval_per_task = 64;
    double lr_scale = 1.0;
    int steps_override = 0;  // 0 = stage plan default
    int batch_size = 0;      // 0 = stage plan default
    uint64_t sample_seed = 1234;
    std::string ablation_kind = "textualized";
    AblationOptions ablation;
};

inline void to_json(json& j, const RunConfig& c) {
    j = json{{"schema_version", kRunConfigSchemaVersion},
             {"backbone", c.backbone},
             {"data_seed", c.data_seed},
             {"train_per_task", c.train_per_task},
             {"eval_per_task", c.eval_per_task},
             {"lr_scale", c.lr_scale},
             {"steps_override", c.steps_override},
             {"batch_size", c.batch_size},
             {"sample_seed", c.sample_seed},
             {"ablation_kind", c.ablation_kind},
             {"ablation",
              json{{"seeds", c.ablation.seeds},
                   {"train_records_per_task", c.ablation.train_records_per_task},
                   {"eval_records_per_task", c.ablation.eval_records_per_task},
                   {"steps", c.ablation.steps},
                   {"batch_size", c.ablation.batch_size},
                   {"lr_scale", c.ablation.lr_scale},
                   {"data_seed", c.ablation.data_seed}}}};
}

inline void from_json(const json& j, RunConfig& c) {
    RunConfig d;
    if (j.value("schema_version", kRunConfigSchemaVersion) != kRunConfigSchemaVersion)
        throw ReportError("unsupported run config schema version");
    if (j.contains("backbone")) j.at("backbone").get_to(c.backbone);
    c.data_seed = j.value("data_seed", d.data_seed);
    c.train_per_task = j.value("train_per_task", d.train_per_task);
    c.eval_per_task = j.value("eval_per_task", d.eval_per_task);
    c.lr_scale = j.value("lr_scale", d.lr_scale);
    c.steps_override = j.value("steps_override", d.steps_override);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.sample_seed = j.value("sample_seed", d.sample_seed);
    c.ablation_kind = j.value("ablation_kind", d.ablation_kind);
    if (j.contains("ablation")) {
        const json& a = j.at("ablation");
        c.ablation.seeds = a.value("seeds", d.ablation.seeds);
        c.ablation.train_records_per_task =
            a.value("train_records_per_task", d.ablation.train_records_per_task);
        c.ablation.eval_records_per_task =
            a.value("eval_records_per_task", d.ablation.eval_records_per_task);
        c.ablation.steps = a.value("steps", d.ablation.steps);
        c.ablation.batch_size = a.value("batch_size", d.ablation.batch_size);
        c.ablation.lr_scale = a.value("lr_scale", d.ablation.lr_scale);
        c.ablation.data_seed = a.value("data_seed", d.ablation.data_seed);
    }
}

inline uint64_t run_config_hash(const RunConfig& c) { return content_hash(json(c)); }

// --- PNG emission ----------------------------------------------------------

namespace detail_png {

inline void put_u32(std::string& s, uint32_t v) {
    s.push_back(static_cast<char>(v >> 24));
    s.push_back(static_cast<char>(v >> 16));
    s.push_back(static_cast<char>(v >> 8));
    s.push_back(static_cast<char>(v));
}

inline void put_chunk(std::ostream& os, const char type[4], const std::string& payload) {
    std::string head;
    put_u32(head, static_cast<uint32_t>(payload.size()));
    os.write(head.data(), 4);
    uint32_t crc = crc32(0, reinterpret_cast<const Bytef*>(type), 4);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(payload.data()),
                static_cast<uInt>(payload.size()));
    os.write(type, 4);
    os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    std::string tail;
    put_u32(tail, crc);
    os.write(tail.data(), 4);
}

}  // namespace detail_png

// 8-bit RGB image, row-major.
struct Image {
    int width{0}, height{0};
    std::vector<uint8_t> rgb;  // 3 * width * height

    Image(int w, int h, uint8_t fill = 255) : width(w), height(h), rgb(3ull * w * h, fill) {}

    void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        if (x < 0 || y < 0 || x >= width || y >= height) return;
        size_t i = 3ull * (static_cast<size_t>(y) * width + x);
        rgb[i] = r;
        rgb[i + 1] = g;
        rgb[i + 2] = b;
    }

    void line(int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b) {
        int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1, err = dx + dy;
        for (;;) {
            set(x0, y0, r, g, b);
            if (x0 == x1 && y0 == y1) break;
            int e2 = 2 * err;
            if (e2 >= dy) { err += dy; x0 += sx; }
            if (e2 <= dx) { err += dx; y0 += sy; }
        }
    }
};

inline void write_png(const std::string& path, const Image& img) {
    // filter byte 0 (none) per scanline, then one zlib stream
    std::string raw;
    raw.reserve(static_cast<size_t>(img.height) * (1 + 3ull * img.width));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back('\0');
        raw.append(reinterpret_cast<const char*>(&img.rgb[3ull * y * img.width]),
                   3ull * img.width);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::string deflated(bound, '\0');
    if (compress2(reinterpret_cast<Bytef*>(deflated.data()), &bound,
                  reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                  9) != Z_OK)
        throw ReportError("png deflate failed");
    deflated.resize(bound);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw ReportError("cannot open for writing: " + path);
    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    os.write(reinterpret_cast<const char*>(sig), 8);
    std::string ihdr;
    detail_png::put_u32(ihdr, static_cast<uint32_t>(img.width));
    detail_png::put_u32(ihdr, static_cast<uint32_t>(img.height));
    ihdr += std::string("\x08\x02\x00\x00\x00", 5);  // 8-bit RGB
    detail_png::put_chunk(os, "IHDR", ihdr);
    detail_png::put_chunk(os, "IDAT", deflated);
    detail_png::put_chunk(os, "IEND", "");
    if (!os) throw ReportError("write failed: " + path);
}

// --- plots ------------------------------------------------------------------

struct PlotSeries {
    std::string name;
    std::vector<double> values;
    uint8_t r{30}, g{90}, b{200};
};

// Minimal line plot: white canvas, gray frame, one polyline per series.
inline Image render_line_plot(const std::vector<PlotSeries>& series, int width = 640,
                              int height = 360) {
    Image img(width, height);
    const int mx = 40, my = 20;  // margins
    img.line(mx, my, mx, height - my, 120, 120, 120);
    img.line(mx, height - my, width - mx, height - my, 120, 120, 120);
    double lo = 0.0, hi = 1e-12;
    size_t n = 0;
    for (const auto& s : series) {
        n = std::max(n, s.values.size());
        for (double v : s.values)
            if (std::isfinite(v)) { lo = std::min(lo, v); hi = std::max(hi, v); }
    }
    if (n < 2) return img;
    auto px = [&](size_t i) {
        return mx + static_cast<int>((width - 2.0 * mx) * i / (n - 1));
    };
    auto py = [&](double v) {
        double t = (v - lo) / (hi - lo);
        return height - my - static_cast<int>((height - 2.0 * my) * t);
    };
    for (const auto& s : series)
        for (size_t i = 0; i + 1 < s.values.size(); ++i)
            img.line(px(i), py(s.values[i]), px(i + 1), py(s.values[i + 1]), s.r, s.g, s.b);
    return img;
}

// --- human-readable tables ---------------------------------------------------

inline std::string eval_report_markdown(const EvalReport& r) {
    std::ostringstream os;
    os << "| metric | value |\n|---|---|\n";
    auto row = [&](const char* name, double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "| %s | %.4f |\n", name, v);
        os << buf;
    };
    row("routing accuracy", r.routing_accuracy);
    row("spatial mIoU", r.spatial_miou);
    for (const auto& [k, v] : r.spatial_recall)
        row(("spatial R@" + std::to_string(k).substr(0, 3)).c_str(), v);
    row("temporal mIoU", r.temporal_miou);
    for (const auto& [k, v] : r.temporal_recall)
        row(("temporal R@" + std::to_string(k).substr(0, 3)).c_str(), v);
    row("tracking success AUC", r.tracking_auc);
    row("tracking precision", r.tracking_precision);
    row("segmentation J", r.seg_j);
    row("segmentation F", r.seg_f);
    row("segmentation J&F", r.seg_jf);
    row("conversation accuracy", r.conversation_accuracy);
    return os.str();
}

inline std::string ablation_report_markdown(const AblationReport& r) {
    std::ostringstream os;
    os << "### ablation: " << r.kind << "\n\n| arm | metric | mean | per-seed |\n|---|---|---|---|\n";
    for (const auto& a : r.arms)
        for (const auto& [metric, vals] : a.per_seed) {
            os << "| " << a.name << " | " << metric << " | ";
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.4f", a.mean.at(metric));
            os << buf << " |";
            for (double v : vals) {
                std::snprintf(buf, sizeof(buf), " %.4f", v);
                os << buf;
            }
            os << " |\n";
        }
    return os.str();
}

}  // namespace tpo

#endif  // TPO_REPORT_HPP
