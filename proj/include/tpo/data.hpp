// SPDX-License-Identifier: Apache-2.0
//
// Synthetic task worlds with analytic labels. Scenes are parametric
// (colored shapes with optional linear motion and appearance windows);
// every annotation is recomputed from the scene geometry, never from a
// model. Generators are pure functions of (seed, index).

#ifndef TPO_DATA_HPP
#define TPO_DATA_HPP

#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpo/templates.hpp"
#include "tpo/types.hpp"

namespace tpo {

constexpr int kRecordSchemaVersion = 1;

enum class ShapeType : int { Square = 0, Circle = 1, Triangle = 2 };

inline const char* shape_name(ShapeType s) {
    switch (s) {
        case ShapeType::Square: return "square";
        case ShapeType::Circle: return "circle";
        case ShapeType::Triangle: return "triangle";
    }
    return "?";
}

struct SceneObject {
    ShapeType shape{ShapeType::Square};
    int color{0};
    double cx{0.5}, cy{0.5}, size{0.25};  // normalized; size = full extent
    double vx{0}, vy{0};                  // per-frame displacement
    int appear_from{0};                   // visible for frames in [appear_from, appear_until)
    int appear_until{1 << 20};

    bool visible_at(int t) const { return t >= appear_from && t < appear_until; }
    double cx_at(int t) const { return cx + vx * t; }
    double cy_at(int t) const { return cy + vy * t; }
};

struct Scene {
    int t{1}, h{32}, w{32};
    std::vector<SceneObject> objects;
};

inline bool shape_covers(const SceneObject& o, int t, double x, double y) {
    const double dx = x - o.cx_at(t), dy = y - o.cy_at(t), r = o.size / 2.0;
    switch (o.shape) {
        case ShapeType::Square: return std::abs(dx) <= r && std::abs(dy) <= r;
        case ShapeType::Circle: return dx * dx + dy * dy <= r * r;
        case ShapeType::Triangle:
            // apex at top, base at bottom of the bounding square
            if (dy < -r || dy > r) return false;
            return std::abs(dx) <= (dy + r) / 2.0;
    }
    return false;
}

inline MaskGrid rasterize_object(const Scene& s, const SceneObject& o, int t) {
    MaskGrid m;
    m.height = s.h;
    m.width = s.w;
    m.values.assign(static_cast<size_t>(s.h) * s.w, 0);
    if (!o.visible_at(t)) return m;
    for (int r = 0; r < s.h; ++r)
        for (int c = 0; c < s.w; ++c) {
            const double x = (c + 0.5) / s.w, y = (r + 0.5) / s.h;
            if (shape_covers(o, t, x, y)) m.values[static_cast<size_t>(r) * s.w + c] = 1;
        }
    return m;
}

inline std::optional<Box> object_box(const Scene& s, const SceneObject& o, int t) {
    MaskGrid m = rasterize_object(s, o, t);
    int rmin = s.h, rmax = -1, cmin = s.w, cmax = -1;
    for (int r = 0; r < s.h; ++r)
        for (int c = 0; c < s.w; ++c)
            if (m.at(r, c)) {
                rmin = std::min(rmin, r);
                rmax = std::max(rmax, r);
                cmin = std::min(cmin, c);
                cmax = std::max(cmax, c);
            }
    if (rmax < 0) return std::nullopt;
    return Box{static_cast<double>(cmin) / s.w, static_cast<double>(rmin) / s.h,
               static_cast<double>(cmax + 1) / s.w, static_cast<double>(rmax + 1) / s.h};
}

inline VisualInput render_scene(const Scene& s) {
    VisualInput v;
    v.frames_count = s.t;
    v.height = s.h;
    v.width = s.w;
    v.frames.resize(s.t);
    const double bg = kBackgroundLevel;
    for (int t = 0; t < s.t; ++t) {
        auto& f = v.frames[t];
        f.assign(static_cast<size_t>(s.h) * s.w * 3, bg);
        for (const auto& o : s.objects) {
            if (!o.visible_at(t)) continue;
            const auto& rgb = Palette::colors()[o.color].second;
            for (int r = 0; r < s.h; ++r)
                for (int c = 0; c < s.w; ++c) {
                    const double x = (c + 0.5) / s.w, y = (r + 0.5) / s.h;
                    if (shape_covers(o, t, x, y))
                        for (int ch = 0; ch < 3; ++ch)
                            f[(static_cast<size_t>(r) * s.w + c) * 3 + ch] = rgb[ch];
                }
        }
    }
    return v;
}

// Full record variants carrying the scene so records re-render on load.
struct GeneratedTask {
    TaskRecord record;
    Scene scene;
    int target_index{0};
    size_t template_index{0};
};

struct GeneratedConversation {
    ConversationRecord record;
    Scene scene;
    size_t template_index{0};
};

namespace detail_data {

inline std::mt19937_64 record_rng(uint64_t seed, uint64_t index) {
    // splitmix over (seed, index) so each record is independently reproducible
    uint64_t z = seed * 0x9e3779b97f4a7c15ull + index + 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return std::mt19937_64(z ^ (z >> 31));
}

// Snap a value to the pixel grid so shape edges land on pixel boundaries.
inline double snap(double v, int cells) {
    return std::round(v * cells) / cells;
}

inline double urand(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}
inline int irand(std::mt19937_64& rng, int lo, int hi) {  // inclusive
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline bool overlaps(const SceneObject& a, const SceneObject& b) {
    return std::abs(a.cx - b.cx) < (a.size + b.size) / 2.0 + 0.04 &&
           std::abs(a.cy - b.cy) < (a.size + b.size) / 2.0 + 0.04;
}

// 2-4 shapes with a unique (color, shape) referent at objects[0].
inline Scene make_multi_object_scene(std::mt19937_64& rng, int frames, int h, int w) {
    Scene s;
    s.t = frames;
    s.h = h;
    s.w = w;
    const int n = irand(rng, 2, 4);
    for (int tries = 0; static_cast<int>(s.objects.size()) < n && tries < 200; ++tries) {
        SceneObject o;
        o.shape = static_cast<ShapeType>(irand(rng, 0, 2));
        o.color = irand(rng, 0, Palette::count() - 1);
        o.size = snap(urand(rng, 0.2, 0.4), w);
        o.cx = snap(urand(rng, o.size / 2 + 0.02, 1.0 - o.size / 2 - 0.02), w);
        o.cy = snap(urand(rng, o.size / 2 + 0.02, 1.0 - o.size / 2 - 0.02), h);
        bool ok = true;
        for (const auto& other : s.objects) {
            if (overlaps(o, other)) ok = false;
            if (other.color == o.color) ok = false;  // color alone names an object
        }
        if (ok) s.objects.push_back(o);
    }
    if (s.objects.size() < 2) {  // deterministic fallback
        s.objects.clear();
        SceneObject a, b;
        a.shape = ShapeType::Square;
        a.color = 0;
        a.cx = a.cy = 0.25;
        a.size = 0.25;
        b.shape = ShapeType::Circle;
        b.color = 2;
        b.cx = b.cy = 0.75;
        b.size = 0.25;
        s.objects = {a, b};
    }
    return s;
}

inline std::string object_expr(const SceneObject& o) {
    return std::string(Palette::colors()[o.color].first) + " " + shape_name(o.shape);
}

}  // namespace detail_data

// --- generators --------------------------------------------------------

// Single-frame scenes; the query names the unique (color, shape) pair,
// the label is the tight box of its rendered pixels.
inline std::vector<GeneratedTask> gen_spatial(uint64_t seed, int n, int frame_size = 32,
                                              const std::vector<size_t>& template_indices = {}) {
    std::vector<GeneratedTask> out;
    for (int i = 0; i < n; ++i) {
        auto rng = detail_data::record_rng(seed ^ 0x51ull, i);
        GeneratedTask g;
        g.scene = detail_data::make_multi_object_scene(rng, 1, frame_size, frame_size);
        g.target_index = detail_data::irand(rng, 0, static_cast<int>(g.scene.objects.size()) - 1);
        const auto& target = g.scene.objects[g.target_index];
        const auto& ts = templates_spatial();
        g.template_index = template_indices.empty()
                               ? detail_data::irand(rng, 0, static_cast<int>(ts.size()) - 1)
                               : template_indices[detail_data::irand(
                                     rng, 0, static_cast<int>(template_indices.size()) - 1)];
        g.record.kind = TaskKind::SpatialGrounding;
        g.record.query_text = render_template_at(
            TaskKind::SpatialGrounding, g.template_index,
            {{"expr", "the " + detail_data::object_expr(target)}});
        g.record.visual = render_scene(g.scene);
        g.record.annotation = *object_box(g.scene, target, 0);
        g.record.seed = seed ^ (static_cast<uint64_t>(i) << 8);
        out.push_back(std::move(g));
    }
    return out;
}

// T=16 frames; the queried shape appears over a contiguous span (>= 2
// frames); label = normalized span + binary per-frame saliency.
inline std::vector<GeneratedTask> gen_temporal(uint64_t seed, int n, int frames = 16,
                                               int frame_size = 32,
                                               const std::vector<size_t>& template_indices = {}) {
    std::vector<GeneratedTask> out;
    for (int i = 0; i < n; ++i) {
        auto rng = detail_data::record_rng(seed ^ 0x7eull, i);
        GeneratedTask g;
        Scene s = detail_data::make_multi_object_scene(rng, frames, frame_size, frame_size);
        // objects[0] is the event object, the rest persist
        int span_len = detail_data::irand(rng, 2, frames / 2);
        int start = detail_data::irand(rng, 0, frames - span_len);
        s.objects[0].appear_from = start;
        s.objects[0].appear_until = start + span_len;
        g.scene = s;
        g.target_index = 0;
        const auto& target = s.objects[0];
        const auto& ts = templates_temporal();
        g.template_index = template_indices.empty()
                               ? detail_data::irand(rng, 0, static_cast<int>(ts.size()) - 1)
                               : template_indices[detail_data::irand(
                                     rng, 0, static_cast<int>(template_indices.size()) - 1)];
        g.record.kind = TaskKind::TemporalGrounding;
        g.record.query_text = render_template_at(
            TaskKind::TemporalGrounding, g.template_index,
            {{"query", "the " + detail_data::object_expr(target) + " appears"}});
        g.record.visual = render_scene(s);
        TemporalAnnotation ann;
        ann.span = TimeSpan{static_cast<double>(start) / frames,
                            static_cast<double>(start + span_len) / frames};
        ann.saliency.scores.assign(frames, 0.0);
        for (int t = start; t < start + span_len; ++t) ann.saliency.scores[t] = 1.0;
        g.record.annotation = ann;
        g.record.seed = seed ^ (static_cast<uint64_t>(i) << 8);
        out.push_back(std::move(g));
    }
    return out;
}

// Square with linear motion and an optional 1-2 frame occlusion window;
// annotation = init box + per-frame boxes (absent while occluded).
inline std::vector<GeneratedTask> gen_tracking(uint64_t seed, int n, int frames = 8,
                                               int frame_size = 32,
                                               const std::vector<size_t>& template_indices = {}) {
    std::vector<GeneratedTask> out;
    for (int i = 0; i < n; ++i) {
        auto rng = detail_data::record_rng(seed ^ 0x3cull, i);
        GeneratedTask g;
        Scene s;
        s.t = frames;
        s.h = s.w = frame_size;
        SceneObject o;
        o.shape = ShapeType::Square;
        o.color = detail_data::irand(rng, 0, Palette::count() - 1);
        o.size = detail_data::snap(detail_data::urand(rng, 0.2, 0.35), frame_size);
        const double margin = o.size / 2 + 0.02;
        double x0 = detail_data::urand(rng, margin, 1.0 - margin);
        double y0 = detail_data::urand(rng, margin, 1.0 - margin);
        double x1 = detail_data::urand(rng, margin, 1.0 - margin);
        double y1 = detail_data::urand(rng, margin, 1.0 - margin);
        o.cx = detail_data::snap(x0, frame_size);
        o.cy = detail_data::snap(y0, frame_size);
        o.vx = detail_data::snap((x1 - x0) / (frames - 1), frame_size);
        o.vy = detail_data::snap((y1 - y0) / (frames - 1), frame_size);
        s.objects.push_back(o);
        if (detail_data::irand(rng, 0, 1)) {
            // occlusion modeled as a split appearance window, never on frame 0
            int occ_len = detail_data::irand(rng, 1, 2);
            int occ_start = detail_data::irand(rng, 1, frames - occ_len - 1);
            s.objects[0].appear_until = occ_start;
            SceneObject rest = o;
            rest.appear_from = occ_start + occ_len;
            s.objects.push_back(rest);
        }
        g.scene = s;
        g.target_index = 0;
        TrackAnnotation ann;
        for (int t = 0; t < frames; ++t) {
            std::optional<Box> b;
            for (const auto& obj : s.objects)
                if (obj.visible_at(t)) {
                    b = object_box(s, obj, t);
                    break;
                }
            ann.boxes.push_back(b);
        }
        if (!ann.boxes[0]) throw std::logic_error("tracking: first frame must be visible");
        ann.init_box = *ann.boxes[0];
        g.record.kind = TaskKind::Tracking;
        const auto& ts = templates_tracking();
        g.template_index = template_indices.empty()
                               ? detail_data::irand(rng, 0, static_cast<int>(ts.size()) - 1)
                               : template_indices[detail_data::irand(
                                     rng, 0, static_cast<int>(template_indices.size()) - 1)];
        g.record.query_text = render_template_at(TaskKind::Tracking, g.template_index,
                                                 {{"track_box", format_box_slot(ann.init_box)}});
        g.record.visual = render_scene(s);
        g.record.annotation = ann;
        g.record.seed = seed ^ (static_cast<uint64_t>(i) << 8);
        out.push_back(std::move(g));
    }
    return out;
}

// Per-frame masks of the queried object; query by color, or by motion
// phrase when exactly one object moves.
inline std::vector<GeneratedTask> gen_segmentation(uint64_t seed, int n, int frames = 4,
                                                   int frame_size = 32,
                                                   const std::vector<size_t>& template_indices = {}) {
    std::vector<GeneratedTask> out;
    for (int i = 0; i < n; ++i) {
        auto rng = detail_data::record_rng(seed ^ 0x5eull, i);
        GeneratedTask g;
        Scene s = detail_data::make_multi_object_scene(rng, frames, frame_size, frame_size);
        while (s.objects.size() > 2) s.objects.pop_back();
        const bool move_target = detail_data::irand(rng, 0, 1) == 1;
        g.target_index = 0;
        if (move_target) {
            SceneObject& o = s.objects[0];
            double span = 0.3 / (frames - 1);
            o.vx = detail_data::snap(detail_data::urand(rng, -span, span), frame_size);
            o.vy = detail_data::snap(detail_data::urand(rng, -span, span), frame_size);
        }
        g.scene = s;
        const auto& target = s.objects[g.target_index];
        const bool motion_query = move_target && detail_data::irand(rng, 0, 1) == 1 &&
                                  (target.vx != 0 || target.vy != 0);
        std::string obj_phrase = motion_query
                                     ? "the moving " + detail_data::object_expr(target)
                                     : "the " + detail_data::object_expr(target);
        const auto& ts = templates_segmentation();
        g.template_index = template_indices.empty()
                               ? detail_data::irand(rng, 0, static_cast<int>(ts.size()) - 1)
                               : template_indices[detail_data::irand(
                                     rng, 0, static_cast<int>(template_indices.size()) - 1)];
        g.record.kind = TaskKind::Segmentation;
        g.record.query_text =
            render_template_at(TaskKind::Segmentation, g.template_index, {{"obj", obj_phrase}});
        g.record.visual = render_scene(s);
        SegmentationAnnotation ann;
        for (int t = 0; t < frames; ++t) {
            ann.masks.push_back(rasterize_object(s, target, t));
            ann.occluded.push_back(!target.visible_at(t));
        }
        g.record.annotation = ann;
        g.record.seed = seed ^ (static_cast<uint64_t>(i) << 8);
        out.push_back(std::move(g));
    }
    return out;
}

// Templated Q&A about scene contents; answers are consistent with the
// scene by construction. with_temporal_refs adds frame-index questions.
inline std::vector<GeneratedConversation> gen_conversation(uint64_t seed, int n,
                                                           bool with_temporal_refs,
                                                           int frame_size = 32,
                                                           const std::vector<size_t>& template_indices = {}) {
    static const char* number_words[] = {"zero", "one", "two", "three", "four"};
    std::vector<GeneratedConversation> out;
    for (int i = 0; i < n; ++i) {
        auto rng = detail_data::record_rng(seed ^ 0xc0ull, i);
        GeneratedConversation g;
        const int frames = with_temporal_refs ? 8 : 1;
        g.scene = detail_data::make_multi_object_scene(rng, frames, frame_size, frame_size);
        int appear_frame = 0;
        if (with_temporal_refs) {
            appear_frame = detail_data::irand(rng, 1, frames - 2);
            g.scene.objects[0].appear_from = appear_frame;
        }
        const size_t max_tpl = with_temporal_refs ? templates_conversation().size() : 6;
        g.template_index = template_indices.empty()
                               ? detail_data::irand(rng, 0, static_cast<int>(max_tpl) - 1)
                               : template_indices[detail_data::irand(
                                     rng, 0, static_cast<int>(template_indices.size()) - 1)];
        const auto& objs = g.scene.objects;
        const auto& o0 = objs[0];
        std::map<std::string, std::string> slots = {
            {"obj", detail_data::object_expr(o0)},
            {"expr", detail_data::object_expr(o0)},
        };
        g.record.query_text =
            render_template_at(TaskKind::Conversation, g.template_index, slots);
        switch (g.template_index) {
            case 0: g.record.answer_text = number_words[objs.size()]; break;
            case 1: g.record.answer_text = Palette::colors()[o0.color].first; break;
            case 2: g.record.answer_text = "yes"; break;
            case 3:
            case 5: {
                std::string desc;
                for (size_t k = 0; k < objs.size(); ++k) {
                    if (k) desc += " and ";
                    desc += "a " + detail_data::object_expr(objs[k]);
                }
                g.record.answer_text = (g.template_index == 5 ? "i see " : "") + desc;
                break;
            }
            case 4: g.record.answer_text = shape_name(o0.shape); break;
            default:
                g.record.answer_text = "frame " + std::to_string(appear_frame);
                break;
        }
        g.record.visual = render_scene(g.scene);
        g.record.seed = seed ^ (static_cast<uint64_t>(i) << 8);
        out.push_back(std::move(g));
    }
    return out;
}

// --- textualization ----------------------------------------------------

inline std::string format_box_text(const Box& b) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "[%.3f,%.3f,%.3f,%.3f]", b.x1, b.y1, b.x2, b.y2);
    return buf;
}

inline std::string format_span_text(const TimeSpan& s) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "[%.3f,%.3f]", s.start, s.end);
    return buf;
}

// Converts a task annotation to answer text (lossy: 3-decimal geometry,
// masks collapsed to per-frame boxes).
inline ConversationRecord textualize(const TaskRecord& rec) {
    ConversationRecord out;
    out.visual = rec.visual;
    out.query_text = rec.query_text;
    out.seed = rec.seed;
    if (std::holds_alternative<Box>(rec.annotation)) {
        out.answer_text = format_box_text(std::get<Box>(rec.annotation));
    } else if (std::holds_alternative<TemporalAnnotation>(rec.annotation)) {
        out.answer_text = format_span_text(std::get<TemporalAnnotation>(rec.annotation).span);
    } else if (std::holds_alternative<TrackAnnotation>(rec.annotation)) {
        const auto& tr = std::get<TrackAnnotation>(rec.annotation);
        std::string t;
        for (const auto& b : tr.boxes) {
            if (!t.empty()) t += " ";
            t += b ? format_box_text(*b) : "none";
        }
        out.answer_text = t;
    } else {
        const auto& seg = std::get<SegmentationAnnotation>(rec.annotation);
        std::string t;
        for (const auto& m : seg.masks) {
            if (!t.empty()) t += " ";
            int rmin = m.height, rmax = -1, cmin = m.width, cmax = -1;
            for (int r = 0; r < m.height; ++r)
                for (int c = 0; c < m.width; ++c)
                    if (m.at(r, c)) {
                        rmin = std::min(rmin, r);
                        rmax = std::max(rmax, r);
                        cmin = std::min(cmin, c);
                        cmax = std::max(cmax, c);
                    }
            if (rmax < 0) {
                t += "none";
            } else {
                t += format_box_text(Box{static_cast<double>(cmin) / m.width,
                                         static_cast<double>(rmin) / m.height,
                                         static_cast<double>(cmax + 1) / m.width,
                                         static_cast<double>(rmax + 1) / m.height});
            }
        }
        out.answer_text = t;
    }
    return out;
}

// Parses every "[a,b,...]" group in the text; used by the textualized
// baseline at eval time and the round-trip oracle.
inline std::vector<std::vector<double>> parse_number_groups(const std::string& text) {
    std::vector<std::vector<double>> groups;
    size_t i = 0;
    while ((i = text.find('[', i)) != std::string::npos) {
        size_t j = text.find(']', i);
        if (j == std::string::npos) break;
        std::string inner = text.substr(i + 1, j - i - 1);
        for (char& c : inner)
            if (c == ',') c = ' ';
        std::istringstream ss(inner);
        std::vector<double> vals;
        double v;
        while (ss >> v) vals.push_back(v);
        groups.push_back(vals);
        i = j + 1;
    }
    return groups;
}

// --- run-length encoding ------------------------------------------------

// Alternating run lengths starting with zeros: [n0, n1, n0, n1, ...].
inline std::vector<int> rle_encode(const std::vector<uint8_t>& values) {
    std::vector<int> runs;
    uint8_t cur = 0;
    int len = 0;
    for (uint8_t v : values) {
        if (v == cur) {
            ++len;
        } else {
            runs.push_back(len);
            cur = v;
            len = 1;
        }
    }
    runs.push_back(len);
    return runs;
}

inline std::vector<uint8_t> rle_decode(const std::vector<int>& runs, size_t expected) {
    std::vector<uint8_t> out;
    out.reserve(expected);
    uint8_t cur = 0;
    for (int r : runs) {
        if (r < 0) throw std::invalid_argument("rle: negative run");
        out.insert(out.end(), static_cast<size_t>(r), cur);
        cur = 1 - cur;
    }
    if (out.size() != expected) throw std::invalid_argument("rle: length mismatch");
    return out;
}

// --- serialization ------------------------------------------------------

using json = nlohmann::json;

inline json scene_to_json(const Scene& s) {
    json objs = json::array();
    for (const auto& o : s.objects)
        objs.push_back({{"shape", static_cast<int>(o.shape)},
                        {"color", o.color},
                        {"cx", o.cx},
                        {"cy", o.cy},
                        {"size", o.size},
                        {"vx", o.vx},
                        {"vy", o.vy},
                        {"from", o.appear_from},
                        {"until", o.appear_until}});
    return json{{"t", s.t}, {"h", s.h}, {"w", s.w}, {"objects", objs}};
}

inline Scene scene_from_json(const json& j) {
    Scene s;
    s.t = j.at("t");
    s.h = j.at("h");
    s.w = j.at("w");
    for (const auto& jo : j.at("objects")) {
        SceneObject o;
        o.shape = static_cast<ShapeType>(jo.at("shape").get<int>());
        o.color = jo.at("color");
        o.cx = jo.at("cx");
        o.cy = jo.at("cy");
        o.size = jo.at("size");
        o.vx = jo.at("vx");
        o.vy = jo.at("vy");
        o.appear_from = jo.at("from");
        o.appear_until = jo.at("until");
        s.objects.push_back(o);
    }
    return s;
}

inline json task_to_json(const GeneratedTask& g) {
    json j{{"v", kRecordSchemaVersion},
           {"rec", "task"},
           {"kind", task_kind_name(g.record.kind)},
           {"query", g.record.query_text},
           {"seed", g.record.seed},
           {"target", g.target_index},
           {"template", g.template_index},
           {"scene", scene_to_json(g.scene)}};
    const auto& ann = g.record.annotation;
    if (std::holds_alternative<Box>(ann)) {
        const Box& b = std::get<Box>(ann);
        j["ann"] = {{"box", {b.x1, b.y1, b.x2, b.y2}}};
    } else if (std::holds_alternative<TemporalAnnotation>(ann)) {
        const auto& t = std::get<TemporalAnnotation>(ann);
        j["ann"] = {{"span", {t.span.start, t.span.end}}, {"saliency", t.saliency.scores}};
    } else if (std::holds_alternative<TrackAnnotation>(ann)) {
        const auto& t = std::get<TrackAnnotation>(ann);
        json boxes = json::array();
        for (const auto& b : t.boxes)
            boxes.push_back(b ? json::array({b->x1, b->y1, b->x2, b->y2}) : json());
        j["ann"] = {{"init_box", {t.init_box.x1, t.init_box.y1, t.init_box.x2, t.init_box.y2}},
                    {"boxes", boxes}};
    } else {
        const auto& sg = std::get<SegmentationAnnotation>(ann);
        json masks = json::array();
        for (const auto& m : sg.masks) masks.push_back(rle_encode(m.values));
        std::vector<int> occ(sg.occluded.begin(), sg.occluded.end());
        j["ann"] = {{"masks_rle", masks}, {"occluded", occ}};
    }
    return j;
}

inline GeneratedTask task_from_json(const json& j) {
    if (j.at("v").get<int>() != kRecordSchemaVersion)
        throw std::runtime_error("unknown record schema version");
    GeneratedTask g;
    g.record.kind = task_kind_from_name(j.at("kind"));
    g.record.query_text = j.at("query");
    g.record.seed = j.at("seed");
    g.target_index = j.at("target");
    g.template_index = j.at("template");
    g.scene = scene_from_json(j.at("scene"));
    g.record.visual = render_scene(g.scene);
    const json& a = j.at("ann");
    if (a.contains("box")) {
        auto v = a.at("box").get<std::vector<double>>();
        g.record.annotation = Box{v[0], v[1], v[2], v[3]};
    } else if (a.contains("span")) {
        TemporalAnnotation t;
        auto v = a.at("span").get<std::vector<double>>();
        t.span = TimeSpan{v[0], v[1]};
        t.saliency.scores = a.at("saliency").get<std::vector<double>>();
        g.record.annotation = t;
    } else if (a.contains("init_box")) {
        TrackAnnotation t;
        auto v = a.at("init_box").get<std::vector<double>>();
        t.init_box = Box{v[0], v[1], v[2], v[3]};
        for (const auto& jb : a.at("boxes")) {
            if (jb.is_null()) {
                t.boxes.push_back(std::nullopt);
            } else {
                auto b = jb.get<std::vector<double>>();
                t.boxes.push_back(Box{b[0], b[1], b[2], b[3]});
            }
        }
        g.record.annotation = t;
    } else {
        SegmentationAnnotation sgn;
        const size_t hw = static_cast<size_t>(g.scene.h) * g.scene.w;
        for (const auto& jm : a.at("masks_rle")) {
            MaskGrid m;
            m.height = g.scene.h;
            m.width = g.scene.w;
            m.values = rle_decode(jm.get<std::vector<int>>(), hw);
            sgn.masks.push_back(std::move(m));
        }
        for (int o : a.at("occluded").get<std::vector<int>>()) sgn.occluded.push_back(o != 0);
        g.record.annotation = sgn;
    }
    return g;
}

inline json conversation_to_json(const GeneratedConversation& g) {
    return json{{"v", kRecordSchemaVersion},
                {"rec", "conv"},
                {"query", g.record.query_text},
                {"answer", g.record.answer_text},
                {"seed", g.record.seed},
                {"template", g.template_index},
                {"scene", scene_to_json(g.scene)}};
}

inline GeneratedConversation conversation_from_json(const json& j) {
    if (j.at("v").get<int>() != kRecordSchemaVersion)
        throw std::runtime_error("unknown record schema version");
    GeneratedConversation g;
    g.record.query_text = j.at("query");
    g.record.answer_text = j.at("answer");
    g.record.seed = j.at("seed");
    g.template_index = j.at("template");
    g.scene = scene_from_json(j.at("scene"));
    g.record.visual = render_scene(g.scene);
    return g;
}

template <typename T, typename ToJson>
void write_records(const std::string& path, const std::vector<T>& records, ToJson to_json_fn) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& r : records) f << to_json_fn(r).dump() << "\n";
}

template <typename T, typename FromJson>
std::vector<T> read_records(const std::string& path, FromJson from_json_fn) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open for reading: " + path);
    std::vector<T> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        out.push_back(from_json_fn(json::parse(line)));
    }
    return out;
}

inline void write_task_records(const std::string& path, const std::vector<GeneratedTask>& r) {
    write_records(path, r, task_to_json);
}
inline std::vector<GeneratedTask> read_task_records(const std::string& path) {
    return read_records<GeneratedTask>(path, task_from_json);
}
inline void write_conversation_records(const std::string& path,
                                       const std::vector<GeneratedConversation>& r) {
    write_records(path, r, conversation_to_json);
}
inline std::vector<GeneratedConversation> read_conversation_records(const std::string& path) {
    return read_records<GeneratedConversation>(path, conversation_from_json);
}

}  // namespace tpo

#endif  // TPO_DATA_HPP
