// SPDX-License-Identifier: Apache-2.0
//
// Shared domain types: geometry, masks, task kinds and training records.

#ifndef TPO_TYPES_HPP
#define TPO_TYPES_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace tpo {

// Scene color lexicon, shared by the renderer and the language side.
struct Palette {
    static const std::vector<std::pair<std::string, std::array<double, 3>>>& colors() {
        // the seven bright RGB-cube vertices: mutually separable by
        // per-channel monotone detectors, which is all the frozen mask
        // decoder's gated color channels can express
        static const std::vector<std::pair<std::string, std::array<double, 3>>> c = {
            {"red", {1, 0, 0}},    {"green", {0, 1, 0}},   {"blue", {0, 0, 1}},
            {"yellow", {1, 1, 0}}, {"magenta", {1, 0, 1}}, {"cyan", {0, 1, 1}},
            {"white", {1, 1, 1}},
        };
        return c;
    }
    static int count() { return static_cast<int>(colors().size()); }
};

// Uniform background intensity of rendered scenes.
constexpr double kBackgroundLevel = 0.08;

enum class TaskKind : int {
    Conversation = 0,
    SpatialGrounding = 1,
    TemporalGrounding = 2,
    Tracking = 3,
    Segmentation = 4,
};

constexpr int kNumTaskKinds = 5;

inline const char* task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::Conversation: return "conversation";
        case TaskKind::SpatialGrounding: return "spatial";
        case TaskKind::TemporalGrounding: return "temporal";
        case TaskKind::Tracking: return "tracking";
        case TaskKind::Segmentation: return "segmentation";
    }
    return "?";
}

inline TaskKind task_kind_from_name(const std::string& s) {
    for (int i = 0; i < kNumTaskKinds; ++i)
        if (s == task_kind_name(static_cast<TaskKind>(i))) return static_cast<TaskKind>(i);
    throw std::invalid_argument("unknown task kind: " + s);
}

// Normalized axis-aligned box, corners in [0, 1], x1 < x2 and y1 < y2.
struct Box {
    double x1{0}, y1{0}, x2{0}, y2{0};

    bool valid() const {
        return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
               x1 < x2 && y1 < y2;
    }
    double area() const { return (x2 - x1) * (y2 - y1); }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }

    void validate() const {
        if (!valid()) throw std::invalid_argument("invalid box");
    }
};

// Normalized time interval, 0 <= start < end <= 1.
struct TimeSpan {
    double start{0}, end{0};

    bool valid() const { return std::isfinite(start) && std::isfinite(end) && start < end; }
    double length() const { return end - start; }
    void validate() const {
        if (!valid()) throw std::invalid_argument("invalid time span");
    }
};

// Per-frame highlight scores in [0, 1].
struct SaliencyCurve {
    std::vector<double> scores;
};

// Binary mask over one frame; logits kept when produced by the decoder.
struct MaskGrid {
    int height{0}, width{0};
    std::vector<uint8_t> values;          // row-major, 0/1
    std::vector<double> logits;           // optional, same layout

    uint8_t at(int r, int c) const { return values[static_cast<size_t>(r) * width + c]; }
    size_t positive_count() const {
        size_t n = 0;
        for (uint8_t v : values) n += v;
        return n;
    }
    static MaskGrid from_logits(const std::vector<double>& lg, int h, int w) {
        MaskGrid m;
        m.height = h;
        m.width = w;
        m.logits = lg;
        m.values.resize(lg.size());
        for (size_t i = 0; i < lg.size(); ++i) m.values[i] = lg[i] > 0.0 ? 1 : 0;  // sigmoid > 0.5
        return m;
    }
};

// Video clip, frames[t] is H*W*3 row-major RGB in [0, 1].
struct VisualInput {
    int frames_count{0}, height{0}, width{0};
    std::vector<std::vector<double>> frames;

    bool valid() const {
        if (frames_count < 1 || static_cast<int>(frames.size()) != frames_count) return false;
        const size_t want = static_cast<size_t>(height) * width * 3;
        for (const auto& f : frames) {
            if (f.size() != want) return false;
            for (double v : f)
                if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

enum class TokenRole : uint8_t { Query, Answer, VisualPlaceholder, TaskIndicator, TaskTokenSlot };

struct TokenSequence {
    std::vector<int> ids;
    std::vector<TokenRole> roles;

    size_t size() const { return ids.size(); }
    void push(int id, TokenRole role) {
        ids.push_back(id);
        roles.push_back(role);
    }
};

// Structured annotation carried by a TaskRecord.
struct TrackAnnotation {
    Box init_box;
    std::vector<std::optional<Box>> boxes;  // nullopt on occluded frames
};

struct TemporalAnnotation {
    TimeSpan span;
    SaliencyCurve saliency;
};

struct SegmentationAnnotation {
    std::vector<MaskGrid> masks;
    std::vector<bool> occluded;  // true => empty-mask frame
};

using TaskAnnotation = std::variant<Box, TemporalAnnotation, TrackAnnotation, SegmentationAnnotation>;

struct TaskRecord {
    TaskKind kind{TaskKind::SpatialGrounding};
    VisualInput visual;
    std::string query_text;
    TaskAnnotation annotation;
    uint64_t seed{0};  // generator seed/index, for reproducibility reports
};

struct ConversationRecord {
    VisualInput visual;
    std::string query_text;
    std::string answer_text;
    uint64_t seed{0};
};

struct HeadOutput {
    std::variant<Box, std::pair<std::vector<TimeSpan>, SaliencyCurve>, std::vector<MaskGrid>> value;
};

}  // namespace tpo

#endif  // TPO_TYPES_HPP
