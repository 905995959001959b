// SPDX-License-Identifier: Apache-2.0
//
// Instruction templates per task, with slot substitution. Slots are
// written as <query>, <expr>, <obj>, <track_box>; box slots render with
// three decimals.

#ifndef TPO_TEMPLATES_HPP
#define TPO_TEMPLATES_HPP

#include <cstdio>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tpo/types.hpp"

namespace tpo {

inline const std::vector<std::string>& templates_temporal() {
    static const std::vector<std::string> t = {
        "Localize the visual content described by the given textual query <query> in the video, and output the start and end timestamps in seconds.",
        "Detect and report the start and end timestamps of the video segment that semantically matches the given textual query <query>.",
        "Locate and describe the visual content mentioned in the text query <query> within the video, including timestamps.",
        "The given natural language query <query> is semantically aligned with a video moment, please give the start time and end time of the video moment.",
        "Find the video segment that corresponds to the given textual query <query> and determine its start and end seconds.",
    };
    return t;
}

inline const std::vector<std::string>& templates_tracking() {
    static const std::vector<std::string> t = {
        "Track the object in the video using a box with initial coordinates <track_box>.",
        "Use a bounding box with coordinates <track_box> to follow the movement of the moving object in the visual input.",
        "Given an initial bounding box with coordinates <track_box>, track the motion of the target object in the sequence of frames.",
        "Starting from the box defined by the coordinates <track_box>, monitor the movement of the object in the video.",
        "Utilizing the initial box specified by the coordinates <track_box>, continuously track and update the location of the object in the video stream.",
        "Given a video with an object of interest enclosed in a bounding box with coordinates <track_box>, generate a sequence of bounding boxes that track the object's movement.",
        "With an initial box defined by <track_box>, trace the object's trajectory by generating a sequence of bounding boxes that follow the object's movement in the visual input.",
        "Apply an object tracking algorithm to a video, starting with a bounding box defined by <track_box>.",
        "Given a video and an initial bounding box defined by <track_box>, track the movement of the object within the video.",
        "Starting from an initial box defined by <track_box>, track the movement of the object in the visual input.",
    };
    return t;
}

inline const std::vector<std::string>& templates_spatial() {
    static const std::vector<std::string> t = {
        "Where is <expr>?",
        "Can you find <expr>?",
        "Can you detect <expr>?",
        "Can you locate <expr>?",
        "Please find <expr>.",
        "Please detect <expr>?",
        "Please locate <expr>?",
        "Find <expr>.",
        "Detect <expr>?",
        "Locate <expr>?",
    };
    return t;
}

inline const std::vector<std::string>& templates_segmentation() {
    static const std::vector<std::string> t = {
        "Please give the motion path of <obj> in the video over time.",
        "Show the tracking trajectory of <obj>'s movement through the scene in the video.",
        "Please generate a motion path of <obj>'s movement in the video, highlighting its tracking trajectory.",
        "Show the tracking trajectory of <obj>.",
        "Generate <obj>'s tracking trajectory.",
        "Visualize the tracking trajectory of <obj> in the video.",
        "Please generate a visual representation of <obj>'s movement in the video, highlighting its tracking trajectory.",
    };
    return t;
}

// Question/answer templates for plain dialogue; answers are filled by the
// conversation generator.
inline const std::vector<std::string>& templates_conversation() {
    static const std::vector<std::string> t = {
        "How many shapes are there in the scene?",
        "What color is the <obj>?",
        "Is there a <expr> in the scene?",
        "Describe the shapes in the scene.",
        "What shape is the <obj> object?",
        "Tell me what you see in the scene.",
        "When does the <obj> appear in the video?",
        "At which frame does the <obj> show up?",
    };
    return t;
}

inline const std::vector<std::string>& templates_for(TaskKind kind) {
    switch (kind) {
        case TaskKind::Conversation: return templates_conversation();
        case TaskKind::SpatialGrounding: return templates_spatial();
        case TaskKind::TemporalGrounding: return templates_temporal();
        case TaskKind::Tracking: return templates_tracking();
        case TaskKind::Segmentation: return templates_segmentation();
    }
    throw std::invalid_argument("bad task kind");
}

inline std::string format_box_slot(const Box& b) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "[%.3f,%.3f,%.3f,%.3f]", b.x1, b.y1, b.x2, b.y2);
    return buf;
}

inline std::string substitute_slots(std::string text, const std::map<std::string, std::string>& slots) {
    for (;;) {
        size_t open = text.find('<');
        if (open == std::string::npos) break;
        size_t close = text.find('>', open);
        if (close == std::string::npos) break;
        std::string name = text.substr(open + 1, close - open - 1);
        auto it = slots.find(name);
        if (it == slots.end()) throw std::invalid_argument("missing slot: " + name);
        text = text.substr(0, open) + it->second + text.substr(close + 1);
    }
    return text;
}

// Uniformly samples a template for the task and substitutes slots.
inline std::string render_template(TaskKind kind, const std::map<std::string, std::string>& slots,
                                   std::mt19937_64& rng) {
    const auto& ts = templates_for(kind);
    std::uniform_int_distribution<size_t> pick(0, ts.size() - 1);
    return substitute_slots(ts[pick(rng)], slots);
}

// Deterministic variant used for train/held-out template splits.
inline std::string render_template_at(TaskKind kind, size_t index,
                                      const std::map<std::string, std::string>& slots) {
    const auto& ts = templates_for(kind);
    return substitute_slots(ts[index % ts.size()], slots);
}

}  // namespace tpo

#endif  // TPO_TEMPLATES_HPP
