// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics, all plain scalar math in [0, 1]. Degenerate cases
// are pinned: empty-vs-empty masks score 1 in both J and F; a missing box
// against a present one scores 0.

#ifndef TPO_METRICS_HPP
#define TPO_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "tpo/types.hpp"

namespace tpo {

inline double metric_iou(const Box& a, const Box& b) {
    const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni <= 0.0 ? 0.0 : inter / uni;
}

// Generalized IoU in [-1, 1]: IoU minus the hull-gap penalty.
inline double metric_giou(const Box& a, const Box& b) {
    const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    const double hull = (std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) *
                        (std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
    double iou = uni <= 0.0 ? 0.0 : inter / uni;
    return hull <= 0.0 ? iou : iou - (hull - uni) / hull;
}

inline double metric_tiou(const TimeSpan& a, const TimeSpan& b) {
    const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
    const double uni = a.length() + b.length() - inter;
    return uni <= 0.0 ? 0.0 : inter / uni;
}

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// R@theta over a list of per-sample (t)IoU values.
inline std::map<double, double> metric_recall_at(const std::vector<double>& ious,
                                                 const std::vector<double>& thresholds = {0.3, 0.5,
                                                                                          0.7}) {
    std::map<double, double> out;
    for (double th : thresholds) {
        int hit = 0;
        for (double v : ious)
            if (v >= th) ++hit;
        out[th] = ious.empty() ? 0.0 : static_cast<double>(hit) / ious.size();
    }
    return out;
}

inline double metric_miou(const std::vector<double>& ious) { return mean_of(ious); }

inline double mask_iou(const MaskGrid& a, const MaskGrid& b) {
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        inter += a.values[i] & b.values[i];
        uni += a.values[i] | b.values[i];
    }
    if (uni == 0) return 1.0;  // empty vs empty
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// Boundary pixels: positive with a zero 4-neighbor or touching the border.
inline std::vector<uint8_t> mask_boundary(const MaskGrid& m) {
    std::vector<uint8_t> out(m.values.size(), 0);
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c) {
            if (!m.at(r, c)) continue;
            bool edge = r == 0 || c == 0 || r == m.height - 1 || c == m.width - 1 ||
                        !m.at(r - 1, c) || !m.at(r + 1, c) || !m.at(r, c - 1) || !m.at(r, c + 1);
            if (edge) out[static_cast<size_t>(r) * m.width + c] = 1;
        }
    return out;
}

// Boundary F-measure with a 1-pixel matching tolerance.
inline double mask_boundary_f(const MaskGrid& pred, const MaskGrid& gold) {
    auto bp = mask_boundary(pred), bg = mask_boundary(gold);
    size_t np = 0, ng = 0;
    for (uint8_t v : bp) np += v;
    for (uint8_t v : bg) ng += v;
    if (np == 0 && ng == 0) return 1.0;
    if (np == 0 || ng == 0) return 0.0;
    auto matched = [&](const std::vector<uint8_t>& from, const std::vector<uint8_t>& to) {
        size_t hits = 0;
        for (int r = 0; r < pred.height; ++r)
            for (int c = 0; c < pred.width; ++c) {
                if (!from[static_cast<size_t>(r) * pred.width + c]) continue;
                bool hit = false;
                for (int dr = -1; dr <= 1 && !hit; ++dr)
                    for (int dc = -1; dc <= 1 && !hit; ++dc) {
                        int rr = r + dr, cc = c + dc;
                        if (rr >= 0 && cc >= 0 && rr < pred.height && cc < pred.width &&
                            to[static_cast<size_t>(rr) * pred.width + cc])
                            hit = true;
                    }
                if (hit) ++hits;
            }
        return hits;
    };
    double precision = static_cast<double>(matched(bp, bg)) / static_cast<double>(np);
    double recall = static_cast<double>(matched(bg, bp)) / static_cast<double>(ng);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

struct JfScore {
    double j{0}, f{0}, jf{0};
};

inline JfScore metric_jf(const std::vector<MaskGrid>& pred, const std::vector<MaskGrid>& gold) {
    std::vector<double> js, fs;
    for (size_t i = 0; i < pred.size() && i < gold.size(); ++i) {
        js.push_back(mask_iou(pred[i], gold[i]));
        fs.push_back(mask_boundary_f(pred[i], gold[i]));
    }
    JfScore s;
    s.j = mean_of(js);
    s.f = mean_of(fs);
    s.jf = 0.5 * (s.j + s.f);
    return s;
}

struct TrackingScore {
    double success_auc{0};
    double precision{0};
};

// Per-frame IoU with absence handling: both absent scores 1, one absent
// scores 0. Success is the mean over IoU thresholds sampled at 0.05;
// frames without a prediction fail at every threshold.
inline TrackingScore metric_tracking(const std::vector<std::optional<Box>>& preds,
                                     const std::vector<std::optional<Box>>& golds,
                                     double precision_radius = 20.0 / 256.0) {
    std::vector<double> ious;
    std::vector<bool> has_pair;
    int center_hits = 0;
    const size_t n = std::min(preds.size(), golds.size());
    for (size_t i = 0; i < n; ++i) {
        const bool p = preds[i].has_value(), g = golds[i].has_value();
        if (!p && !g) {
            ious.push_back(1.0);
            has_pair.push_back(true);
            ++center_hits;
        } else if (p != g) {
            ious.push_back(0.0);
            has_pair.push_back(false);
        } else {
            ious.push_back(metric_iou(*preds[i], *golds[i]));
            has_pair.push_back(true);
            double dx = preds[i]->cx() - golds[i]->cx(), dy = preds[i]->cy() - golds[i]->cy();
            if (std::sqrt(dx * dx + dy * dy) <= precision_radius) ++center_hits;
        }
    }
    TrackingScore s;
    if (n == 0) return s;
    double auc = 0;
    int steps = 0;
    for (double th = 0.0; th <= 1.0 + 1e-9; th += 0.05, ++steps) {
        int hit = 0;
        for (size_t i = 0; i < n; ++i)
            if (has_pair[i] && ious[i] >= th - 1e-12) ++hit;
        auc += static_cast<double>(hit) / static_cast<double>(n);
    }
    s.success_auc = auc / steps;
    s.precision = static_cast<double>(center_hits) / static_cast<double>(n);
    return s;
}

}  // namespace tpo

#endif  // TPO_METRICS_HPP
