// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "tpo/metrics.hpp"

using namespace tpo;

namespace {

constexpr int kGrid = 100;  // boxes snapped to this grid rasterize exactly

Box random_grid_box(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(0, kGrid);
    for (;;) {
        int x1 = d(rng), x2 = d(rng), y1 = d(rng), y2 = d(rng);
        if (x1 > x2) std::swap(x1, x2);
        if (y1 > y2) std::swap(y1, y2);
        if (x1 == x2 || y1 == y2) continue;
        return Box{x1 / double(kGrid), y1 / double(kGrid), x2 / double(kGrid), y2 / double(kGrid)};
    }
}

// Pixel-counting oracle over the unit square at kGrid resolution.
struct RasterCounts {
    long inter{0}, uni{0}, hull{0};
};

RasterCounts rasterize_pair(const Box& a, const Box& b) {
    auto inside = [](const Box& box, double x, double y) {
        return x >= box.x1 && x < box.x2 && y >= box.y1 && y < box.y2;
    };
    RasterCounts rc;
    Box h{std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
    for (int r = 0; r < kGrid; ++r)
        for (int c = 0; c < kGrid; ++c) {
            const double x = (c + 0.5) / kGrid, y = (r + 0.5) / kGrid;
            const bool ia = inside(a, x, y), ib = inside(b, x, y);
            rc.inter += ia && ib;
            rc.uni += ia || ib;
            rc.hull += inside(h, x, y);
        }
    return rc;
}

TimeSpan random_grid_span(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(0, kGrid);
    for (;;) {
        int s = d(rng), e = d(rng);
        if (s > e) std::swap(s, e);
        if (s == e) continue;
        return TimeSpan{s / double(kGrid), e / double(kGrid)};
    }
}

}  // namespace

TEST_CASE("box IoU and GIoU match a pixel-counting oracle on 1000 pairs") {
    std::mt19937_64 rng(2024);
    const double cell = 1.0 / (kGrid * double(kGrid));
    double worst_iou = 0, worst_giou = 0;
    for (int i = 0; i < 1000; ++i) {
        Box a = random_grid_box(rng), b = random_grid_box(rng);
        RasterCounts rc = rasterize_pair(a, b);
        const double oracle_iou = double(rc.inter) / double(rc.uni);
        const double oracle_giou =
            oracle_iou - (rc.hull - rc.uni) * cell / (rc.hull * cell);
        worst_iou = std::max(worst_iou, std::abs(metric_iou(a, b) - oracle_iou));
        worst_giou = std::max(worst_giou, std::abs(metric_giou(a, b) - oracle_giou));
    }
    CHECK(worst_iou <= 1e-3);
    CHECK(worst_giou <= 1e-3);
}

TEST_CASE("temporal IoU matches a cell-counting oracle on 1000 pairs") {
    std::mt19937_64 rng(2025);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        TimeSpan a = random_grid_span(rng), b = random_grid_span(rng);
        long inter = 0, uni = 0;
        for (int c = 0; c < kGrid; ++c) {
            const double t = (c + 0.5) / kGrid;
            const bool ia = t >= a.start && t < a.end, ib = t >= b.start && t < b.end;
            inter += ia && ib;
            uni += ia || ib;
        }
        worst = std::max(worst, std::abs(metric_tiou(a, b) - double(inter) / double(uni)));
    }
    CHECK(worst <= 1e-3);
}

TEST_CASE("IoU family identities and bounds") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        Box a = random_grid_box(rng), b = random_grid_box(rng);
        CHECK(metric_iou(a, a) == Catch::Approx(1.0));
        CHECK(metric_giou(a, a) == Catch::Approx(1.0));
        CHECK(metric_iou(a, b) == metric_iou(b, a));
        CHECK(metric_giou(a, b) <= metric_iou(a, b) + 1e-12);
        CHECK(metric_giou(a, b) >= -1.0);
        CHECK(metric_iou(a, b) >= 0.0);
        CHECK(metric_iou(a, b) <= 1.0);
    }
    // disjoint boxes filling the hull: IoU 0, GIoU approaches 0 from below
    Box left{0, 0, 0.5, 1}, right{0.5, 0, 1, 1};
    CHECK(metric_iou(left, right) == 0.0);
    CHECK(metric_giou(left, right) == Catch::Approx(0.0));
    // far-apart tiny boxes: GIoU near -1
    Box tl{0, 0, 0.01, 0.01}, br{0.99, 0.99, 1, 1};
    CHECK(metric_giou(tl, br) < -0.99);
}

TEST_CASE("recall at thresholds matches a brute-force count") {
    std::vector<double> ious = {0.1, 0.31, 0.5, 0.69, 0.7, 0.95};
    auto r = metric_recall_at(ious);
    CHECK(r[0.3] == Catch::Approx(5.0 / 6.0));
    CHECK(r[0.5] == Catch::Approx(4.0 / 6.0));
    CHECK(r[0.7] == Catch::Approx(2.0 / 6.0));
    CHECK(metric_miou(ious) == Catch::Approx((0.1 + 0.31 + 0.5 + 0.69 + 0.7 + 0.95) / 6.0));
    CHECK(metric_recall_at({})[0.5] == 0.0);
}

TEST_CASE("mask IoU and boundary F behave on pinned cases") {
    auto make = [](std::initializer_list<uint8_t> v, int h, int w) {
        MaskGrid m;
        m.height = h;
        m.width = w;
        m.values = v;
        return m;
    };
    MaskGrid empty = make({0, 0, 0, 0}, 2, 2);
    MaskGrid full = make({1, 1, 1, 1}, 2, 2);
    CHECK(mask_iou(empty, empty) == 1.0);
    CHECK(mask_boundary_f(empty, empty) == 1.0);
    CHECK(mask_iou(empty, full) == 0.0);
    CHECK(mask_boundary_f(empty, full) == 0.0);
    CHECK(mask_iou(full, full) == 1.0);
    CHECK(mask_boundary_f(full, full) == 1.0);

    // one-pixel shift stays within the 1-pixel boundary tolerance
    MaskGrid a, b;
    a.height = a.width = b.height = b.width = 8;
    a.values.assign(64, 0);
    b.values.assign(64, 0);
    for (int r = 2; r < 6; ++r)
        for (int c = 2; c < 6; ++c) {
            a.values[r * 8 + c] = 1;
            b.values[r * 8 + c + 1] = 1;
        }
    CHECK(mask_boundary_f(a, b) == 1.0);
    CHECK(mask_iou(a, b) == Catch::Approx(12.0 / 20.0));

    auto jf = metric_jf({a, empty}, {b, empty});
    CHECK(jf.j == Catch::Approx(0.5 * (12.0 / 20.0 + 1.0)));
    CHECK(jf.f == 1.0);
    CHECK(jf.jf == Catch::Approx(0.5 * (jf.j + jf.f)));
}

TEST_CASE("tracking score handles absence and perfect tracks") {
    std::vector<std::optional<Box>> gold = {Box{0.1, 0.1, 0.3, 0.3}, std::nullopt,
                                            Box{0.4, 0.4, 0.6, 0.6}};
    auto s = metric_tracking(gold, gold);
    CHECK(s.success_auc == Catch::Approx(1.0));
    CHECK(s.precision == Catch::Approx(1.0));

    // predicting presence during occlusion fails that frame at all thresholds
    std::vector<std::optional<Box>> wrong = gold;
    wrong[1] = Box{0.1, 0.1, 0.3, 0.3};
    auto s2 = metric_tracking(wrong, gold);
    CHECK(s2.success_auc == Catch::Approx(2.0 / 3.0));

    // a prediction offset beyond the precision radius misses center precision
    std::vector<std::optional<Box>> off = {Box{0.3, 0.3, 0.5, 0.5}};
    std::vector<std::optional<Box>> g1 = {Box{0.1, 0.1, 0.3, 0.3}};
    auto s3 = metric_tracking(off, g1);
    CHECK(s3.precision == 0.0);
    CHECK(s3.success_auc < 0.1);
}
