// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "tpo/report.hpp"

using namespace tpo;

TEST_CASE("run config round-trips through json with a stable hash") {
    RunConfig c;
    c.backbone.seed = 7;
    c.data_seed = 1001;
    c.train_per_task = 12;
    c.lr_scale = 5.0;
    c.ablation_kind = "simple_head";
    c.ablation.seeds = {1, 2};
    json j(c);
    RunConfig back = j.get<RunConfig>();
    CHECK(json(back) == j);
    CHECK(run_config_hash(back) == run_config_hash(c));

    // hash is stable under source key reordering: parse a reordered dump
    json reordered = json::parse(j.dump());
    CHECK(content_hash(reordered) == run_config_hash(c));

    // but sensitive to any value change
    RunConfig other = c;
    other.data_seed += 1;
    CHECK(run_config_hash(other) != run_config_hash(c));

    json bad = j;
    bad["schema_version"] = 999;
    CHECK_THROWS_AS(bad.get<RunConfig>(), ReportError);
}

TEST_CASE("png writer emits a well-formed file") {
    Image img(64, 48);
    img.line(0, 0, 63, 47, 255, 0, 0);
    img.set(10, 10, 0, 255, 0);
    const std::string path = "/tmp/tpo_test_plot.png";
    write_png(path, img);

    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::string bytes((std::istreambuf_iterator<char>(f)), {});
    REQUIRE(bytes.size() > 8 + 12 + 13 + 12);
    const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    CHECK(std::equal(sig, sig + 8, reinterpret_cast<const unsigned char*>(bytes.data())));
    CHECK(bytes.substr(12, 4) == "IHDR");
    // big-endian width and height from the header
    auto be32 = [&](size_t off) {
        return (static_cast<uint32_t>(static_cast<unsigned char>(bytes[off])) << 24) |
               (static_cast<uint32_t>(static_cast<unsigned char>(bytes[off + 1])) << 16) |
               (static_cast<uint32_t>(static_cast<unsigned char>(bytes[off + 2])) << 8) |
               static_cast<uint32_t>(static_cast<unsigned char>(bytes[off + 3]));
    };
    CHECK(be32(16) == 64);
    CHECK(be32(20) == 48);
    CHECK(bytes.substr(bytes.size() - 8, 4) == "IEND");

    // IDAT inflates back to the exact filtered scanlines
    size_t idat = bytes.find("IDAT");
    REQUIRE(idat != std::string::npos);
    uint32_t len = be32(idat - 4);
    std::string raw(48 * (1 + 64 * 3), '\0');
    uLongf out_len = raw.size();
    REQUIRE(uncompress(reinterpret_cast<Bytef*>(raw.data()), &out_len,
                       reinterpret_cast<const Bytef*>(bytes.data() + idat + 4),
                       len) == Z_OK);
    REQUIRE(out_len == raw.size());
    // scanline 10: filter byte then pixel 10 is pure green
    const size_t row10 = 10 * (1 + 64 * 3);
    CHECK(raw[row10] == 0);
    CHECK(static_cast<unsigned char>(raw[row10 + 1 + 10 * 3]) == 0);
    CHECK(static_cast<unsigned char>(raw[row10 + 1 + 10 * 3 + 1]) == 255);
    std::remove(path.c_str());
}

TEST_CASE("line plots scale every series into the frame") {
    PlotSeries s1{"a", {0.0, 1.0, 4.0, 2.0}, 255, 0, 0};
    PlotSeries s2{"b", {3.0, 3.0, 3.0, 3.0}, 0, 0, 255};
    Image img = render_line_plot({s1, s2}, 200, 120);
    CHECK(img.width == 200);
    CHECK(img.height == 120);
    int red = 0, blue = 0;
    for (size_t i = 0; i < img.rgb.size(); i += 3) {
        if (img.rgb[i] == 255 && img.rgb[i + 1] == 0) ++red;
        if (img.rgb[i + 2] == 255 && img.rgb[i] == 0) ++blue;
    }
    CHECK(red > 100);   // polylines actually drawn
    CHECK(blue > 100);
    // an empty plot still renders axes without crashing
    Image empty = render_line_plot({}, 100, 80);
    CHECK(empty.width == 100);
}

TEST_CASE("markdown tables carry every metric and every arm") {
    EvalReport r;
    r.routing_accuracy = 0.96;
    r.spatial_miou = 0.71;
    r.spatial_recall = {{0.3, 0.9}, {0.5, 0.8}, {0.7, 0.5}};
    r.temporal_recall = {{0.5, 0.66}};
    std::string md = eval_report_markdown(r);
    CHECK(md.find("routing accuracy | 0.9600") != std::string::npos);
    CHECK(md.find("spatial mIoU | 0.7100") != std::string::npos);
    CHECK(md.find("spatial R@0.5 | 0.8000") != std::string::npos);
    CHECK(md.find("temporal R@0.5 | 0.6600") != std::string::npos);

    AblationReport ar;
    ar.kind = "textualized";
    AblationArm arm{"task_heads", {{"spatial_miou", {0.7, 0.8}}}, {{"spatial_miou", 0.75}}};
    ar.arms = {arm};
    std::string amd = ablation_report_markdown(ar);
    CHECK(amd.find("textualized") != std::string::npos);
    CHECK(amd.find("| task_heads | spatial_miou | 0.7500 | 0.7000 0.8000 |") !=
          std::string::npos);
}
