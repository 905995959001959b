// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "tpo/backbone.hpp"
#include "tpo/data.hpp"
#include "tpo/heads.hpp"
#include "tpo/losses.hpp"
#include "tpo/metrics.hpp"

using namespace tpo;

namespace {

// Small self-contained Adam for the single-sample overfit oracles.
template <typename LossFn>
double adam_fit(const std::vector<TensorPtr>& params, LossFn loss_fn, int steps, double lr) {
    std::vector<Mat> m, v;
    for (const auto& p : params) {
        m.push_back(Mat::Zero(p->rows(), p->cols()));
        v.push_back(Mat::Zero(p->rows(), p->cols()));
    }
    double last = 0;
    for (int t = 1; t <= steps; ++t) {
        for (const auto& p : params) p->zero_grad();
        TensorPtr l = loss_fn();
        last = l->value(0, 0);
        backward(l);
        const double bc1 = 1.0 - std::pow(0.9, t), bc2 = 1.0 - std::pow(0.999, t);
        for (size_t i = 0; i < params.size(); ++i) {
            Mat& g = params[i]->grad;
            m[i] = 0.9 * m[i] + 0.1 * g;
            v[i] = 0.999 * v[i] + 0.001 * g.cwiseProduct(g);
            params[i]->value -=
                lr * ((m[i] / bc1).array() / ((v[i] / bc2).array().sqrt() + 1e-8)).matrix();
        }
    }
    return last;
}

std::vector<TensorPtr> params_with_prefix(const ParamStore& ps, const std::string& prefix) {
    std::vector<TensorPtr> out;
    for (const auto& name : ps.order)
        if (name.rfind(prefix, 0) == 0) out.push_back(ps.params.at(name));
    return out;
}

}  // namespace

TEST_CASE("box and span reparameterizations are valid for any finite input") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> d(-50.0, 50.0);
    for (int i = 0; i < 500; ++i) {
        Mat raw(1, 4);
        raw << d(rng), d(rng), d(rng), d(rng);
        Box b = box_from_tensor(box_reparam(Tensor::create(raw)));
        CHECK(b.valid());
        CHECK(b.x1 >= 0.0);
        CHECK(b.y1 >= 0.0);
        CHECK(b.x2 <= 1.0);
        CHECK(b.y2 <= 1.0);

        Mat raw2(1, 2);
        raw2 << d(rng), d(rng);
        TimeSpan s = span_from_tensor(span_reparam(Tensor::create(raw2)));
        CHECK(s.valid());
        CHECK(s.start >= 0.0);
        CHECK(s.end <= 1.0);
    }
}

TEST_CASE("region head overfits one sample to IoU >= 0.99") {
    BackboneConfig cfg;
    ParamStore ps;
    std::mt19937_64 rng(7);
    RegionHead head;
    head.init(ps, cfg, rng);
    TensorPtr e = Tensor::randn(1, cfg.c_dim, 1.0, rng);
    Box gold{0.25, 0.125, 0.625, 0.5};
    TensorPtr gold_t = box_to_tensor(gold);
    // coarse fit, then decayed steps to kill the L1 oscillation band
    auto trainable = params_with_prefix(ps, "head_region.");
    auto loss_fn = [&]() { return loss_region(head.forward(e), gold_t); };
    adam_fit(trainable, loss_fn, 400, 1e-2);
    adam_fit(trainable, loss_fn, 300, 5e-4);
    adam_fit(trainable, loss_fn, 300, 5e-5);
    Box pred = head.predict(e);
    CHECK(pred.valid());
    CHECK(metric_iou(pred, gold) >= 0.99);
}

TEST_CASE("temporal head overfits one sample to tIoU >= 0.95") {
    BackboneConfig cfg;
    ParamStore ps;
    std::mt19937_64 rng(11);
    TemporalHead head;
    head.init(ps, cfg, rng);
    const int T = 8;
    TensorPtr frames = Tensor::randn(T, cfg.c_dim, 0.5, rng);
    TensorPtr query = Tensor::randn(3, cfg.c_dim, 0.5, rng);
    TensorPtr e = Tensor::randn(1, cfg.c_dim, 0.5, rng);
    TimeSpan gold{2.0 / T, 6.0 / T};
    TensorPtr gold_span = span_to_tensor(gold);
    Mat sal = Mat::Zero(T, 1);
    for (int t = 2; t < 6; ++t) sal(t, 0) = 1.0;
    TensorPtr gold_sal = Tensor::create(sal);
    adam_fit(params_with_prefix(ps, "head_temporal."),
             [&]() {
                 auto out = head.forward(frames, query, e);
                 return loss_temporal(out.span, out.saliency_logits, gold_span, gold_sal);
             },
             400, 3e-3);
    auto out = head.forward(frames, query, e);
    TimeSpan pred = span_from_tensor(out.span);
    pred.validate();
    CHECK(metric_tiou(pred, gold) >= 0.95);
    SaliencyCurve curve = TemporalHead::saliency_curve(out.saliency_logits);
    for (int t = 0; t < T; ++t) CHECK((curve.scores[t] > 0.5) == (sal(t, 0) > 0.5));
    CHECK_THROWS(head.forward(Tensor::randn(1, cfg.c_dim, 0.5, rng), query, e));
}

TEST_CASE("simple temporal head overfits a span") {
    BackboneConfig cfg;
    ParamStore ps;
    std::mt19937_64 rng(13);
    SimpleTemporalHead head;
    head.init(ps, cfg, rng);
    TensorPtr e = Tensor::randn(1, cfg.c_dim, 1.0, rng);
    TimeSpan gold{0.25, 0.75};
    TensorPtr gold_t = span_to_tensor(gold);
    // 1e-2 overshoots into exact sigmoid saturation on the length logit
    adam_fit(params_with_prefix(ps, "head_simple_temporal."),
             [&]() { return loss_span_l1(head.forward(e), gold_t); }, 600, 3e-3);
    CHECK(metric_tiou(head.predict(e), gold) >= 0.95);
}

TEST_CASE("mask adapter + decoder overfit one frame to IoU >= 0.99") {
    BackboneConfig cfg;
    cfg.seed = 3;
    Backbone bb(cfg);
    ParamStore ps;
    std::mt19937_64 rng(17);
    MaskAdapter adapter;
    MaskDecoder decoder;
    adapter.init(ps, cfg, rng);
    decoder.init(ps, cfg, rng);

    Scene s;
    s.t = 1;
    SceneObject o;
    o.shape = ShapeType::Circle;
    o.color = 2;
    o.cx = 0.5;
    o.cy = 0.5;
    o.size = 0.375;
    s.objects.push_back(o);
    TensorPtr feats = bb.encode_visual_frames(render_scene(s))[0];
    MaskGrid gold = rasterize_object(s, o, 0);
    Mat gm(cfg.frame_size * cfg.frame_size, 1);
    for (Eigen::Index i = 0; i < gm.rows(); ++i) gm(i, 0) = gold.values[i];
    TensorPtr gold_t = Tensor::create(gm);
    TensorPtr e = Tensor::randn(1, cfg.c_dim, 0.5, rng);

    std::vector<TensorPtr> trainable = params_with_prefix(ps, "mask_adapter.");
    for (const auto& p : params_with_prefix(ps, "mask_decoder.")) trainable.push_back(p);
    adam_fit(trainable,
             [&]() {
                 return loss_mask({decoder.forward(feats, adapter.forward(e))}, {gold_t}, {false});
             },
             250, 3e-3);
    MaskGrid pred = decoder.decode(feats, adapter.forward(e));
    CHECK(pred.height == cfg.frame_size);
    CHECK(pred.width == cfg.frame_size);
    CHECK(mask_iou(pred, gold) >= 0.99);
    CHECK(mask_boundary_f(pred, gold) >= 0.99);
}

TEST_CASE("memory bank is a bounded ring with a convex recall blend") {
    MemoryBank bank;
    bank.capacity = 3;
    CHECK(bank.empty());
    Eigen::RowVectorXd pooled = Eigen::RowVectorXd::Ones(4);
    CHECK_THROWS(bank.recall(pooled, pooled));

    for (int i = 0; i < 5; ++i) {
        Eigen::RowVectorXd prompt = Eigen::RowVectorXd::Constant(4, static_cast<double>(i));
        bank.push(pooled, prompt, i);
    }
    REQUIRE(bank.size() == 3);  // oldest entries evicted
    CHECK(bank.entries.front().frame_index == 2);
    CHECK(bank.entries.back().frame_index == 4);

    // identical keys weight all entries equally: 0.5*base + 0.5*mean(prompts)
    Eigen::RowVectorXd base = Eigen::RowVectorXd::Constant(4, 10.0);
    Eigen::RowVectorXd got = bank.recall(pooled, base);
    CHECK((got - Eigen::RowVectorXd::Constant(4, 0.5 * 10.0 + 0.5 * 3.0)).norm() < 1e-12);

    // a single entry recalls exactly that prompt
    MemoryBank one;
    one.push(pooled, Eigen::RowVectorXd::Constant(4, 2.0), 0);
    Eigen::RowVectorXd single = one.recall(pooled, base);
    CHECK((single - Eigen::RowVectorXd::Constant(4, 0.5 * 10.0 + 0.5 * 2.0)).norm() < 1e-12);
}

TEST_CASE("box_from_mask inverts rasterization and flags empty masks") {
    std::mt19937_64 rng(23);
    for (int i = 0; i < 50; ++i) {
        auto r = detail_data::record_rng(555, i);
        Scene s = detail_data::make_multi_object_scene(r, 1, 32, 32);
        for (const auto& o : s.objects) {
            MaskGrid m = rasterize_object(s, o, 0);
            auto direct = object_box(s, o, 0);
            REQUIRE(direct.has_value());
            CHECK(metric_iou(box_from_mask(m), *direct) == 1.0);
        }
    }
    MaskGrid empty;
    empty.height = empty.width = 4;
    empty.values.assign(16, 0);
    CHECK_FALSE(try_box_from_mask(empty).has_value());
    CHECK_THROWS_AS(box_from_mask(empty), NoObjectError);
}
