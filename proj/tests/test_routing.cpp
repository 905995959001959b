// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "tpo/data.hpp"
#include "tpo/model.hpp"

using namespace tpo;

TEST_CASE("dispatch table: heads, bypass and box-prompt needs") {
    CHECK_FALSE(dispatch_for(TaskKind::Conversation).head.has_value());
    CHECK(dispatch_for(TaskKind::SpatialGrounding).head == HeadId::Region);
    CHECK(dispatch_for(TaskKind::TemporalGrounding).head == HeadId::Temporal);
    CHECK(dispatch_for(TaskKind::Tracking).head == HeadId::Mask);
    CHECK(dispatch_for(TaskKind::Segmentation).head == HeadId::Mask);
    for (int k = 0; k < kNumTaskKinds; ++k) {
        TaskKind kind = static_cast<TaskKind>(k);
        CHECK(dispatch_for(kind).needs_box_prompt == (kind == TaskKind::Tracking));
        CHECK(Vocab::kind_from_indicator(Vocab::indicator_token(kind)) == kind);
    }
    CHECK_THROWS(Vocab::kind_from_indicator(Vocab::kBos));
    CHECK_THROWS(head_for_kind(TaskKind::Conversation));
}

TEST_CASE("query assembly: BOS first, placeholder only when a box is given") {
    BackboneConfig cfg;
    Backbone bb(cfg);
    AssembledQuery plain = build_query_sequence(bb, "find the red square");
    REQUIRE(plain.text.size() >= 2);
    CHECK(plain.text.ids[0] == Vocab::kBos);
    CHECK(plain.injected == nullptr);
    for (TokenRole r : plain.text.roles) CHECK(r == TokenRole::Query);

    AssembledQuery boxed = build_query_sequence(bb, "find the red square", Box{0.1, 0.1, 0.5, 0.5});
    CHECK(boxed.text.roles.back() == TokenRole::VisualPlaceholder);
    CHECK(boxed.injected != nullptr);
    CHECK(boxed.injected->rows() == 1);

    AssembledQuery task = build_task_sequence(bb, TaskKind::SpatialGrounding,
                                              "find the red square", std::nullopt);
    CHECK(task.text.ids.back() == Vocab::kBox);
    CHECK(task.text.roles.back() == TokenRole::TaskIndicator);
}

TEST_CASE("routing logits are restricted, renormalized and differentiable") {
    BackboneConfig cfg;
    cfg.seed = 2;
    Model m(cfg);
    auto task = gen_spatial(100, 1)[0];
    auto frames = m.bb.encode_visual_frames(task.record.visual);
    TensorPtr vis = m.bb.connect(frames);
    AssembledQuery q = build_query_sequence(m.bb, task.record.query_text);

    auto out = m.bb.lm_forward(vis, q.text, q.injected);
    TensorPtr restricted = routing_logits(out);
    REQUIRE(restricted->rows() == 1);
    REQUIRE(restricted->cols() == kNumTaskKinds);

    RoutingDecision d = decide_from_logits(restricted, static_cast<int>(out.logits->rows()) - 1);
    CHECK(d.confidence > 0.0);
    CHECK(d.confidence <= 1.0);
    Eigen::Index best = 0;
    restricted->value.row(0).maxCoeff(&best);
    CHECK(static_cast<int>(d.kind) == static_cast<int>(best));
    CHECK(d.indicator_position == static_cast<int>(out.logits->rows()) - 1);

    // a one-sided logit bump yields near-certain confidence
    Mat biased = Mat::Zero(1, kNumTaskKinds);
    biased(0, 3) = 25.0;
    CHECK(decide_from_logits(Tensor::create(biased), 0).kind == TaskKind::Tracking);
    CHECK(decide_from_logits(Tensor::create(biased), 0).confidence > 0.999);

    // L_assign reaches the low-rank adapters (B is zero-initialized, so the
    // first gradient lands on B; A's gradient is gated through B)
    m.params().zero_grads();
    backward(loss_assign(restricted, task.record.kind));
    CHECK(m.params().at("lm_lora.t0.B")->grad.cwiseAbs().maxCoeff() > 0.0);

    RoutingDecision same = assign_task(m.bb, vis, q);
    CHECK(same.kind == d.kind);
    CHECK(same.confidence == Catch::Approx(d.confidence));
}

TEST_CASE("per-record losses are finite, additive and correctly attributed") {
    BackboneConfig cfg;
    cfg.seed = 4;
    Model m(cfg);

    auto check_task = [&](const GeneratedTask& g, const char* head) {
        RecordLoss rl = task_loss(m, g.record);
        CHECK(std::isfinite(rl.loss->value(0, 0)));
        CHECK(rl.report.additive());
        CHECK(rl.report.l_mllm == 0.0);
        CHECK(rl.report.l_task_per_head.size() == 1);
        CHECK(rl.report.l_task_per_head.count(head) == 1);
        CHECK(rl.report.batch_composition.at(task_kind_name(g.record.kind)) == 1);
        // the composed loss is the weighted sum of its parts (weights = 1)
        CHECK(rl.loss->value(0, 0) ==
              Catch::Approx(rl.report.total).margin(1e-9));
    };
    check_task(gen_spatial(200, 1)[0], "region");
    check_task(gen_temporal(201, 1, 8)[0], "temporal");
    check_task(gen_tracking(202, 1, 4)[0], "mask");
    check_task(gen_segmentation(203, 1, 3)[0], "mask");

    auto conv = gen_conversation(204, 1, false)[0];
    RecordLoss rl = conversation_loss(m, conv.record);
    CHECK(std::isfinite(rl.loss->value(0, 0)));
    CHECK(rl.report.additive());
    CHECK(rl.report.l_mllm > 0.0);
    CHECK(rl.report.l_task_per_head.empty());

    TaskRecord bogus;
    bogus.kind = TaskKind::Conversation;
    CHECK_THROWS_AS(task_loss(m, bogus), DispatchError);
}

TEST_CASE("prediction fills the fields of the dispatched task") {
    BackboneConfig cfg;
    cfg.seed = 6;
    Model m(cfg);

    auto sp = gen_spatial(300, 1)[0];
    Prediction p = predict(m, sp.record.visual, sp.record.query_text, std::nullopt,
                           TaskKind::SpatialGrounding);
    REQUIRE(p.box.has_value());
    CHECK(p.box->valid());
    CHECK(p.span == std::nullopt);
    CHECK(p.masks.empty());

    auto tp = gen_temporal(301, 1, 8)[0];
    Prediction pt = predict(m, tp.record.visual, tp.record.query_text, std::nullopt,
                            TaskKind::TemporalGrounding);
    REQUIRE(pt.span.has_value());
    CHECK(pt.span->valid());
    CHECK(pt.saliency.scores.size() == 8);

    auto tr = gen_tracking(302, 1, 4)[0];
    const Box init = std::get<TrackAnnotation>(tr.record.annotation).init_box;
    Prediction ptr_ = predict(m, tr.record.visual, tr.record.query_text, init,
                              TaskKind::Tracking);
    CHECK(ptr_.masks.size() == 4);
    CHECK(ptr_.track_boxes.size() == 4);

    auto sg = gen_segmentation(303, 1, 3)[0];
    Prediction ps = predict(m, sg.record.visual, sg.record.query_text, std::nullopt,
                            TaskKind::Segmentation);
    CHECK(ps.masks.size() == 3);
    CHECK(ps.track_boxes.empty());
    for (const auto& mk : ps.masks) {
        CHECK(mk.height == cfg.frame_size);
        CHECK(mk.width == cfg.frame_size);
    }

    auto cv = gen_conversation(304, 1, false)[0];
    Prediction pc = predict(m, cv.record.visual, cv.record.query_text, std::nullopt,
                            TaskKind::Conversation, 6);
    CHECK(pc.box == std::nullopt);  // conversation bypasses every head
    // decoded text stays inside the closed lexicon
    if (!pc.answer_text.empty()) CHECK_NOTHROW(Vocab::get().encode(pc.answer_text));
}

TEST_CASE("the memory-bank blend leaves single-prompt sequences unchanged") {
    // pushed prompts equal the base prompt, so recall must return it exactly
    // and per-frame logits must match a bank-free decode
    BackboneConfig cfg;
    cfg.seed = 8;
    Model m(cfg);
    auto sg = gen_segmentation(400, 1, 4)[0];
    auto frames = m.bb.encode_visual_frames(sg.record.visual);
    std::mt19937_64 rng(5);
    TensorPtr e = Tensor::randn(1, cfg.c_dim, 0.5, rng);
    auto seq = mask_logit_sequence(m, frames, e);
    TensorPtr base = m.mask_adapter.forward(e);
    for (size_t t = 0; t < seq.size(); ++t) {
        TensorPtr direct = m.mask_decoder.forward(frames[t], base);
        CHECK((seq[t]->value - direct->value).cwiseAbs().maxCoeff() < 1e-9);
    }
}
