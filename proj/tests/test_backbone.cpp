// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "tpo/backbone.hpp"
#include "tpo/data.hpp"

using namespace tpo;

namespace {

VisualInput demo_clip(int frames = 2) {
    Scene s;
    s.t = frames;
    SceneObject o;
    o.shape = ShapeType::Square;
    o.color = 0;
    o.cx = o.cy = 0.5;
    o.size = 0.25;
    s.objects.push_back(o);
    return render_scene(s);
}

TokenSequence demo_text() {
    TokenSequence t;
    t.push(Vocab::kBos, TokenRole::Query);
    for (int id : Vocab::get().encode("find the red square"))
        t.push(id, TokenRole::Query);
    return t;
}

}  // namespace

TEST_CASE("construction is deterministic in the seed") {
    BackboneConfig cfg;
    cfg.seed = 5;
    Backbone a(cfg), b(cfg);
    REQUIRE(a.params.order == b.params.order);
    for (const auto& name : a.params.order)
        CHECK(a.params.at(name)->value == b.params.at(name)->value);

    cfg.seed = 6;
    Backbone c(cfg);
    bool differs = false;
    for (const auto& name : a.params.order)
        if (a.params.at(name)->value != c.params.at(name)->value) differs = true;
    CHECK(differs);
}

TEST_CASE("forward shapes follow the config") {
    BackboneConfig cfg;
    Backbone bb(cfg);
    VisualInput clip = demo_clip(3);
    auto frames = bb.encode_visual_frames(clip);
    REQUIRE(frames.size() == 3);
    CHECK(frames[0]->rows() == cfg.patches_per_frame());
    CHECK(frames[0]->cols() == cfg.c_dim);

    TensorPtr vis = bb.connect(frames);
    CHECK(vis->rows() == 3 * cfg.num_connector_queries);
    CHECK(vis->cols() == cfg.c_dim);

    TensorPtr pooled = bb.frame_features(frames);
    CHECK(pooled->rows() == 3);

    TokenSequence text = demo_text();
    auto out = bb.lm_forward(vis, text);
    CHECK(out.logits->rows() == vis->rows() + static_cast<Eigen::Index>(text.size()));
    CHECK(out.logits->cols() == cfg.vocab_size);
    CHECK(out.hidden->cols() == cfg.c_dim);

    TensorPtr e = bb.task_embedding(HeadId::Region, vis, text);
    CHECK(e->rows() == 1);
    CHECK(e->cols() == cfg.c_dim);
}

TEST_CASE("identical inputs give identical outputs") {
    BackboneConfig cfg;
    Backbone bb(cfg);
    VisualInput clip = demo_clip();
    TokenSequence text = demo_text();
    auto a = bb.lm_forward(bb.connect(bb.encode_visual_frames(clip)), text);
    auto b = bb.lm_forward(bb.connect(bb.encode_visual_frames(clip)), text);
    CHECK(a.logits->value == b.logits->value);
}

TEST_CASE("the LM is causal: later tokens cannot affect earlier logits") {
    BackboneConfig cfg;
    Backbone bb(cfg);
    TokenSequence a = demo_text(), b = demo_text();
    b.ids.back() = Vocab::get().encode("circle")[0];
    auto oa = bb.lm_forward(nullptr, a);
    auto ob = bb.lm_forward(nullptr, b);
    const Eigen::Index L = oa.logits->rows();
    CHECK(oa.logits->value.topRows(L - 1) == ob.logits->value.topRows(L - 1));
    CHECK(oa.logits->value.row(L - 1) != ob.logits->value.row(L - 1));
}

TEST_CASE("LoRA attach is an exact identity until B moves, merge folds it in") {
    BackboneConfig cfg;
    Backbone bb(cfg);
    TokenSequence text = demo_text();
    Mat base = bb.lm_forward(nullptr, text).logits->value;

    std::mt19937_64 rng(99);
    bb.apply_lora(rng);
    CHECK(bb.lora_attached);
    CHECK(bb.lm_forward(nullptr, text).logits->value == base);

    // move one adapter's B; output must change and match the merged weight
    TensorPtr B = bb.params.at("lm_lora.t0.B");
    B->value.setRandom();
    B->value *= 0.05;
    Mat adapted = bb.lm_forward(nullptr, text).logits->value;
    CHECK(adapted != base);

    // delta formula: effective W == W + (alpha/rank) B*A applied to input
    TensorPtr A = bb.params.at("lm_lora.t0.A");
    Linear* target = bb.lm.lora_targets()[0];
    Mat x = Mat::Random(3, cfg.c_dim);
    Mat expect = x * target->W->value +
                 (cfg.lora_alpha / cfg.lora_rank) * ((x * A->value) * B->value);
    expect.rowwise() += target->b->value.row(0);
    Mat got = target->forward(Tensor::create(x))->value;
    CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-6);

    Backbone merged(cfg);
    std::mt19937_64 rng2(99);
    merged.apply_lora(rng2);
    merged.params.at("lm_lora.t0.B")->value = B->value;
    merged.merge_lora();
    CHECK_FALSE(merged.lora_attached);
    Mat after_merge = merged.lm_forward(nullptr, text).logits->value;
    CHECK((after_merge - adapted).cwiseAbs().maxCoeff() < 1e-9);

    // detaching restores the base model bitwise
    bb.detach_lora();
    CHECK(bb.lm_forward(nullptr, text).logits->value == base);
}

TEST_CASE("gradients flow end to end and match finite differences") {
    BackboneConfig cfg;
    cfg.c_dim = 32;
    cfg.num_heads = 2;
    cfg.num_lm_layers = 1;
    cfg.num_connector_queries = 4;
    cfg.vocab_size = 64;
    Backbone bb(cfg);
    VisualInput clip = demo_clip(1);
    TokenSequence text;
    text.push(Vocab::kBos, TokenRole::Query);
    text.push(20, TokenRole::Query);
    text.push(21, TokenRole::Query);

    auto loss_of = [&]() {
        auto out = bb.lm_forward(bb.connect(bb.encode_visual_frames(clip)), text);
        return mean(square(out.logits));
    };
    bb.params.zero_grads();
    backward(loss_of());

    // spot-check several parameters across the three modules
    const char* names[] = {"vision.patch_embed.W", "connector.queries", "lm.tok_embed",
                           "lm.block0.attn.wq.W", "lm.head.W"};
    std::mt19937_64 pick(3);
    const double h = 1e-5;
    for (const char* name : names) {
        TensorPtr p = bb.params.at(name);
        double worst = 0;
        for (int trial = 0; trial < 4; ++trial) {
            Eigen::Index i = pick() % p->rows(), j = pick() % p->cols();
            const double keep = p->value(i, j);
            p->value(i, j) = keep + h;
            const double up = loss_of()->value(0, 0);
            p->value(i, j) = keep - h;
            const double down = loss_of()->value(0, 0);
            p->value(i, j) = keep;
            const double fd = (up - down) / (2 * h);
            const double an = p->grad(i, j);
            worst = std::max(worst,
                             std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
        }
        INFO(name);
        CHECK(worst <= 1e-3);
    }
}

TEST_CASE("invalid inputs are rejected with typed errors") {
    BackboneConfig cfg;
    Backbone bb(cfg);

    VisualInput wrong = demo_clip();
    wrong.height = 16;
    CHECK_THROWS_AS(bb.encode_visual_frames(wrong), ConfigError);

    VisualInput nan_clip = demo_clip();
    nan_clip.frames[0][0] = std::nan("");
    CHECK_THROWS_AS(bb.encode_visual_frames(nan_clip), ConfigError);

    VisualInput too_long = demo_clip(cfg.t_max + 1);
    CHECK_THROWS_AS(bb.encode_visual_frames(too_long), ConfigError);

    TokenSequence huge;
    for (int i = 0; i < cfg.ctx_max + 1; ++i) huge.push(Vocab::kBos, TokenRole::Query);
    CHECK_THROWS_AS(bb.lm_forward(nullptr, huge), LengthError);

    TokenSequence with_slot;
    with_slot.push(Vocab::kBos, TokenRole::Query);
    with_slot.push(Vocab::kVis, TokenRole::VisualPlaceholder);
    CHECK_THROWS_AS(bb.lm_forward(nullptr, with_slot), DispatchError);

    BackboneConfig bad;
    bad.c_dim = 63;
    CHECK_THROWS(Backbone(bad));
}

TEST_CASE("box prompt encoding validates and is differentiable") {
    BackboneConfig cfg;
    Backbone bb(cfg);
    Box b{0.2, 0.2, 0.6, 0.7};
    TensorPtr enc = bb.encode_box_prompt(b);
    CHECK(enc->rows() == 1);
    CHECK(enc->cols() == cfg.c_dim);
    CHECK_THROWS(bb.encode_box_prompt(Box{0.5, 0.5, 0.2, 0.2}));

    TensorPtr coords = Tensor::create((Mat(1, 4) << 0.2, 0.2, 0.6, 0.7).finished());
    coords->requires_grad = true;
    coords->zero_grad();
    backward(sum(square(bb.encode_box_prompt(coords))));
    CHECK(coords->grad.cwiseAbs().maxCoeff() > 0.0);
}
