#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"
#include "vlink/critic.hpp"
#include "vlink/optim.hpp"

using namespace vlink;
using test_util::random_tensor;

TEST_CASE("critic scoring") {
    Rng rng(61);
    Critic critic("criticG", 16, {4, 8}, rng);

    SECTION("identical images get identical scores") {
        Rng in(62);
        Tensor one = random_tensor({1, 3, 16, 16}, in);
        Tensor batch({3, 3, 16, 16});
        for (int n = 0; n < 3; ++n)
            std::copy_n(one.data(), one.numel(), batch.data() + n * one.numel());
        auto s = critic.scores(batch);
        CHECK(s[0] == s[1]);
        CHECK(s[1] == s[2]);
    }

    SECTION("scores stay finite across 100 seeds") {
        for (uint64_t s = 0; s < 100; ++s) {
            Rng in(s);
            auto scores = critic.scores(random_tensor({2, 3, 16, 16}, in));
            for (double v : scores) CHECK(std::isfinite(v));
        }
    }

    SECTION("resolution mismatch throws") {
        Rng in(63);
        CHECK_THROWS_AS(critic.scores(random_tensor({1, 3, 8, 8}, in)), DimensionError);
    }
}

TEST_CASE("one-layer critic matches a hand-computed affine map") {
    Rng rng(64);
    Critic critic("c", 2, {1}, rng);
    auto params = critic.params();
    REQUIRE(params.size() == 4);  // conv w/b + head w/b
    // conv weights 0.5 everywhere, bias 0.1; head weight 2, bias 0.3.
    params[0].node->value.fill(0.5);
    params[1].node->value.fill(0.1);
    params[2].node->value.fill(2.0);
    params[3].node->value.fill(0.3);

    Tensor x({1, 3, 2, 2});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = 0.1 * static_cast<double>(i + 1);

    // Straight-line oracle: stride-2 conv evaluates one output at (0,0);
    // pad 1 leaves kernel taps (ky,kx) in {1,2}^2 inside the input.
    double acc = 0.1;
    for (int c = 0; c < 3; ++c)
        for (int ky = 1; ky <= 2; ++ky)
            for (int kx = 1; kx <= 2; ++kx) acc += 0.5 * x.at(0, c, ky - 1, kx - 1);
    double activated = acc > 0 ? acc : 0.2 * acc;
    double expect = 2.0 * activated + 0.3;

    auto scores = critic.scores(x);
    REQUIRE(scores.size() == 1);
    CHECK(scores[0] == Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("wgan critic loss arithmetic") {
    CHECK(wgan_critic_loss(std::vector<double>{1, 2}, std::vector<double>{1, 2}) == 0.0);
    CHECK(wgan_critic_loss(std::vector<double>{1, 1}, std::vector<double>{0, 0}) ==
          Catch::Approx(1.0));
    CHECK(wgan_critic_loss(std::vector<double>{0.3, 0.7, 0.2}, std::vector<double>{0.1, -0.1, 0.0}) ==
          Catch::Approx(0.4));
    CHECK_THROWS_AS(wgan_critic_loss(std::vector<double>{}, std::vector<double>{1}),
                    ArgumentError);

    SECTION("translation invariance") {
        Rng rng(65);
        std::vector<double> real, fake;
        for (int i = 0; i < 7; ++i) real.push_back(rng.uniform(-2, 2));
        for (int i = 0; i < 5; ++i) fake.push_back(rng.uniform(-2, 2));
        double base = wgan_critic_loss(real, fake);
        for (auto& v : real) v += 3.7;
        for (auto& v : fake) v += 3.7;
        CHECK(wgan_critic_loss(real, fake) == Catch::Approx(base));
    }

    SECTION("node form matches the scalar form") {
        Tensor r({2, 1}, {1.0, 3.0});
        Tensor f({3, 1}, {0.0, 1.0, 2.0});
        CHECK(wgan_critic_loss(constant(r), constant(f))->value[0] ==
              Catch::Approx(wgan_critic_loss(std::vector<double>{1, 3},
                                             std::vector<double>{0, 1, 2})));
    }
}

TEST_CASE("adv loss is the sum of critic terms") {
    CHECK(adv_loss(0.0, 0.0) == 0.0);
    CHECK(adv_loss(0.4, 0.1) == Catch::Approx(0.5));

    std::vector<double> gr{0.5, 0.7}, gf{0.1, 0.1}, lr_{1.0, 0.0}, lf{0.2, 0.2};
    double recomposed = wgan_critic_loss(gr, gf) + wgan_critic_loss(lr_, lf);
    CHECK(adv_loss(wgan_critic_loss(gr, gf), wgan_critic_loss(lr_, lf)) ==
          Catch::Approx(recomposed));
}

TEST_CASE("local patch extraction") {
    Rng rng(66);
    Image img = test_util::random_image(8, 8, rng);

    SECTION("all-zero mask takes the whole frame") {
        BinaryMask m(8, 8);  // all holes
        PatchBox box = hole_patch_box(m);
        CHECK(box.r0 == 0);
        CHECK(box.c0 == 0);
        CHECK(box.side == 8);
        Image patch = extract_local_patch(img, m, 4);
        CHECK(patch.height == 4);
        Image direct = resize_image(img, 4, 4);
        CHECK(patch.pixels.raw() == direct.pixels.raw());
    }

    SECTION("single hole pixel, clamped to bounds") {
        BinaryMask m(8, 8);
        m.values.fill(1.0);
        m.at(2, 5) = 0.0;
        PatchBox box = hole_patch_box(m);
        CHECK(box.side == 1);
        CHECK(box.r0 == 2);
        CHECK(box.c0 == 5);

        BinaryMask corner(8, 8);
        corner.values.fill(1.0);
        corner.at(0, 0) = 0.0;
        PatchBox cb = hole_patch_box(corner);
        CHECK(cb.r0 == 0);
        CHECK(cb.c0 == 0);
        CHECK(cb.side == 1);
    }

    SECTION("two disjoint holes share one box") {
        BinaryMask m(8, 8);
        m.values.fill(1.0);
        m.at(1, 1) = 0.0;
        m.at(6, 3) = 0.0;
        PatchBox box = hole_patch_box(m);
        // Rows 1..6 (h=6), cols 1..3 (w=3) -> square side 6, cols centered.
        CHECK(box.side == 6);
        CHECK(box.r0 == 1);
        CHECK(box.c0 <= 1);
        CHECK(box.c0 + box.side >= 4);
    }

    SECTION("hole-free mask raises the no-hole error") {
        BinaryMask m(8, 8);
        m.values.fill(1.0);
        CHECK_THROWS_AS(hole_patch_box(m), NoHoleError);
        CHECK_THROWS_AS(extract_local_patch(img, m, 4), NoHoleError);
    }

    SECTION("output resolution is always the configured one") {
        for (int trial = 0; trial < 5; ++trial) {
            BinaryMask m = test_util::random_mask(8, 8, 0.8, rng);
            if (hole_ratio(m) == 0.0) m.at(3, 3) = 0.0;
            Image patch = extract_local_patch(img, m, 6);
            CHECK(patch.height == 6);
            CHECK(patch.width == 6);
            // The box covers every hole pixel.
            PatchBox box = hole_patch_box(m);
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x)
                    if (m.at(y, x) == 0.0) {
                        CHECK(y >= box.r0);
                        CHECK(y < box.r0 + box.side);
                        CHECK(x >= box.c0);
                        CHECK(x < box.c0 + box.side);
                    }
        }
    }

    SECTION("batched node version is differentiable") {
        Tensor batch = random_tensor({2, 3, 8, 8}, rng);
        Tensor masks({2, 1, 8, 8});
        masks.fill(1.0);
        masks.at(0, 0, 2, 2) = 0.0;
        masks.at(0, 0, 3, 3) = 0.0;
        masks.at(1, 0, 5, 1) = 0.0;
        auto out = extract_local_patch_node(constant(batch), masks, 4);
        CHECK(out->value.shape() == std::vector<int>{2, 3, 4, 4});
        CHECK(test_util::grad_check(
                  [&](const NodePtr& b) {
                      return mean_all(square(extract_local_patch_node(b, masks, 4)));
                  },
                  batch) < 1e-5);
    }
}

TEST_CASE("lipschitz control") {
    Rng rng(67);

    SECTION("weight clipping clamps every parameter") {
        Critic critic("c", 16, {4, 8}, rng);
        critic.clip_weights(0.01);
        for (auto& p : critic.params()) CHECK(p.node->value.abs_max() <= 0.01);
    }

    SECTION("penalty closed form") {
        CHECK(gradient_penalty_value(1.0, 10.0) == 0.0);
        CHECK(gradient_penalty_value(2.0, 10.0) == Catch::Approx(10.0));
    }

    SECTION("penalty on a live critic is finite and non-negative") {
        Critic critic("c", 8, {4}, rng);
        Tensor real = random_tensor({3, 3, 8, 8}, rng);
        Tensor fake = random_tensor({3, 3, 8, 8}, rng);
        Rng gp_rng(68);
        auto gp = gradient_penalty(critic, real, fake, 10.0, gp_rng);
        CHECK(gp.value >= 0.0);
        CHECK(std::isfinite(gp.value));
        CHECK(gp.norms.size() == 3);
        double check = 0.0;
        for (double n : gp.norms) check += gradient_penalty_value(n, 10.0);
        CHECK(gp.value == Catch::Approx(check / 3.0));
    }

    SECTION("clipped critic behaves Lipschitz on random pairs") {
        Critic critic("c", 8, {4, 8}, rng);
        critic.clip_weights(0.05);
        // Empirical constant from one set of pairs bounds a fresh set.
        double k = 0.0;
        for (int i = 0; i < 50; ++i) {
            Tensor a = random_tensor({1, 3, 8, 8}, rng);
            Tensor b = random_tensor({1, 3, 8, 8}, rng);
            double ds = std::abs(critic.scores(a)[0] - critic.scores(b)[0]);
            double dx = 0.0;
            for (int64_t j = 0; j < a.numel(); ++j) dx += (a[j] - b[j]) * (a[j] - b[j]);
            dx = std::sqrt(dx);
            if (dx > 1e-9) k = std::max(k, ds / dx);
        }
        for (int i = 0; i < 50; ++i) {
            Tensor a = random_tensor({1, 3, 8, 8}, rng);
            Tensor b = random_tensor({1, 3, 8, 8}, rng);
            double ds = std::abs(critic.scores(a)[0] - critic.scores(b)[0]);
            double dx = 0.0;
            for (int64_t j = 0; j < a.numel(); ++j) dx += (a[j] - b[j]) * (a[j] - b[j]);
            dx = std::sqrt(dx);
            CHECK(ds <= 3.0 * k * dx + 1e-9);
        }
    }
}

TEST_CASE("critic config validation") {
    CriticConfig cfg;
    cfg.validate();
    cfg.clip_c = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("adam step scale tracks the learning rate") {
    // Fresh optimizer state and identical gradients: the first-step delta
    // norm scales with the learning rate (finetune 1e-5 vs adversarial 1e-4).
    auto make_param = [] {
        auto p = leaf(Tensor({4}, {1.0, -2.0, 0.5, 3.0}), true);
        p->ensure_grad();
        p->grad = Tensor({4}, {0.3, -0.1, 0.2, -0.4});
        return p;
    };
    auto pa = make_param();
    auto pf = make_param();
    std::vector<NamedParam> a{{"p", pa}}, f{{"p", pf}};
    Adam opt_a(1e-4, 0.5), opt_f(1e-5, 0.5);
    opt_a.step(a);
    opt_f.step(f);
    double na = 0.0, nf = 0.0;
    for (int i = 0; i < 4; ++i) {
        double da = pa->value[i] - Tensor({4}, {1.0, -2.0, 0.5, 3.0})[i];
        double df = pf->value[i] - Tensor({4}, {1.0, -2.0, 0.5, 3.0})[i];
        na += da * da;
        nf += df * df;
    }
    CHECK(std::sqrt(nf) == Catch::Approx(0.1 * std::sqrt(na)).epsilon(1e-9));
}
