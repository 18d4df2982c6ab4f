#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"
#include "vlink/losses.hpp"

using namespace vlink;
using test_util::random_tensor;

namespace {

NodePtr scalar_node(double v) { return constant(Tensor::scalar(v)); }

// Straight-line Sobel -> magnitude oracle, written independently of the
// library path (direct correlation loops, replicate padding).
Tensor oracle_grad_magnitude(const Tensor& x) {
    const double kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    const double ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out(x.shape());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    double gx = 0, gy = 0;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            int sy = std::clamp(y + dy, 0, H - 1);
                            int sx = std::clamp(xx + dx, 0, W - 1);
                            gx += kx[dy + 1][dx + 1] * x.at(n, c, sy, sx);
                            gy += ky[dy + 1][dx + 1] * x.at(n, c, sy, sx);
                        }
                    out.at(n, c, y, xx) = std::sqrt(gx * gx + gy * gy + 1e-12);
                }
    return out;
}

double oracle_mse(const Tensor& a, const Tensor& b) {
    double acc = 0;
    for (int64_t i = 0; i < a.numel(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return acc / static_cast<double>(a.numel());
}

double oracle_mae(const Tensor& a, const Tensor& b) {
    double acc = 0;
    for (int64_t i = 0; i < a.numel(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<double>(a.numel());
}

}  // namespace

TEST_CASE("latent_loss") {
    Rng rng(51);
    Tensor a = random_tensor({1, 2, 2, 2}, rng);

    CHECK(latent_loss(constant(a), constant(a))->value[0] == 0.0);

    Tensor b(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) b[i] = a[i] - 2.0;
    CHECK(latent_loss(constant(a), constant(b))->value[0] == Catch::Approx(4.0));

    Tensor c = random_tensor({1, 2, 2, 2}, rng);
    CHECK(latent_loss(constant(a), constant(c))->value[0] == Catch::Approx(oracle_mse(a, c)));

    Tensor wrong = random_tensor({1, 2, 3, 2}, rng);
    CHECK_THROWS_AS(latent_loss(constant(a), constant(wrong)), DimensionError);
}

TEST_CASE("edge_loss") {
    Rng rng(52);
    Tensor gt = random_tensor({1, 3, 8, 8}, rng);

    CHECK(edge_loss(constant(gt), constant(gt))->value[0] == 0.0);

    SECTION("DC shifts vanish under sobel") {
        Tensor shifted(gt.shape());
        for (int64_t i = 0; i < gt.numel(); ++i) shifted[i] = gt[i] + 0.25;
        CHECK(edge_loss(constant(gt), constant(shifted))->value[0] ==
              Catch::Approx(0.0).margin(1e-12));
    }

    SECTION("random pair matches the straight-line oracle") {
        Tensor pred = random_tensor({1, 3, 8, 8}, rng);
        double expect = oracle_mse(oracle_grad_magnitude(gt), oracle_grad_magnitude(pred));
        CHECK(edge_loss(constant(gt), constant(pred))->value[0] == Catch::Approx(expect));
    }
}

TEST_CASE("feature_edge_loss") {
    Rng rng(53);
    Tensor a = random_tensor({1, 2, 6, 6}, rng);

    CHECK(feature_edge_loss(constant(a), constant(a))->value[0] == 0.0);

    Tensor shifted(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) shifted[i] = a[i] - 0.4;
    CHECK(feature_edge_loss(constant(a), constant(shifted))->value[0] ==
          Catch::Approx(0.0).margin(1e-12));

    Tensor b = random_tensor({1, 2, 6, 6}, rng);
    double expect = oracle_mse(oracle_grad_magnitude(a), oracle_grad_magnitude(b));
    CHECK(feature_edge_loss(constant(a), constant(b))->value[0] == Catch::Approx(expect));

    // The literal asymmetric reading compares gradient map against raw taps.
    double lit = oracle_mse(oracle_grad_magnitude(a), b);
    CHECK(feature_edge_loss(constant(a), constant(b), false)->value[0] == Catch::Approx(lit));
}

TEST_CASE("edge_combined") {
    LossWeights w;
    CHECK(w.lambda_edge == 0.5);
    CHECK(edge_combined(scalar_node(2), scalar_node(4), w)->value[0] == Catch::Approx(3.0));
    LossWeights w1;
    w1.lambda_edge = 1.0;
    CHECK(edge_combined(scalar_node(2), scalar_node(4), w1)->value[0] == Catch::Approx(2.0));
    LossWeights w0;
    w0.lambda_edge = 0.0;
    CHECK(edge_combined(scalar_node(2), scalar_node(4), w0)->value[0] == Catch::Approx(4.0));
}

TEST_CASE("pixel_loss") {
    Rng rng(54);
    LossWeights w;
    Tensor gt = random_tensor({1, 3, 4, 4}, rng);

    CHECK(pixel_loss(constant(gt), constant(gt), w)->value[0] == 0.0);

    Tensor shifted(gt.shape());
    for (int64_t i = 0; i < gt.numel(); ++i) shifted[i] = gt[i] + 0.5;
    CHECK(pixel_loss(constant(gt), constant(shifted), w)->value[0] == Catch::Approx(0.5));

    Tensor pred = random_tensor({1, 3, 4, 4}, rng);
    LossWeights w2;
    w2.k_pix = 2.0;
    CHECK(pixel_loss(constant(gt), constant(pred), w2)->value[0] ==
          Catch::Approx(2.0 * oracle_mae(gt, pred)));
}

TEST_CASE("perceptual_loss") {
    Rng rng(55);
    Tensor gt = random_tensor({1, 3, 8, 8}, rng);
    Tensor pred = random_tensor({1, 3, 8, 8}, rng);

    auto phi = FeatureExtractor::random_pyramid(4, 99);
    CHECK(perceptual_loss(constant(gt), constant(gt), phi)->value[0] ==
          Catch::Approx(0.0).margin(1e-15));
    CHECK(perceptual_loss(constant(gt), constant(pred), phi)->value[0] >= 0.0);

    auto id = FeatureExtractor::identity();
    CHECK(perceptual_loss(constant(gt), constant(pred), id)->value[0] ==
          Catch::Approx(latent_loss(constant(gt), constant(pred))->value[0]));
}

TEST_CASE("reverse_mask_loss") {
    Rng rng(56);
    Tensor gt = random_tensor({1, 3, 8, 8}, rng);
    auto id = FeatureExtractor::identity();

    SECTION("all-zero mask with a perfect composition") {
        Tensor mask({1, 1, 8, 8});  // all holes
        // pred == gt means composed == gt, and (1-M)*gt == gt.
        CHECK(reverse_mask_loss(constant(gt), constant(gt), mask, id)->value[0] ==
              Catch::Approx(0.0));
    }

    SECTION("identity extractor reduces to MAE against the composition") {
        Tensor mask({1, 1, 8, 8});
        Tensor composed = random_tensor({1, 3, 8, 8}, rng);
        CHECK(reverse_mask_loss(constant(gt), constant(composed), mask, id)->value[0] ==
              Catch::Approx(oracle_mae(gt, composed)));
    }

    SECTION("non-negative with a real extractor") {
        auto phi = FeatureExtractor::random_pyramid(4, 7);
        Tensor mask({1, 1, 8, 8});
        mask.fill(1.0);
        Tensor composed = random_tensor({1, 3, 8, 8}, rng);
        CHECK(reverse_mask_loss(constant(gt), constant(composed), mask, phi)->value[0] >= 0.0);
    }
}

TEST_CASE("contextual_loss") {
    Rng rng(57);
    auto id = FeatureExtractor::identity();

    SECTION("zero images give zero") {
        Tensor z({1, 3, 4, 4});
        Tensor mask({1, 1, 4, 4});
        mask.fill(1.0);
        CHECK(contextual_loss(constant(z), constant(z), mask, id)->value[0] == 0.0);
    }

    SECTION("2x2 hand case against the loop oracle") {
        Tensor gt = random_tensor({1, 3, 2, 2}, rng);
        Tensor pred = random_tensor({1, 3, 2, 2}, rng);
        Tensor mask({1, 1, 2, 2}, {1, 0, 0, 1});
        Tensor a(gt.shape()), b(gt.shape());
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 4; ++i) {
                double m = mask[i];
                a[c * 4 + i] = gt[c * 4 + i] * (1.0 - m);
                b[c * 4 + i] = pred[c * 4 + i] * m;
            }
        CHECK(contextual_loss(constant(gt), constant(pred), mask, id)->value[0] ==
              Catch::Approx(oracle_mse(a, b)));
    }

    SECTION("non-negative always") {
        auto phi = FeatureExtractor::random_pyramid(4, 3);
        Tensor gt = random_tensor({1, 3, 8, 8}, rng);
        Tensor pred = random_tensor({1, 3, 8, 8}, rng);
        Tensor mask({1, 1, 8, 8});
        for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < 0.5;
        CHECK(contextual_loss(constant(gt), constant(pred), mask, phi)->value[0] >= 0.0);
    }
}

TEST_CASE("total_loss and final_loss") {
    LossWeights w;
    CHECK(total_loss(scalar_node(0), scalar_node(0), scalar_node(0), w)->value[0] == 0.0);
    CHECK(total_loss(scalar_node(1), scalar_node(1), scalar_node(1), w)->value[0] ==
          Catch::Approx(0.9));
    CHECK(total_loss(scalar_node(2), scalar_node(1), scalar_node(5), w)->value[0] ==
          Catch::Approx(1.8));

    CHECK(final_loss(scalar_node(0), scalar_node(0))->value[0] == 0.0);
    CHECK(final_loss(scalar_node(0.9), scalar_node(0.5))->value[0] == Catch::Approx(1.4));

    // Recomposition: L_F equals L_T plus the adversarial sum built separately.
    double lt = total_loss(scalar_node(2), scalar_node(1), scalar_node(5), w)->value[0];
    double ladv = 0.4 + 0.1;
    CHECK(final_loss(scalar_node(lt), scalar_node(ladv))->value[0] == Catch::Approx(lt + ladv));
}

TEST_CASE("loss gradient checks at 64-bit precision") {
    auto id = FeatureExtractor::identity();
    for (uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
        Rng rng(seed);
        Tensor gt = random_tensor({1, 3, 8, 8}, rng);
        Tensor pred = random_tensor({1, 3, 8, 8}, rng);
        Tensor mask({1, 1, 8, 8});
        for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < 0.6;
        LossWeights w;

        CHECK(test_util::grad_check(
                  [&](const NodePtr& p) { return latent_loss(constant(gt), p); }, pred) < 1e-4);
        CHECK(test_util::grad_check(
                  [&](const NodePtr& p) { return edge_loss(constant(gt), p); }, pred) < 1e-4);
        CHECK(test_util::grad_check(
                  [&](const NodePtr& p) { return pixel_loss(constant(gt), p, w); }, pred) < 1e-4);
        CHECK(test_util::grad_check(
                  [&](const NodePtr& p) { return contextual_loss(constant(gt), p, mask, id); },
                  pred) < 1e-4);
    }
}

TEST_CASE("homogeneity") {
    Rng rng(58);
    LossWeights w;
    Tensor gt = random_tensor({1, 3, 4, 4}, rng);
    Tensor pred = random_tensor({1, 3, 4, 4}, rng);
    const double a = -1.7;
    Tensor gts(gt.shape()), preds(pred.shape());
    for (int64_t i = 0; i < gt.numel(); ++i) {
        gts[i] = a * gt[i];
        preds[i] = a * pred[i];
    }
    double p1 = pixel_loss(constant(gt), constant(pred), w)->value[0];
    double p2 = pixel_loss(constant(gts), constant(preds), w)->value[0];
    CHECK(p2 == Catch::Approx(std::abs(a) * p1));

    double l1 = latent_loss(constant(gt), constant(pred))->value[0];
    double l2 = latent_loss(constant(gts), constant(preds))->value[0];
    CHECK(l2 == Catch::Approx(a * a * l1));
}

TEST_CASE("permutation invariance of mean-based losses") {
    Rng rng(59);
    LossWeights w;
    Tensor gt = random_tensor({1, 1, 4, 4}, rng);
    Tensor pred = random_tensor({1, 1, 4, 4}, rng);
    std::vector<int64_t> perm(16);
    for (int64_t i = 0; i < 16; ++i) perm[static_cast<size_t>(i)] = i;
    Rng shuffler(60);
    shuffler.shuffle(perm);
    Tensor gt_p(gt.shape()), pred_p(pred.shape());
    for (int64_t i = 0; i < 16; ++i) {
        gt_p[i] = gt[perm[static_cast<size_t>(i)]];
        pred_p[i] = pred[perm[static_cast<size_t>(i)]];
    }
    CHECK(pixel_loss(constant(gt_p), constant(pred_p), w)->value[0] ==
          Catch::Approx(pixel_loss(constant(gt), constant(pred), w)->value[0]));
    CHECK(latent_loss(constant(gt_p), constant(pred_p))->value[0] ==
          Catch::Approx(latent_loss(constant(gt), constant(pred))->value[0]));
}

TEST_CASE("loss weights validate") {
    LossWeights w;
    w.alpha_rm = -0.1;
    CHECK_THROWS_AS(w.validate(), ConfigError);
}
