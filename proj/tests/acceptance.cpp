// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line per criterion. Exit code is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "vlink/cli.hpp"
#include "vlink/metrics.hpp"
#include "vlink/protocol.hpp"
#include "vlink/trainer.hpp"

using namespace vlink;

namespace {

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& msg) {
    if (!cond) throw Failure(msg);
}

std::string tmp_root() {
    static std::string root = [] {
        auto p = std::filesystem::temp_directory_path() /
                 ("vlink_acceptance_" + std::to_string(::getpid()));
        std::filesystem::create_directories(p);
        return p.string();
    }();
    return root;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// Independent reference implementations (the oracles)
// ---------------------------------------------------------------------------

double ref_mae(const Image& a, const Image& b) {
    double acc = 0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < a.height; ++y)
            for (int x = 0; x < a.width; ++x)
                acc += std::abs((a.at(c, y, x) + 1.0) * 127.5 - (b.at(c, y, x) + 1.0) * 127.5);
    return acc / (3.0 * a.height * a.width);
}

double ref_psnr(const Image& a, const Image& b) {
    double acc = 0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < a.height; ++y)
            for (int x = 0; x < a.width; ++x) {
                double d = (a.at(c, y, x) - b.at(c, y, x)) * 127.5;
                acc += d * d;
            }
    double mse = acc / (3.0 * a.height * a.width);
    if (mse == 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double ref_ssim(const Image& a, const Image& b) {
    const double c1 = 6.5025, c2 = 58.5225;
    double k[11];
    double ksum = 0;
    for (int i = 0; i < 11; ++i) {
        double d = i - 5;
        k[i] = std::exp(-d * d / 4.5);
        ksum += k[i];
    }
    for (double& v : k) v /= ksum;
    double total = 0;
    for (int c = 0; c < 3; ++c) {
        double acc = 0;
        int count = 0;
        for (int y = 0; y + 11 <= a.height; ++y)
            for (int x = 0; x + 11 <= a.width; ++x) {
                double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
                for (int dy = 0; dy < 11; ++dy)
                    for (int dx = 0; dx < 11; ++dx) {
                        double w = k[dy] * k[dx];
                        double xv = (a.at(c, y + dy, x + dx) + 1.0) * 127.5;
                        double yv = (b.at(c, y + dy, x + dx) + 1.0) * 127.5;
                        mx += w * xv;
                        my += w * yv;
                        mxx += w * xv * xv;
                        myy += w * yv * yv;
                        mxy += w * xv * yv;
                    }
                double vx = mxx - mx * mx, vy = myy - my * my, cov = mxy - mx * my;
                acc += ((2 * mx * my + c1) * (2 * cov + c2)) /
                       ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
        total += acc / count;
    }
    return total / 3.0;
}

double ref_fid(const std::vector<std::vector<double>>& ra,
               const std::vector<std::vector<double>>& rb) {
    int dim = static_cast<int>(ra[0].size());
    auto fit = [dim](const std::vector<std::vector<double>>& rows, Eigen::VectorXd& mu,
                     Eigen::MatrixXd& cov) {
        int n = static_cast<int>(rows.size());
        Eigen::MatrixXd X(n, dim);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < dim; ++j) X(i, j) = rows[i][j];
        mu = X.colwise().mean();
        Eigen::MatrixXd c = X.rowwise() - mu.transpose();
        cov = c.transpose() * c / double(n - 1);
    };
    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd cov_a, cov_b;
    fit(ra, mu_a, cov_a);
    fit(rb, mu_b, cov_b);
    // Dense nonsymmetric route: eigenvalues of the covariance product.
    Eigen::EigenSolver<Eigen::MatrixXd> es(cov_a * cov_b);
    double tr_sqrt = 0;
    for (int i = 0; i < dim; ++i)
        tr_sqrt += std::sqrt(std::max(es.eigenvalues()(i).real(), 0.0));
    return (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2 * tr_sqrt;
}

// ---------------------------------------------------------------------------
// Shared fixtures
// ---------------------------------------------------------------------------

Image random_image(int n, Rng& rng) {
    Image img(n, n);
    for (int64_t i = 0; i < img.pixels.numel(); ++i) img.pixels[i] = rng.uniform(-1.0, 1.0);
    return img;
}

Image textured_image(int n, uint64_t variant) {
    Image img(n, n);
    double fx = 1.0 + static_cast<double>(variant % 3);
    double fy = 1.0 + static_cast<double>((variant / 3) % 3);
    double phase = 0.9 * static_cast<double>(variant);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                double base = std::sin(2 * M_PI * fx * x / n + phase + 1.7 * c) *
                              std::cos(2 * M_PI * fy * y / n - phase);
                double ramp = 0.3 * (2.0 * y / n - 1.0);
                img.at(c, y, x) = std::clamp(0.6 * base + ramp, -0.95, 0.95);
            }
    return img;
}

BinaryMask box_mask(int n, int r0, int c0, int side) {
    BinaryMask m(n, n);
    m.values.fill(1.0);
    for (int y = r0; y < r0 + side; ++y)
        for (int x = c0; x < c0 + side; ++x) m.at(y, x) = 0.0;
    return m;
}

double hole_mae_8bit(const Image& gt, const Image& composed, const BinaryMask& m) {
    double acc = 0;
    int64_t count = 0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < gt.height; ++y)
            for (int x = 0; x < gt.width; ++x)
                if (m.at(y, x) == 0.0) {
                    acc += std::abs((gt.at(c, y, x) - composed.at(c, y, x)) * 127.5);
                    ++count;
                }
    return count ? acc / static_cast<double>(count) : 0.0;
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

void criterion1_metric_oracles() {
    Rng rng(101);
    for (int i = 0; i < 20; ++i) {
        Image a = random_image(32, rng);
        Image b = random_image(32, rng);
        require(std::abs(mae(a, b) - ref_mae(a, b)) < 1e-6, "mae deviates from the oracle");
        require(std::abs(psnr(a, b) - ref_psnr(a, b)) < 1e-6, "psnr deviates from the oracle");
        require(std::abs(ssim(a, b) - ref_ssim(a, b)) < 1e-6, "ssim deviates from the oracle");
    }
    // FID on 1-D synthetic sets.
    std::vector<std::vector<double>> a1 = {{-1}, {0}, {1}}, b1 = {{2}, {3}, {4}};
    require(std::abs(fid(a1, b1) - 9.0) < 1e-5, "1-D fid closed form");
    require(std::abs(fid(a1, b1) - ref_fid(a1, b1)) < 1e-5, "1-D fid oracle");
    // FID on 4-D synthetic sets.
    auto sample = [&](double shift, int n) {
        std::vector<std::vector<double>> rows;
        for (int i = 0; i < n; ++i) {
            std::vector<double> r(4);
            for (auto& v : r) v = rng.normal() + shift;
            rows.push_back(r);
        }
        return rows;
    };
    for (int trial = 0; trial < 3; ++trial) {
        auto fa = sample(0.0, 10 + trial);
        auto fb = sample(0.5 * (trial + 1), 12);
        require(std::abs(fid(fa, fb) - ref_fid(fa, fb)) < 1e-5, "4-D fid oracle");
    }
}

void criterion2_gradient_checks() {
    auto id = FeatureExtractor::identity();
    LossWeights w;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        Tensor gt({1, 3, 8, 8}), pred({1, 3, 8, 8}), mask({1, 1, 8, 8});
        for (int64_t i = 0; i < gt.numel(); ++i) gt[i] = rng.uniform(-1, 1);
        for (int64_t i = 0; i < pred.numel(); ++i) pred[i] = rng.uniform(-1, 1);
        for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < 0.6 ? 1.0 : 0.0;

        auto check = [&](const std::function<NodePtr(const NodePtr&)>& build, const char* name) {
            auto x = leaf(pred, true);
            x->ensure_grad();
            x->grad.fill(0.0);
            backward(build(x));
            Tensor analytic = x->grad;
            double h = 1e-5;
            double worst = 0.0;
            for (int64_t i = 0; i < pred.numel(); ++i) {
                Tensor p = pred;
                p[i] += h;
                double fp = build(constant(p))->value[0];
                p[i] -= 2 * h;
                double fm = build(constant(p))->value[0];
                double fd = (fp - fm) / (2 * h);
                double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
                worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
            }
            require(worst < 1e-4, std::string(name) + " gradient mismatch: " +
                                      std::to_string(worst));
        };

        check([&](const NodePtr& p) { return pixel_loss(constant(gt), p, w); }, "pixel_loss");
        check([&](const NodePtr& p) { return latent_loss(constant(gt), p); }, "latent_loss");
        check([&](const NodePtr& p) { return edge_loss(constant(gt), p); }, "edge_loss");
        check([&](const NodePtr& p) { return contextual_loss(constant(gt), p, mask, id); },
              "contextual_loss");
    }
}

void criterion3_rstl_identity() {
    Rng rng(103);
    RstlFusion rstl("rstl", 4, 8, rng);
    rstl.inner().w->value.fill(0.0);
    rstl.inner().b->value.fill(0.0);
    Rng in(104);
    Tensor a({1, 4, 6, 6}), b({1, 4, 6, 6});
    for (int64_t i = 0; i < a.numel(); ++i) a[i] = in.uniform(-1, 1);
    for (int64_t i = 0; i < b.numel(); ++i) b[i] = in.uniform(-1, 1);
    auto out = rstl.forward(constant(a), constant(b));
    auto xi = concat_channels(constant(a), constant(b));
    require(out.pre_projection->value.raw() == xi->value.raw(),
            "pre-projection output differs from the concatenated input");
}

void criterion4_vn1_normalization() {
    Rng rng(105);
    Vn1Fusion vn1("vn1", 4, 8, rng);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor a({1, 4, 6, 6}), b({1, 4, 6, 6});
        for (int64_t i = 0; i < a.numel(); ++i) a[i] = rng.uniform(-2, 2);
        for (int64_t i = 0; i < b.numel(); ++i) b[i] = rng.uniform(-2, 2);
        auto out = vn1.forward(constant(a), constant(b));
        const Tensor& attn = out.pre_projection->value;
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) {
                double s = 0;
                for (int c = 0; c < 8; ++c) s += attn.at(0, c, y, x);
                require(std::abs(s - 1.0) <= 1e-6, "softmax weights do not sum to 1");
            }
    }
}

struct OverfitFixture {
    Dataset ds;
    RunConfig cfg;
};

OverfitFixture overfit_fixture() {
    OverfitFixture fx;
    fx.cfg.seed = 11;
    fx.cfg.resolution = 32;
    fx.cfg.batch_size = 5;
    fx.cfg.pretrain_steps = 500;
    fx.cfg.adversarial_steps = 300;
    fx.cfg.generator = GeneratorConfig::defaults(32, 8, 11);
    fx.cfg.critic.input_resolution = 32;
    fx.cfg.critic.channels = {16, 32, 64};
    fx.cfg.critic.local_patch_resolution = 16;
    fx.cfg.extractor_channels = 8;
    for (int i = 0; i < 10; ++i) {
        Sample s;
        s.id = "tex" + std::to_string(i);
        s.image = textured_image(32, static_cast<uint64_t>(i));
        int side = 12;
        s.mask = box_mask(32, 4 + (i * 2) % 16, 3 + (i * 3) % 17, side);
        fx.ds.samples.push_back(std::move(s));
    }
    return fx;
}

struct TrainScore {
    double hole_mae = 0.0;
    double ssim_score = 0.0;
};

TrainScore score_on_training_set(TrainState& st, const Dataset& ds) {
    TrainScore out;
    for (const auto& s : ds.samples) {
        Image pred = st.gen->infer(s.image, s.mask);
        Image composed = compose(s.image, pred, s.mask);
        out.hole_mae += hole_mae_8bit(s.image, composed, s.mask);
        out.ssim_score += ssim(s.image, composed);
    }
    out.hole_mae /= static_cast<double>(ds.size());
    out.ssim_score /= static_cast<double>(ds.size());
    return out;
}

void criterion5_overfit_smoke() {
    auto fx = overfit_fixture();
    TrainState st = TrainState::init(fx.cfg);
    TrainScore base = score_on_training_set(st, fx.ds);
    std::cerr << "  [c5] step-0 hole MAE " << base.hole_mae << ", SSIM " << base.ssim_score
              << "\n";

    auto t0 = std::chrono::steady_clock::now();
    run_pretrain(st, fx.ds);
    auto t1 = std::chrono::steady_clock::now();
    std::cerr << "  [c5] pretrain 500 steps took "
              << std::chrono::duration_cast<std::chrono::seconds>(t1 - t0).count() << "s\n";
    run_adversarial(st, fx.ds);
    auto t2 = std::chrono::steady_clock::now();
    std::cerr << "  [c5] adversarial 300 steps took "
              << std::chrono::duration_cast<std::chrono::seconds>(t2 - t1).count() << "s\n";

    TrainScore trained = score_on_training_set(st, fx.ds);
    std::cerr << "  [c5] trained hole MAE " << trained.hole_mae << ", SSIM "
              << trained.ssim_score << "\n";
    require(trained.hole_mae <= 0.5 * base.hole_mae,
            "hole MAE dropped only from " + std::to_string(base.hole_mae) + " to " +
                std::to_string(trained.hole_mae));
    require(trained.ssim_score >= 0.80,
            "training-set SSIM " + std::to_string(trained.ssim_score) + " below 0.80");
}

void criterion6_critic_separation() {
    Rng rng(106);
    Critic critic("critic", 16, {8, 16, 32}, rng);
    Adam opt(1e-4, 0.5);
    CriticConfig ccfg;
    ccfg.input_resolution = 16;
    ccfg.clip_c = 0.01;

    // Fixed real set: textures; fixed fake set: uniform noise.
    Tensor real({8, 3, 16, 16}), fake({8, 3, 16, 16});
    for (int n = 0; n < 8; ++n) {
        Image t = textured_image(16, static_cast<uint64_t>(n));
        std::copy_n(t.pixels.data(), t.pixels.numel(), real.data() + n * t.pixels.numel());
        for (int64_t i = 0; i < t.pixels.numel(); ++i)
            fake[n * t.pixels.numel() + i] = rng.uniform(-1, 1);
    }
    double last = 0.0;
    for (int step = 0; step < 200; ++step) {
        auto params = critic.params();
        zero_grad(params);
        NodePtr rs = critic.forward(constant(real));
        NodePtr fs = critic.forward(constant(fake));
        NodePtr loss = smul(wgan_critic_loss(rs, fs), -1.0);
        backward(loss);
        opt.step(params);
        critic.clip_weights(ccfg.clip_c);
        last = -loss->value[0];
    }
    std::cerr << "  [c6] wgan estimate after 200 steps: " << last << "\n";
    auto rscores = critic.scores(real);
    auto fscores = critic.scores(fake);
    require(wgan_critic_loss(rscores, fscores) > 0.0,
            "mean real score does not exceed mean fake score");
}

void criterion7_determinism() {
    // The configs must be identical between the two runs (the checkpoint
    // embeds the config); only the artifact paths differ.
    auto make_cfg = [] {
        RunConfig cfg;
        cfg.seed = 13;
        cfg.resolution = 32;
        cfg.batch_size = 2;
        cfg.pretrain_steps = 6;
        cfg.adversarial_steps = 4;
        cfg.finetune_steps = 2;
        cfg.generator = GeneratorConfig::defaults(32, 4, 13);
        cfg.critic.input_resolution = 32;
        cfg.critic.channels = {8, 16};
        cfg.critic.local_patch_resolution = 16;
        cfg.extractor_channels = 4;
        return cfg;
    };
    Dataset ds;
    for (int i = 0; i < 4; ++i) {
        Sample s;
        s.id = "d" + std::to_string(i);
        s.image = textured_image(32, static_cast<uint64_t>(i));
        s.mask = box_mask(32, 6 + i, 6 + i, 12);
        ds.samples.push_back(std::move(s));
    }

    auto run_all = [&](const std::string& dir) {
        std::filesystem::create_directories(dir);
        TrainState st = TrainState::init(make_cfg());
        LossLogger log(dir + "/losses.csv", st.cfg.seed);
        run_pretrain(st, ds, &log);
        run_adversarial(st, ds, &log);
        run_finetune(st, ds, &log);
        save_checkpoint(st, dir + "/final.ckpt");
    };
    std::string d1 = tmp_root() + "/det1", d2 = tmp_root() + "/det2";
    run_all(d1);
    run_all(d2);
    require(slurp(d1 + "/losses.csv") == slurp(d2 + "/losses.csv"),
            "loss logs differ between identical runs");
    require(slurp(d1 + "/final.ckpt") == slurp(d2 + "/final.ckpt"),
            "checkpoints differ between identical runs");

    // Mid-run save/load: the continuation reproduces the next 5 losses.
    RunConfig cfg = make_cfg();
    cfg.pretrain_steps = 16;
    TrainState full = TrainState::init(cfg);
    TrainState part = TrainState::init(cfg);
    auto step_of = [&](TrainState& st) {
        Batch b = make_batch(ds, batch_indices(st.cfg.seed, st.phase, st.phase_step, ds.size(),
                                               st.cfg.batch_size));
        return pretrain_step(st, b).objective;
    };
    for (int i = 0; i < 3; ++i) {
        step_of(full);
        step_of(part);
    }
    std::string ck = tmp_root() + "/mid.ckpt";
    save_checkpoint(part, ck);
    TrainState resumed = load_checkpoint(ck);
    for (int i = 0; i < 5; ++i) {
        double expect = step_of(full);
        double got = step_of(resumed);
        require(got == expect, "resumed loss " + std::to_string(got) + " != " +
                                   std::to_string(expect) + " at continuation step " +
                                   std::to_string(i));
    }
}

void criterion8_protocol() {
    auto buckets = default_buckets();
    const MaskBucket& b3 = find_bucket(buckets, "MaskDataset3");
    std::vector<std::string> images;
    for (int i = 0; i < 6; ++i) images.push_back("img" + std::to_string(i));
    std::vector<MaskEntry> inventory = {{"m0", 0.12}, {"m1", 0.18}, {"m2", 0.25},
                                        {"m3", 0.29}, {"m4", 0.45}};

    std::string p1 = tmp_root() + "/manifest1.csv", p2 = tmp_root() + "/manifest2.csv";
    write_manifest(build_manifest(images, inventory, b3, 99), p1);
    write_manifest(build_manifest(images, inventory, b3, 99), p2);
    require(slurp(p1) == slurp(p2), "manifests differ for identical seeds");

    auto manifest = load_manifest(p1);
    for (const auto& row : manifest.rows)
        require(row.hole_ratio >= 0.1 && row.hole_ratio < 0.3,
                "row hole_ratio outside [0.1, 0.3)");

    std::string text = slurp(p1);
    auto pos = text.find("0.12");
    if (pos == std::string::npos) pos = text.find("0.18");
    require(pos != std::string::npos, "fixture ratio missing from manifest");
    text.replace(pos, 4, "0.77");
    std::string bad = tmp_root() + "/tampered.csv";
    std::ofstream(bad) << text;
    bool rejected = false;
    try {
        load_manifest(bad);
    } catch (const ValidationError&) {
        rejected = true;
    }
    require(rejected, "tampered manifest passed validation");
}

void criterion9_perfect_model_bound() {
    namespace fs = std::filesystem;
    std::string images = tmp_root() + "/bound_images", masks = tmp_root() + "/bound_masks";
    fs::create_directories(images);
    fs::create_directories(masks);
    Rng rng(108);
    std::vector<std::string> ids;
    for (int i = 0; i < 4; ++i) {
        std::string id = "img" + std::to_string(i);
        ids.push_back(id);
        Image img(32, 32);
        for (int64_t j = 0; j < img.pixels.numel(); ++j) {
            int v = static_cast<int>(rng.below(256));
            img.pixels[j] = v / 255.0 * 2.0 - 1.0;
        }
        save_image(img, images + "/" + id + ".png");
    }
    std::vector<MaskEntry> inventory;
    for (int i = 0; i < 2; ++i) {
        std::string id = "mask" + std::to_string(i);
        BinaryMask m = box_mask(32, 6, 6, 13 + i);
        save_mask(m, masks + "/" + id + ".png");
        inventory.push_back({id, hole_ratio(m)});
    }
    auto buckets = default_buckets();
    auto manifest = build_manifest(ids, inventory, find_bucket(buckets, "MaskDataset3"), 5);

    RunConfig cfg;
    cfg.resolution = 32;
    cfg.generator = GeneratorConfig::defaults(32, 2, 3);
    cfg.critic.input_resolution = 32;
    cfg.critic.channels = {4};
    cfg.critic.local_patch_resolution = 16;
    cfg.extractor_channels = 4;
    TrainState st = TrainState::init(cfg);

    EvaluateOptions opt;
    opt.images_dir = images;
    opt.masks_dir = masks;
    opt.polarity = MaskPolarity::WhiteKnown;
    opt.resolution = 32;
    opt.model = EvalModel::Oracle;
    auto report = evaluate_manifest(manifest, st, opt);
    require(report.overall.count == 4, "not every row evaluated");
    for (const auto& [name, agg] : report.per_bucket) {
        require(agg.mae == 0.0, name + ": oracle MAE not 0");
        require(std::abs(agg.ssim - 1.0) < 1e-12, name + ": oracle SSIM not 1");
        require(agg.psnr == 100.0, name + ": oracle PSNR not capped at 100");
    }
}

void criterion10_ttopt_contract() {
    RunConfig cfg;
    cfg.seed = 19;
    cfg.resolution = 32;
    cfg.batch_size = 2;
    cfg.pretrain_steps = 20;
    cfg.generator = GeneratorConfig::defaults(32, 4, 19);
    cfg.critic.input_resolution = 32;
    cfg.critic.channels = {8};
    cfg.critic.local_patch_resolution = 16;
    cfg.extractor_channels = 4;
    cfg.ttopt_lr = 0.05;
    TrainState st = TrainState::init(cfg);
    Dataset ds;
    for (int i = 0; i < 4; ++i) {
        Sample s;
        s.id = "t" + std::to_string(i);
        s.image = textured_image(32, static_cast<uint64_t>(i));
        s.mask = box_mask(32, 8, 8, 12);
        ds.samples.push_back(std::move(s));
    }
    run_pretrain(st, ds);

    auto hash_params = [&] {
        uint64_t h = 1469598103934665603ULL;
        for (auto& p : st.gen->params())
            h = fnv1a64(p.node->value.data(),
                        static_cast<size_t>(p.node->value.numel()) * sizeof(double), h);
        for (auto& s : st.gen->state_tensors())
            h = fnv1a64(s.tensor->data(), static_cast<size_t>(s.tensor->numel()) * sizeof(double),
                        h);
        return hex64(h);
    };

    for (int fixture = 0; fixture < 3; ++fixture) {
        BinaryMask mask = box_mask(32, 5 + 4 * fixture, 6 + 3 * fixture, 11);
        Image observed = apply_mask(textured_image(32, static_cast<uint64_t>(fixture + 20)), mask);
        std::string before = hash_params();
        Rng rng(300 + static_cast<uint64_t>(fixture));
        TtoptStats stats;
        test_time_optimize(st, observed, mask, 10, rng, &stats);
        require(hash_params() == before, "checkpoint tensors changed during optimization");
        require(stats.final_objective <= stats.initial_objective,
                "final objective exceeds the initial one");
        require(stats.max_abs_perturbation <= 1.0, "perturbation left [-1,1]");
    }
}

}  // namespace

int main() {
    struct Criterion {
        int number;
        const char* name;
        std::function<void()> run;
    };
    std::vector<Criterion> criteria = {
        {1, "metric oracle equivalence (MAE/PSNR/SSIM within 1e-6, FID within 1e-5)",
         criterion1_metric_oracles},
        {2, "loss gradient checks vs central differences (rel err < 1e-4, 5 seeds)",
         criterion2_gradient_checks},
        {3, "RSTL residual identity with zeroed inner weights (exact)", criterion3_rstl_identity},
        {4, "VN1 softmax normalization (sum 1 +/- 1e-6, 10 inputs)",
         criterion4_vn1_normalization},
        {5, "overfit smoke test (hole MAE -50%, SSIM >= 0.80)", criterion5_overfit_smoke},
        {6, "critic separation after 200 critic-only steps", criterion6_critic_separation},
        {7, "bit-identical determinism and mid-run resume", criterion7_determinism},
        {8, "protocol determinism and validity", criterion8_protocol},
        {9, "perfect-model bound per bucket (MAE 0, SSIM 1, PSNR 100)",
         criterion9_perfect_model_bound},
        {10, "test-time optimization contract", criterion10_ttopt_contract},
    };

    int failures = 0;
    for (auto& c : criteria) {
        auto start = std::chrono::steady_clock::now();
        try {
            c.run();
            auto secs = std::chrono::duration_cast<std::chrono::seconds>(
                            std::chrono::steady_clock::now() - start)
                            .count();
            std::printf("[PASS] criterion %d: %s (%llds)\n", c.number, c.name,
                        static_cast<long long>(secs));
        } catch (const std::exception& e) {
            ++failures;
            std::printf("[FAIL] criterion %d: %s: %s\n", c.number, c.name, e.what());
        }
        std::fflush(stdout);
    }
    std::error_code ec;
    std::filesystem::remove_all(tmp_root(), ec);
    return failures;
}
