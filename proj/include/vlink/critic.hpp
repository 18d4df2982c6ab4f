#pragma once

#include <string>
#include <vector>

#include "vlink/image.hpp"
#include "vlink/layers.hpp"

namespace vlink {

struct NoHoleError : std::runtime_error {
    explicit NoHoleError(const std::string& msg) : std::runtime_error("no-hole error: " + msg) {}
};

enum class LipschitzMode { WeightClip, GradientPenalty };

struct CriticConfig {
    int input_resolution = 64;
    std::vector<int> channels = {16, 32, 64, 64, 64};  // one strided block each
    LipschitzMode mode = LipschitzMode::WeightClip;
    double clip_c = 0.01;
    double gp_gamma = 10.0;
    int local_patch_resolution = 32;  // defaults to half the working resolution

    void validate() const {
        if (input_resolution <= 0) throw ConfigError("critic resolution must be positive");
        if (channels.empty()) throw ConfigError("critic needs at least one block");
        if (clip_c <= 0) throw ConfigError("weight clip bound must be positive");
        if (gp_gamma < 0) throw ConfigError("gradient penalty coefficient must be >= 0");
        if (local_patch_resolution <= 0) throw ConfigError("local patch resolution must be positive");
    }
};

// Wasserstein critic: strided conv blocks with LeakyReLU(0.2), no batchnorm,
// global average pooling and a linear head. Scores are unbounded reals.
class Critic {
public:
    Critic() = default;
    Critic(std::string name, int input_resolution, const std::vector<int>& channels, Rng& rng)
        : name_(std::move(name)), input_resolution_(input_resolution) {
        int cin = 3;
        for (int cout : channels) {
            blocks_.push_back(ConvLayer(cin, cout, 3, 2, 1, rng));
            cin = cout;
        }
        head_ = LinearLayer(cin, 1, rng);
    }

    // batch: (N,3,res,res) -> scores (N,1).
    NodePtr forward(const NodePtr& batch) const {
        if (batch->value.ndim() != 4 || batch->value.dim(2) != input_resolution_ ||
            batch->value.dim(3) != input_resolution_)
            throw DimensionError(name_ + " expects resolution " +
                                 std::to_string(input_resolution_) + ", got " +
                                 batch->value.shape_str());
        NodePtr h = batch;
        for (const auto& b : blocks_) h = leaky_relu(b.forward(h), 0.2);
        return head_.forward(global_avg_pool(h));
    }

    std::vector<double> scores(const Tensor& batch) const {
        auto s = forward(constant(batch));
        return s->value.raw();
    }

    void collect(std::vector<NamedParam>& params) {
        for (size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect(name_ + ".block" + std::to_string(i + 1), params);
        head_.collect(name_ + ".head", params);
    }

    std::vector<NamedParam> params() {
        std::vector<NamedParam> out;
        collect(out);
        return out;
    }

    // Weight-clipping Lipschitz control: clamp every parameter to [-c, c].
    void clip_weights(double c) {
        auto ps = params();
        for (auto& p : ps)
            for (int64_t i = 0; i < p.node->value.numel(); ++i)
                p.node->value[i] = std::clamp(p.node->value[i], -c, c);
    }

    void set_requires_grad(bool rg) {
        auto ps = params();
        for (auto& p : ps) p.node->requires_grad = rg;
    }

    int input_resolution() const { return input_resolution_; }

private:
    std::string name_;
    int input_resolution_ = 0;
    std::vector<ConvLayer> blocks_;
    LinearLayer head_;
};

// mean(real) - mean(fake); the critic maximizes this, so training minimizes
// its negation. The generator adversarial term is -mean(fake).
inline NodePtr wgan_critic_loss(const NodePtr& real_scores, const NodePtr& fake_scores) {
    if (real_scores->value.numel() == 0 || fake_scores->value.numel() == 0)
        throw ArgumentError("wgan_critic_loss: empty score vector");
    return sub(mean_all(real_scores), mean_all(fake_scores));
}

inline double wgan_critic_loss(const std::vector<double>& real, const std::vector<double>& fake) {
    if (real.empty() || fake.empty()) throw ArgumentError("wgan_critic_loss: empty score vector");
    double mr = 0, mf = 0;
    for (double v : real) mr += v;
    for (double v : fake) mf += v;
    return mr / static_cast<double>(real.size()) - mf / static_cast<double>(fake.size());
}

// L_adv = L_Dg + L_Dl.
inline double adv_loss(double global_term, double local_term) { return global_term + local_term; }
inline NodePtr adv_loss(const NodePtr& global_term, const NodePtr& local_term) {
    return add(global_term, local_term);
}

// ---------------------------------------------------------------------------
// Local patch extraction
// ---------------------------------------------------------------------------

struct PatchBox {
    int r0 = 0;
    int c0 = 0;
    int side = 0;
};

// Tight bounding box of the hole pixels, expanded to a square and clamped to
// the image bounds.
inline PatchBox hole_patch_box(const BinaryMask& mask) {
    int rmin = mask.height, rmax = -1, cmin = mask.width, cmax = -1;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(y, x) == 0.0) {
                rmin = std::min(rmin, y);
                rmax = std::max(rmax, y);
                cmin = std::min(cmin, x);
                cmax = std::max(cmax, x);
            }
    if (rmax < 0) throw NoHoleError("mask contains no hole pixels");
    int h = rmax - rmin + 1, w = cmax - cmin + 1;
    int side = std::min(std::max(h, w), std::min(mask.height, mask.width));
    int r0 = std::clamp(rmin - (side - h) / 2, 0, mask.height - side);
    int c0 = std::clamp(cmin - (side - w) / 2, 0, mask.width - side);
    return {r0, c0, side};
}

inline Image extract_local_patch(const Image& img, const BinaryMask& mask,
                                 int patch_resolution) {
    check_pair(img, mask, "extract_local_patch");
    PatchBox box = hole_patch_box(mask);
    Image crop(box.side, box.side);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < box.side; ++y)
            for (int x = 0; x < box.side; ++x)
                crop.at(c, y, x) = img.at(c, box.r0 + y, box.c0 + x);
    return resize_image(crop, patch_resolution, patch_resolution);
}

// Differentiable batched version; each sample is cropped at its own hole box
// and resized to the patch resolution.
inline NodePtr extract_local_patch_node(const NodePtr& batch, const Tensor& mask_batch,
                                        int patch_resolution) {
    int N = batch->value.dim(0);
    int H = batch->value.dim(2), W = batch->value.dim(3);
    std::vector<NodePtr> patches;
    for (int n = 0; n < N; ++n) {
        BinaryMask m(H, W);
        std::copy_n(mask_batch.data() + static_cast<int64_t>(n) * H * W,
                    static_cast<int64_t>(H) * W, m.values.data());
        PatchBox box = hole_patch_box(m);
        patches.push_back(bilinear_resize(crop_sample(batch, n, box.r0, box.c0, box.side, box.side),
                                          patch_resolution, patch_resolution));
    }
    return concat_batch(patches);
}

// ---------------------------------------------------------------------------
// Gradient penalty (alternative Lipschitz control)
// ---------------------------------------------------------------------------

// γ · mean_n (‖∇x D(x̂_n)‖₂ − 1)² on per-sample interpolates between real and
// fake batches. Returns the penalty value and the per-sample input gradients.
struct GradientPenalty {
    double value = 0.0;
    Tensor interpolates;     // (N,3,h,w)
    Tensor input_grads;      // same shape
    std::vector<double> norms;
};

inline GradientPenalty gradient_penalty(Critic& critic, const Tensor& real_batch,
                                        const Tensor& fake_batch, double gamma, Rng& rng) {
    check_same_shape(real_batch, fake_batch, "gradient_penalty");
    int N = real_batch.dim(0);
    int64_t item = real_batch.numel() / N;
    Tensor interp(real_batch.shape());
    for (int n = 0; n < N; ++n) {
        double eps = rng.uniform();
        for (int64_t i = 0; i < item; ++i) {
            int64_t idx = n * item + i;
            interp[idx] = eps * real_batch[idx] + (1.0 - eps) * fake_batch[idx];
        }
    }
    // Input gradients only: freeze the critic parameters for this pass.
    critic.set_requires_grad(false);
    NodePtr x = leaf(interp, true);
    x->ensure_grad();
    x->grad.fill(0.0);
    backward(sum_all(critic.forward(x)));
    critic.set_requires_grad(true);

    GradientPenalty out;
    out.interpolates = interp;
    out.input_grads = x->grad;
    out.norms.resize(static_cast<size_t>(N));
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
        double sq = 0.0;
        for (int64_t i = 0; i < item; ++i) {
            double g = x->grad[n * item + i];
            sq += g * g;
        }
        double norm = std::sqrt(sq);
        out.norms[static_cast<size_t>(n)] = norm;
        acc += (norm - 1.0) * (norm - 1.0);
    }
    out.value = gamma * acc / static_cast<double>(N);
    return out;
}

// Closed-form penalty for a known gradient norm; the zero point sits at 1.
inline double gradient_penalty_value(double grad_norm, double gamma) {
    return gamma * (grad_norm - 1.0) * (grad_norm - 1.0);
}

// Accumulates d(penalty)/dθ into the critic parameter grads. The penalty
// depends on ∇x D, so its exact parameter gradient is a second-order
// quantity; it is approximated here by a central difference of the weighted
// score gradient along the input-gradient direction.
inline void accumulate_gp_param_grads(Critic& critic, const GradientPenalty& gp, double gamma,
                                      double fd_eps = 1e-4) {
    int N = gp.interpolates.dim(0);
    // Per-sample weight c_n = 2γ(‖g_n‖-1)/(N·‖g_n‖); the θ-gradient is then
    // d/dθ Σ_n c_n · (g_nᵀ ∇x D(x̂_n)), evaluated by finite differences.
    std::vector<double> weight(static_cast<size_t>(N));
    for (int n = 0; n < N; ++n) {
        double norm = gp.norms[static_cast<size_t>(n)];
        weight[static_cast<size_t>(n)] =
            norm > 1e-12 ? 2.0 * gamma * (norm - 1.0) / (norm * N) : 0.0;
    }
    for (int sign : {+1, -1}) {
        Tensor shifted(gp.interpolates.shape());
        for (int64_t i = 0; i < shifted.numel(); ++i)
            shifted[i] = gp.interpolates[i] + sign * fd_eps * gp.input_grads[i];
        NodePtr x = constant(shifted);
        NodePtr scores = critic.forward(x);
        // Weighted sum of scores, scaled by the central-difference factor.
        Tensor w({N, 1});
        for (int n = 0; n < N; ++n) w.at(n, 0) = weight[static_cast<size_t>(n)] * sign / (2.0 * fd_eps);
        backward(sum_all(mul(scores, constant(w))));
    }
}

}  // namespace vlink
