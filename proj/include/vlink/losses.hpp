#pragma once

#include "vlink/autodiff.hpp"
#include "vlink/extractor.hpp"
#include "vlink/gradops.hpp"

namespace vlink {

// Fixed loss coefficients. All norms reduce by mean over elements so the
// magnitudes carry across resolutions.
struct LossWeights {
    double lambda_edge = 0.5;    // blends latent vs image-edge terms
    double alpha_vgg = 0.5;      // perceptual term weight
    double alpha_rm = 0.3;       // reverse-mask term weight
    double alpha_pix = 0.1;      // pixel term weight
    double tt_contextual = 0.4;  // test-time contextual coefficient
    double tt_perceptual = 0.6;  // test-time perceptual coefficient
    double k_pix = 1.0;          // pixel loss scale constant
    double feature_edge = 0.0;   // optional pretraining term, off by default

    void validate() const {
        if (lambda_edge < 0 || alpha_vgg < 0 || alpha_rm < 0 || alpha_pix < 0 ||
            tt_contextual < 0 || tt_perceptual < 0 || k_pix < 0 || feature_edge < 0)
            throw ConfigError("loss weights must be non-negative");
    }
};

inline NodePtr mse(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a->value, b->value, "mse");
    return mean_all(square(sub(a, b)));
}

inline NodePtr mean_abs(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a->value, b->value, "mean_abs");
    return mean_all(abs_node(sub(a, b)));
}

// Mean squared difference between the deep taps of the two encoder branches.
inline NodePtr latent_loss(const NodePtr& feat_a, const NodePtr& feat_b) {
    return mse(feat_a, feat_b);
}

// MSE between Sobel gradient magnitudes of ground truth and prediction.
inline NodePtr edge_loss(const NodePtr& gt, const NodePtr& pred) {
    return mse(grad_magnitude(sobel_xy(gt)), grad_magnitude(sobel_xy(pred)));
}

// Gradient-magnitude MSE on the block-3 encoder taps. The symmetric form
// compares gradients of both taps; the literal form puts the gradient only on
// the branch-A tap.
inline NodePtr feature_edge_loss(const NodePtr& tap3_a, const NodePtr& tap3_b,
                                 bool symmetric = true) {
    auto ga = grad_magnitude(sobel_xy(tap3_a));
    if (symmetric) return mse(ga, grad_magnitude(sobel_xy(tap3_b)));
    return mse(ga, tap3_b);
}

// λ·L_φ + (1-λ)·L_edge.
inline NodePtr edge_combined(const NodePtr& l_phi, const NodePtr& l_edge, const LossWeights& w) {
    return add(smul(l_phi, w.lambda_edge), smul(l_edge, 1.0 - w.lambda_edge));
}

// K-scaled mean absolute pixel difference.
inline NodePtr pixel_loss(const NodePtr& gt, const NodePtr& pred, const LossWeights& w) {
    return smul(mean_abs(gt, pred), w.k_pix);
}

// Sum over extractor layers of feature MSE.
inline NodePtr perceptual_loss(const NodePtr& gt, const NodePtr& pred,
                               const FeatureExtractor& phi) {
    auto fg = phi.features(gt);
    auto fp = phi.features(pred);
    NodePtr total;
    for (size_t i = 0; i < fg.size(); ++i) {
        auto term = mse(fg[i], fp[i]);
        total = total ? add(total, term) : term;
    }
    return total;
}

// Sum over layers of mean absolute feature difference between the
// reverse-masked ground truth and the composed image.
inline NodePtr reverse_mask_loss(const NodePtr& gt, const NodePtr& composed, const Tensor& mask,
                                 const FeatureExtractor& phi) {
    Tensor rmask(mask.shape());
    for (int64_t i = 0; i < mask.numel(); ++i) rmask[i] = 1.0 - mask[i];
    auto fg = phi.features(mask_mul(gt, rmask));
    auto fc = phi.features(composed);
    NodePtr total;
    for (size_t i = 0; i < fg.size(); ++i) {
        auto term = mean_abs(fg[i], fc[i]);
        total = total ? add(total, term) : term;
    }
    return total;
}

// Sum over layers of feature MSE between the reverse-masked ground truth and
// the masked prediction.
inline NodePtr contextual_loss(const NodePtr& gt, const NodePtr& pred, const Tensor& mask,
                               const FeatureExtractor& phi) {
    Tensor rmask(mask.shape());
    for (int64_t i = 0; i < mask.numel(); ++i) rmask[i] = 1.0 - mask[i];
    auto fg = phi.features(mask_mul(gt, rmask));
    auto fp = phi.features(mask_mul(pred, mask));
    NodePtr total;
    for (size_t i = 0; i < fg.size(); ++i) {
        auto term = mse(fg[i], fp[i]);
        total = total ? add(total, term) : term;
    }
    return total;
}

// α₁·L_vgg + α₂·L_rm + α₃·L_pix.
inline NodePtr total_loss(const NodePtr& l_vgg, const NodePtr& l_rm, const NodePtr& l_pix,
                          const LossWeights& w) {
    return add(add(smul(l_vgg, w.alpha_vgg), smul(l_rm, w.alpha_rm)), smul(l_pix, w.alpha_pix));
}

// L_F = L_T + L_adv.
inline NodePtr final_loss(const NodePtr& l_t, const NodePtr& l_adv) { return add(l_t, l_adv); }

}  // namespace vlink
