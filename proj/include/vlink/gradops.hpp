#pragma once

#include <array>

#include "vlink/autodiff.hpp"
#include "vlink/tensor.hpp"

namespace vlink {

// Standard Sobel kernels. The x kernel responds to horizontal intensity
// change (rows [-1,0,1],[-2,0,2],[-1,0,1]); y is its transpose.
inline constexpr std::array<double, 9> kSobelX = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
inline constexpr std::array<double, 9> kSobelY = {-1, -2, -1, 0, 0, 0, 1, 2, 1};

// Epsilon inside the magnitude square root; sqrt is not differentiable at 0.
inline constexpr double kGradMagEps = 1e-12;

struct GradientPair {
    NodePtr gx;
    NodePtr gy;
};

// Per-channel Sobel gradients with edge-replication padding; differentiable.
inline GradientPair sobel_xy(const NodePtr& t) {
    return {depthwise3x3_replicate(t, kSobelX), depthwise3x3_replicate(t, kSobelY)};
}

// sqrt(gx^2 + gy^2), element-wise.
inline NodePtr grad_magnitude(const GradientPair& g) {
    check_same_shape(g.gx->value, g.gy->value, "grad_magnitude");
    return sqrt_eps(add(square(g.gx), square(g.gy)), kGradMagEps);
}

// Value-only conveniences for plain tensors (any NCHW-shaped input).
struct GradientPairT {
    Tensor gx;
    Tensor gy;
};

inline GradientPairT sobel_xy(const Tensor& t) {
    auto g = sobel_xy(constant(t));
    return {g.gx->value, g.gy->value};
}

inline Tensor grad_magnitude(const GradientPairT& g) {
    return grad_magnitude(GradientPair{constant(g.gx), constant(g.gy)})->value;
}

}  // namespace vlink
