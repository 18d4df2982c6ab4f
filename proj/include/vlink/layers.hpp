#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vlink/autodiff.hpp"
#include "vlink/rng.hpp"

namespace vlink {

// Named handle to a trainable tensor; the registry order is the construction
// order, which optimizers and checkpoints rely on being stable.
struct NamedParam {
    std::string name;
    NodePtr node;
};

// Named handle to non-trainable module state (batchnorm running stats).
struct NamedState {
    std::string name;
    Tensor* tensor;
};

inline void zero_grad(const std::vector<NamedParam>& params) {
    for (const auto& p : params) {
        p.node->ensure_grad();
        p.node->grad.fill(0.0);
    }
}

// Fan-in-scaled uniform weight init; biases start at zero.
inline Tensor init_weight(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor w(std::move(shape));
    double s = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-s, s);
    return w;
}

struct ConvLayer {
    NodePtr w;
    NodePtr b;
    int stride = 1;
    int dilation = 1;

    ConvLayer() = default;
    ConvLayer(int cin, int cout, int k, int stride_, int dilation_, Rng& rng)
        : w(leaf(init_weight({cout, cin, k, k}, cin * k * k, rng))),
          b(leaf(Tensor({cout}))),
          stride(stride_),
          dilation(dilation_) {}

    NodePtr forward(const NodePtr& x) const { return conv2d(x, w, b, stride, dilation); }

    void collect(const std::string& prefix, std::vector<NamedParam>& out) {
        out.push_back({prefix + ".w", w});
        out.push_back({prefix + ".b", b});
    }
};

struct BnLayer {
    NodePtr gamma;
    NodePtr beta;
    BnRunning running;

    BnLayer() = default;
    explicit BnLayer(int c)
        : gamma(leaf(Tensor::full({c}, 1.0))), beta(leaf(Tensor({c}))) {
        running.mean = Tensor({c});
        running.var = Tensor::full({c}, 1.0);
    }

    NodePtr forward(const NodePtr& x, bool training) {
        return batchnorm(x, gamma, beta, running, training);
    }

    void collect(const std::string& prefix, std::vector<NamedParam>& params,
                 std::vector<NamedState>& state) {
        params.push_back({prefix + ".gamma", gamma});
        params.push_back({prefix + ".beta", beta});
        state.push_back({prefix + ".running_mean", &running.mean});
        state.push_back({prefix + ".running_var", &running.var});
    }
};

struct LinearLayer {
    NodePtr w;
    NodePtr b;

    LinearLayer() = default;
    LinearLayer(int fin, int fout, Rng& rng)
        : w(leaf(init_weight({fin, fout}, fin, rng))), b(leaf(Tensor({fout}))) {}

    NodePtr forward(const NodePtr& x) const { return linear(x, w, b); }

    void collect(const std::string& prefix, std::vector<NamedParam>& out) {
        out.push_back({prefix + ".w", w});
        out.push_back({prefix + ".b", b});
    }
};

}  // namespace vlink
