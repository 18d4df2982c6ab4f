#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "vlink/errors.hpp"
#include "vlink/rng.hpp"
#include "vlink/tensor.hpp"

namespace vlink {

// Reverse-mode tape over eagerly evaluated Tensor nodes. Each op computes its
// value at construction and records a closure that scatters the output grad
// into the parents' grads. Graphs are rebuilt every step; leaves (parameters,
// inputs) persist across graphs and accumulate grads until zero_grad().
struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void()> backprop;

    bool is_leaf() const { return parents.empty(); }

    void ensure_grad() {
        if (!grad.same_shape(value)) grad = Tensor(value.shape());
    }
};

inline NodePtr leaf(Tensor v, bool requires_grad = true) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

inline NodePtr constant(Tensor v) { return leaf(std::move(v), false); }

inline bool any_requires_grad(const std::vector<NodePtr>& ps) {
    for (const auto& p : ps)
        if (p->requires_grad) return true;
    return false;
}

inline NodePtr make_op(Tensor value, std::vector<NodePtr> parents) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->requires_grad = any_requires_grad(n->parents);
    return n;
}

inline void zero_grad(const std::vector<NodePtr>& params) {
    for (const auto& p : params) {
        p->ensure_grad();
        p->grad.fill(0.0);
    }
}

// Backpropagate from `root`. Interior node grads are materialized fresh;
// leaf grads accumulate (callers zero them between steps).
inline void backward(const NodePtr& root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        if (!n->requires_grad) continue;
        if (n->is_leaf()) {
            n->ensure_grad();
        } else {
            n->grad = Tensor(n->value.shape());
        }
    }
    root->grad.fill(1.0);
    // `order` is post-order (parents before children), so walk it backwards.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->requires_grad && n->backprop) n->backprop();
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline NodePtr add(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a->value, b->value, "add");
    Tensor v(a->value.shape());
    for (int64_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] + b->value[i];
    auto out = make_op(std::move(v), {a, b});
    if (out->requires_grad) {
        Node *o = out.get(), *pa = a.get(), *pb = b.get();
        out->backprop = [o, pa, pb] {
            if (pa->requires_grad)
                for (int64_t i = 0; i < o->grad.numel(); ++i) pa->grad[i] += o->grad[i];
            if (pb->requires_grad)
                for (int64_t i = 0; i < o->grad.numel(); ++i) pb->grad[i] += o->grad[i];
        };
    }
    return out;
}

inline NodePtr sub(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a->value, b->value, "sub");
    Tensor v(a->value.shape());
    for (int64_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] - b->value[i];
    auto out = make_op(std::move(v), {a, b});
    if (out->requires_grad) {
        Node *o = out.get(), *pa = a.get(), *pb = b.get();
        out->backprop = [o, pa, pb] {
            if (pa->requires_grad)
                for (int64_t i = 0; i < o->grad.numel(); ++i) pa->grad[i] += o->grad[i];
            if (pb->requires_grad)
                for (int64_t i = 0; i < o->grad.numel(); ++i) pb->grad[i] -= o->grad[i];
        };
    }
    return out;
}

inline NodePtr mul(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a->value, b->value, "mul");
    Tensor v(a->value.shape());
    for (int64_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] * b->value[i];
    auto out = make_op(std::move(v), {a, b});
    if (out->requires_grad) {
        Node *o = out.get(), *pa = a.get(), *pb = b.get();
        out->backprop = [o, pa, pb] {
            if (pa->requires_grad)
                for (int64_t i = 0; i < o->grad.numel(); ++i) pa->grad[i] += o->grad[i] * pb->value[i];
            if (pb->requires_grad)
                for (int64_t i = 0; i < o->grad.numel(); ++i) pb->grad[i] += o->grad[i] * pa->value[i];
        };
    }
    return out;
}

inline NodePtr smul(const NodePtr& a, double c) {
    Tensor v(a->value.shape());
    for (int64_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] * c;
    auto out = make_op(std::move(v), {a});
    if (out->requires_grad) {
        Node *o = out.get(), *pa = a.get();
        out->backprop = [o, pa, c] {
            for (int64_t i = 0; i < o->grad.numel(); ++i) pa->grad[i] += o->grad[i] * c;
        };
    }
    return out;
}

inline NodePtr square(const NodePtr& a) { return mul(a, a); }

inline NodePtr abs_node(const NodePtr& a) {
    Tensor v(a->value.shape());
    for (int64_t i = 0; i < v.numel(); ++i) v[i] = std::abs(a->value[i]);
    auto out = make_op(std::move(v), {a});
    if (out->requires_grad) {
        Node *o = out.get(), *pa = a.get();
        out->backprop = [o, pa] {
            for (int64_t i = 0; i < o->grad.numel(); ++i) {
                double x = pa->value[i];
                // Subgradient 0 at the kink.
                pa->grad[i] += o->grad[i] * (x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0));
            }
        };
    }
    return out;
}

inline NodePtr sqrt_eps(const NodePtr& a, double eps) {
    Tensor v(a->value.shape());
    for (int64_t i = 0; i < v.numel(); ++i) v[i] = std::sqrt(a->value[i] + eps);
    auto out = make_op(std::move(v), {a});
    if (out->requires_grad) {
        Node *o = out.get(), *pa = a.get();
        out->backprop = [o, pa] {
            for (int64_t i = 0; i < o->grad.numel(); ++i)
                pa->grad[i] += o->grad[i] * 0.5 / o->value[i];
        };
    }
    return out;
}

// Multiply a (N,C,H,W) tensor by a (N,1,H,W) mask, broadcast over channels.
// The mask is plain data, never differentiated.
inline NodePtr mask_mul(const NodePtr& x, const Tensor& m) {
    const auto& xs = x->value.shape();
    if (x->value.ndim() != 4 || m.ndim() != 4 || m.dim(1) != 1 || m.dim(0) != xs[0] ||
        m.dim(2) != xs[2] || m.dim(3) != xs[3])
        throw DimensionError("mask_mul: mask " + m.shape_str() + " vs input " + x->value.shape_str());
    int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
    int64_t plane = static_cast<int64_t>(H) * W;
    Tensor v(xs);
    for (int n = 0; n < N; ++n) {
        const double* mp = m.data() + n * plane;
        for (int c = 0; c < C; ++c) {
            const double* xp = x->value.data() + (static_cast<int64_t>(n) * C + c) * plane;
            double* vp = v.data() + (static_cast<int64_t>(n) * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) vp[i] = xp[i] * mp[i];
        }
    }
    auto out = make_op(std::move(v), {x});
    if (out->requires_grad) {
        Node *o = out.get(), *px = x.get();
        Tensor mask = m;
        out->backprop = [o, px, mask, N, C, plane] {
            for (int n = 0; n < N; ++n) {
                const double* mp = mask.data() + n * plane;
                for (int c = 0; c < C; ++c) {
                    int64_t base = (static_cast<int64_t>(n) * C + c) * plane;
                    for (int64_t i = 0; i < plane; ++i) px->grad[base + i] += o->grad[base + i] * mp[i];
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline NodePtr mean_all(const NodePtr& a) {
    if (a->value.numel() == 0) throw DimensionError("mean_all on empty tensor");
    double s = 0.0;
    for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
    double inv = 1.0 / static_cast<double>(a->value.numel());
    auto out = make_op(Tensor::scalar(s * inv), {a});
    if (out->requires_grad) {
        Node *o = out.get(), *pa = a.get();
        out->backprop = [o, pa, inv] {
            double g = o->grad[0] * inv;
            for (int64_t i = 0; i < pa->grad.numel(); ++i) pa->grad[i] += g;
        };
    }
    return out;
}

inline NodePtr sum_all(const NodePtr& a) {
    double s = 0.0;
    for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
    auto out = make_op(Tensor::scalar(s), {a});
    if (out->requires_grad) {
        Node *o = out.get(), *pa = a.get();
        out->backprop = [o, pa] {
            double g = o->grad[0];
            for (int64_t i = 0; i < pa->grad.numel(); ++i) pa->grad[i] += g;
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

inline NodePtr elu(const NodePtr& a) {
    Tensor v(a->value.shape());
    for (int64_t i = 0; i < v.numel(); ++i) {
        double x = a->value[i];
        v[i] = x > 0 ? x : std::expm1(x);
    }
    auto out = make_op(std::move(v), {a});
    if (out->requires_grad) {
        Node *o = out.get(), *pa = a.get();
        out->backprop = [o, pa] {
            for (int64_t i = 0; i < o->grad.numel(); ++i) {
                double x = pa->value[i];
                pa->grad[i] += o->grad[i] * (x > 0 ? 1.0 : o->value[i] + 1.0);
            }
        };
    }
    return out;
}

inline NodePtr leaky_relu(const NodePtr& a, double slope) {
    Tensor v(a->value.shape());
    for (int64_t i = 0; i < v.numel(); ++i) {
        double x = a->value[i];
        v[i] = x > 0 ? x : slope * x;
    }
    auto out = make_op(std::move(v), {a});
    if (out->requires_grad) {
        Node *o = out.get(), *pa = a.get();
        out->backprop = [o, pa, slope] {
            for (int64_t i = 0; i < o->grad.numel(); ++i)
                pa->grad[i] += o->grad[i] * (pa->value[i] > 0 ? 1.0 : slope);
        };
    }
    return out;
}

inline NodePtr tanh_act(const NodePtr& a) {
    Tensor v(a->value.shape());
    for (int64_t i = 0; i < v.numel(); ++i) v[i] = std::tanh(a->value[i]);
    auto out = make_op(std::move(v), {a});
    if (out->requires_grad) {
        Node *o = out.get(), *pa = a.get();
        out->backprop = [o, pa] {
            for (int64_t i = 0; i < o->grad.numel(); ++i)
                pa->grad[i] += o->grad[i] * (1.0 - o->value[i] * o->value[i]);
        };
    }
    return out;
}

// Inverted dropout; identity when not training or rate == 0.
inline NodePtr dropout(const NodePtr& a, double rate, bool training, Rng& rng) {
    if (!training || rate <= 0.0) return a;
    double keep = 1.0 - rate;
    Tensor mask(a->value.shape());
    for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
    Tensor v(a->value.shape());
    for (int64_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] * mask[i];
    auto out = make_op(std::move(v), {a});
    if (out->requires_grad) {
        Node *o = out.get(), *pa = a.get();
        Tensor m = std::move(mask);
        out->backprop = [o, pa, m] {
            for (int64_t i = 0; i < o->grad.numel(); ++i) pa->grad[i] += o->grad[i] * m[i];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline NodePtr reshape_node(const NodePtr& a, std::vector<int> shape) {
    auto out = make_op(a->value.reshaped(std::move(shape)), {a});
    if (out->requires_grad) {
        Node *o = out.get(), *pa = a.get();
        out->backprop = [o, pa] {
            for (int64_t i = 0; i < o->grad.numel(); ++i) pa->grad[i] += o->grad[i];
        };
    }
    return out;
}

inline NodePtr concat_channels(const NodePtr& a, const NodePtr& b) {
    const auto& as = a->value.shape();
    const auto& bs = b->value.shape();
    if (a->value.ndim() != 4 || b->value.ndim() != 4 || as[0] != bs[0] || as[2] != bs[2] ||
        as[3] != bs[3])
        throw DimensionError("concat_channels: " + a->value.shape_str() + " vs " + b->value.shape_str());
    int N = as[0], Ca = as[1], Cb = bs[1], H = as[2], W = as[3];
    int64_t plane = static_cast<int64_t>(H) * W;
    Tensor v({N, Ca + Cb, H, W});
    for (int n = 0; n < N; ++n) {
        std::copy_n(a->value.data() + n * Ca * plane, Ca * plane,
                    v.data() + static_cast<int64_t>(n) * (Ca + Cb) * plane);
        std::copy_n(b->value.data() + n * Cb * plane, Cb * plane,
                    v.data() + static_cast<int64_t>(n) * (Ca + Cb) * plane + Ca * plane);
    }
    auto out = make_op(std::move(v), {a, b});
    if (out->requires_grad) {
        Node *o = out.get(), *pa = a.get(), *pb = b.get();
        out->backprop = [o, pa, pb, N, Ca, Cb, plane] {
            for (int n = 0; n < N; ++n) {
                const double* g = o->grad.data() + static_cast<int64_t>(n) * (Ca + Cb) * plane;
                if (pa->requires_grad) {
                    double* ga = pa->grad.data() + static_cast<int64_t>(n) * Ca * plane;
                    for (int64_t i = 0; i < Ca * plane; ++i) ga[i] += g[i];
                }
                if (pb->requires_grad) {
                    double* gb = pb->grad.data() + static_cast<int64_t>(n) * Cb * plane;
                    for (int64_t i = 0; i < Cb * plane; ++i) gb[i] += g[Ca * plane + i];
                }
            }
        };
    }
    return out;
}

// Stack same-shaped (1,C,H,W) items along the batch axis.
inline NodePtr concat_batch(const std::vector<NodePtr>& items) {
    if (items.empty()) throw ArgumentError("concat_batch: empty list");
    const auto& s0 = items[0]->value.shape();
    int64_t item_n = items[0]->value.numel();
    Tensor v({static_cast<int>(items.size()), s0[1], s0[2], s0[3]});
    for (size_t i = 0; i < items.size(); ++i) {
        check_same_shape(items[i]->value, items[0]->value, "concat_batch");
        std::copy_n(items[i]->value.data(), item_n, v.data() + static_cast<int64_t>(i) * item_n);
    }
    auto out = make_op(std::move(v), items);
    if (out->requires_grad) {
        Node* o = out.get();
        std::vector<Node*> ps;
        for (const auto& it : items) ps.push_back(it.get());
        out->backprop = [o, ps, item_n] {
            for (size_t i = 0; i < ps.size(); ++i) {
                if (!ps[i]->requires_grad) continue;
                const double* g = o->grad.data() + static_cast<int64_t>(i) * item_n;
                for (int64_t j = 0; j < item_n; ++j) ps[i]->grad[j] += g[j];
            }
        };
    }
    return out;
}

inline NodePtr crop_spatial(const NodePtr& x, int r0, int c0, int h, int w) {
    const auto& s = x->value.shape();
    if (x->value.ndim() != 4) throw DimensionError("crop_spatial expects NCHW");
    int N = s[0], C = s[1], H = s[2], W = s[3];
    if (r0 < 0 || c0 < 0 || r0 + h > H || c0 + w > W)
        throw DimensionError("crop_spatial window out of bounds");
    Tensor v({N, C, h, w});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < h; ++y) {
                const double* src =
                    x->value.data() + ((static_cast<int64_t>(n) * C + c) * H + (r0 + y)) * W + c0;
                std::copy_n(src, w, v.data() + ((static_cast<int64_t>(n) * C + c) * h + y) * w);
            }
    auto out = make_op(std::move(v), {x});
    if (out->requires_grad) {
        Node *o = out.get(), *px = x.get();
        out->backprop = [o, px, N, C, H, W, r0, c0, h, w] {
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int y = 0; y < h; ++y) {
                        double* dst =
                            px->grad.data() + ((static_cast<int64_t>(n) * C + c) * H + (r0 + y)) * W + c0;
                        const double* g =
                            o->grad.data() + ((static_cast<int64_t>(n) * C + c) * h + y) * w;
                        for (int xw = 0; xw < w; ++xw) dst[xw] += g[xw];
                    }
        };
    }
    return out;
}

// Select one batch sample and crop it spatially -> (1,C,h,w).
inline NodePtr crop_sample(const NodePtr& x, int n, int r0, int c0, int h, int w) {
    const auto& s = x->value.shape();
    if (x->value.ndim() != 4) throw DimensionError("crop_sample expects NCHW");
    int N = s[0], C = s[1], H = s[2], W = s[3];
    if (n < 0 || n >= N) throw DimensionError("crop_sample: batch index out of range");
    if (r0 < 0 || c0 < 0 || r0 + h > H || c0 + w > W)
        throw DimensionError("crop_sample window out of bounds");
    Tensor v({1, C, h, w});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < h; ++y) {
            const double* src =
                x->value.data() + ((static_cast<int64_t>(n) * C + c) * H + (r0 + y)) * W + c0;
            std::copy_n(src, w, v.data() + (static_cast<int64_t>(c) * h + y) * w);
        }
    auto out = make_op(std::move(v), {x});
    if (out->requires_grad) {
        Node *o = out.get(), *px = x.get();
        out->backprop = [o, px, n, C, H, W, r0, c0, h, w] {
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < h; ++y) {
                    double* dst =
                        px->grad.data() + ((static_cast<int64_t>(n) * C + c) * H + (r0 + y)) * W + c0;
                    const double* g = o->grad.data() + (static_cast<int64_t>(c) * h + y) * w;
                    for (int xw = 0; xw < w; ++xw) dst[xw] += g[xw];
                }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolution family
// ---------------------------------------------------------------------------

// 2D convolution (cross-correlation) with zero padding chosen so that
// stride 1 preserves the spatial size ("same"). x: (N,Ci,H,W), w: (Co,Ci,kh,kw),
// b: (Co) or nullptr.
namespace detail {
// Integer ceil/floor division for possibly negative numerators (plain '/'
// truncates toward zero, which corrupts window bounds at small sizes).
inline int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -(-a / b); }
inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
}  // namespace detail

inline NodePtr conv2d(const NodePtr& x, const NodePtr& w, const NodePtr& b, int stride = 1,
                      int dilation = 1) {
    const auto& xs = x->value.shape();
    const auto& ws = w->value.shape();
    if (x->value.ndim() != 4 || w->value.ndim() != 4)
        throw DimensionError("conv2d expects NCHW input and OIHW weights");
    int N = xs[0], Ci = xs[1], H = xs[2], W = xs[3];
    int Co = ws[0], kh = ws[2], kw = ws[3];
    if (ws[1] != Ci)
        throw DimensionError("conv2d: weight in-channels " + std::to_string(ws[1]) +
                             " vs input channels " + std::to_string(Ci));
    int ph = dilation * (kh - 1) / 2, pw = dilation * (kw - 1) / 2;
    int OH = (H + 2 * ph - dilation * (kh - 1) - 1) / stride + 1;
    int OW = (W + 2 * pw - dilation * (kw - 1) - 1) / stride + 1;
    if (OH <= 0 || OW <= 0) throw DimensionError("conv2d output would be empty");

    Tensor v({N, Co, OH, OW});
    const double* xd = x->value.data();
    const double* wd = w->value.data();
    for (int n = 0; n < N; ++n) {
        double* on = v.data() + static_cast<int64_t>(n) * Co * OH * OW;
        if (b) {
            for (int co = 0; co < Co; ++co) {
                double bias = b->value[co];
                double* op = on + static_cast<int64_t>(co) * OH * OW;
                for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) op[i] = bias;
            }
        }
        for (int ci = 0; ci < Ci; ++ci) {
            const double* xn = xd + (static_cast<int64_t>(n) * Ci + ci) * H * W;
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    // Output column range where the input column stays in bounds.
                    int ox_lo = std::max(0, detail::ceil_div(pw - kx * dilation, stride));
                    int ox_hi = std::min(OW - 1, detail::floor_div(W - 1 - kx * dilation + pw, stride));
                    if (ox_hi < ox_lo) continue;
                    for (int co = 0; co < Co; ++co) {
                        double wv = wd[((static_cast<int64_t>(co) * Ci + ci) * kh + ky) * kw + kx];
                        if (wv == 0.0) continue;
                        double* op = on + static_cast<int64_t>(co) * OH * OW;
                        for (int oy = 0; oy < OH; ++oy) {
                            int iy = oy * stride + ky * dilation - ph;
                            if (iy < 0 || iy >= H) continue;
                            const double* xrow = xn + static_cast<int64_t>(iy) * W;
                            double* orow = op + static_cast<int64_t>(oy) * OW;
                            int ix = ox_lo * stride + kx * dilation - pw;
                            for (int ox = ox_lo; ox <= ox_hi; ++ox, ix += stride)
                                orow[ox] += wv * xrow[ix];
                        }
                    }
                }
        }
    }

    std::vector<NodePtr> parents = b ? std::vector<NodePtr>{x, w, b} : std::vector<NodePtr>{x, w};
    auto out = make_op(std::move(v), parents);
    if (out->requires_grad) {
        Node *o = out.get(), *px = x.get(), *pw_ = w.get();
        Node* pb = b ? b.get() : nullptr;
        out->backprop = [o, px, pw_, pb, N, Ci, Co, H, W, OH, OW, kh, kw, ph, pw, stride,
                         dilation] {
            const double* gd = o->grad.data();
            if (pb && pb->requires_grad) {
                for (int n = 0; n < N; ++n)
                    for (int co = 0; co < Co; ++co) {
                        const double* gp = gd + (static_cast<int64_t>(n) * Co + co) * OH * OW;
                        double s = 0.0;
                        for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) s += gp[i];
                        pb->grad[co] += s;
                    }
            }
            for (int n = 0; n < N; ++n) {
                for (int ci = 0; ci < Ci; ++ci) {
                    const double* xn = px->value.data() + (static_cast<int64_t>(n) * Ci + ci) * H * W;
                    double* gxn = px->requires_grad
                                      ? px->grad.data() + (static_cast<int64_t>(n) * Ci + ci) * H * W
                                      : nullptr;
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            int ox_lo = std::max(0, detail::ceil_div(pw - kx * dilation, stride));
                            int ox_hi =
                                std::min(OW - 1, detail::floor_div(W - 1 - kx * dilation + pw, stride));
                            if (ox_hi < ox_lo) continue;
                            for (int co = 0; co < Co; ++co) {
                                int64_t widx =
                                    ((static_cast<int64_t>(co) * Ci + ci) * kh + ky) * kw + kx;
                                double wv = pw_->value[widx];
                                const double* gp =
                                    gd + (static_cast<int64_t>(n) * Co + co) * OH * OW;
                                double wgrad = 0.0;
                                for (int oy = 0; oy < OH; ++oy) {
                                    int iy = oy * stride + ky * dilation - ph;
                                    if (iy < 0 || iy >= H) continue;
                                    const double* xrow = xn + static_cast<int64_t>(iy) * W;
                                    double* gxrow =
                                        gxn ? gxn + static_cast<int64_t>(iy) * W : nullptr;
                                    const double* grow = gp + static_cast<int64_t>(oy) * OW;
                                    int ix = ox_lo * stride + kx * dilation - pw;
                                    for (int ox = ox_lo; ox <= ox_hi; ++ox, ix += stride) {
                                        double g = grow[ox];
                                        wgrad += g * xrow[ix];
                                        if (gxrow) gxrow[ix] += g * wv;
                                    }
                                }
                                if (pw_->requires_grad) pw_->grad[widx] += wgrad;
                            }
                        }
                }
            }
        };
    }
    return out;
}

inline NodePtr linear(const NodePtr& x, const NodePtr& w, const NodePtr& b) {
    const auto& xs = x->value.shape();
    const auto& ws = w->value.shape();
    if (x->value.ndim() != 2 || w->value.ndim() != 2 || xs[1] != ws[0])
        throw DimensionError("linear: " + x->value.shape_str() + " vs " + w->value.shape_str());
    int N = xs[0], F = xs[1], K = ws[1];
    Tensor v({N, K});
    for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k) {
            double acc = b ? b->value[k] : 0.0;
            for (int f = 0; f < F; ++f) acc += x->value.at(n, f) * w->value.at(f, k);
            v.at(n, k) = acc;
        }
    std::vector<NodePtr> parents = b ? std::vector<NodePtr>{x, w, b} : std::vector<NodePtr>{x, w};
    auto out = make_op(std::move(v), parents);
    if (out->requires_grad) {
        Node *o = out.get(), *px = x.get(), *pw = w.get();
        Node* pb = b ? b.get() : nullptr;
        out->backprop = [o, px, pw, pb, N, F, K] {
            for (int n = 0; n < N; ++n)
                for (int k = 0; k < K; ++k) {
                    double g = o->grad.at(n, k);
                    if (pb && pb->requires_grad) pb->grad[k] += g;
                    for (int f = 0; f < F; ++f) {
                        if (px->requires_grad) px->grad.at(n, f) += g * pw->value.at(f, k);
                        if (pw->requires_grad) pw->grad.at(f, k) += g * px->value.at(n, f);
                    }
                }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

// 2x2 stride-2 max pooling; requires even spatial dims.
inline NodePtr maxpool2x2(const NodePtr& x) {
    const auto& s = x->value.shape();
    if (x->value.ndim() != 4) throw DimensionError("maxpool2x2 expects NCHW");
    int N = s[0], C = s[1], H = s[2], W = s[3];
    if (H % 2 || W % 2) throw DimensionError("maxpool2x2 requires even spatial dims");
    int OH = H / 2, OW = W / 2;
    Tensor v({N, C, OH, OW});
    std::vector<int64_t> arg(static_cast<size_t>(v.numel()));
    const double* xd = x->value.data();
    int64_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* plane = xd + (static_cast<int64_t>(n) * C + c) * H * W;
            int64_t pbase = (static_cast<int64_t>(n) * C + c) * H * W;
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox, ++oi) {
                    int iy = oy * 2, ix = ox * 2;
                    int64_t best = static_cast<int64_t>(iy) * W + ix;
                    double bv = plane[best];
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            int64_t idx = static_cast<int64_t>(iy + dy) * W + (ix + dx);
                            if (plane[idx] > bv) {
                                bv = plane[idx];
                                best = idx;
                            }
                        }
                    v[oi] = bv;
                    arg[static_cast<size_t>(oi)] = pbase + best;
                }
        }
    auto out = make_op(std::move(v), {x});
    if (out->requires_grad) {
        Node *o = out.get(), *px = x.get();
        auto am = std::move(arg);
        out->backprop = [o, px, am] {
            for (int64_t i = 0; i < o->grad.numel(); ++i)
                px->grad[am[static_cast<size_t>(i)]] += o->grad[i];
        };
    }
    return out;
}

// 2x2 stride-1 max pooling with size-preserving output; windows are clipped
// at the bottom/right border.
inline NodePtr maxpool2x2_s1_same(const NodePtr& x) {
    const auto& s = x->value.shape();
    if (x->value.ndim() != 4) throw DimensionError("maxpool2x2_s1_same expects NCHW");
    int N = s[0], C = s[1], H = s[2], W = s[3];
    Tensor v(s);
    std::vector<int64_t> arg(static_cast<size_t>(v.numel()));
    const double* xd = x->value.data();
    int64_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* plane = xd + (static_cast<int64_t>(n) * C + c) * H * W;
            int64_t pbase = (static_cast<int64_t>(n) * C + c) * H * W;
            for (int y = 0; y < H; ++y)
                for (int xw = 0; xw < W; ++xw, ++oi) {
                    int64_t best = static_cast<int64_t>(y) * W + xw;
                    double bv = plane[best];
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            int yy = std::min(y + dy, H - 1), xx = std::min(xw + dx, W - 1);
                            int64_t idx = static_cast<int64_t>(yy) * W + xx;
                            if (plane[idx] > bv) {
                                bv = plane[idx];
                                best = idx;
                            }
                        }
                    v[oi] = bv;
                    arg[static_cast<size_t>(oi)] = pbase + best;
                }
        }
    auto out = make_op(std::move(v), {x});
    if (out->requires_grad) {
        Node *o = out.get(), *px = x.get();
        auto am = std::move(arg);
        out->backprop = [o, px, am] {
            for (int64_t i = 0; i < o->grad.numel(); ++i)
                px->grad[am[static_cast<size_t>(i)]] += o->grad[i];
        };
    }
    return out;
}

inline NodePtr global_avg_pool(const NodePtr& x) {
    const auto& s = x->value.shape();
    if (x->value.ndim() != 4) throw DimensionError("global_avg_pool expects NCHW");
    int N = s[0], C = s[1];
    int64_t plane = static_cast<int64_t>(s[2]) * s[3];
    Tensor v({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* p = x->value.data() + (static_cast<int64_t>(n) * C + c) * plane;
            double acc = 0.0;
            for (int64_t i = 0; i < plane; ++i) acc += p[i];
            v.at(n, c) = acc / static_cast<double>(plane);
        }
    auto out = make_op(std::move(v), {x});
    if (out->requires_grad) {
        Node *o = out.get(), *px = x.get();
        out->backprop = [o, px, N, C, plane] {
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    double g = o->grad.at(n, c) / static_cast<double>(plane);
                    double* p = px->grad.data() + (static_cast<int64_t>(n) * C + c) * plane;
                    for (int64_t i = 0; i < plane; ++i) p[i] += g;
                }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

struct BnRunning {
    Tensor mean;  // (C)
    Tensor var;   // (C)
};

// Batch normalization over (N,H,W) per channel. Training mode normalizes by
// batch statistics and updates the running estimates in place; eval mode uses
// the running estimates (deterministic).
inline NodePtr batchnorm(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                         BnRunning& running, bool training, double momentum = 0.1,
                         double eps = 1e-5) {
    const auto& s = x->value.shape();
    if (x->value.ndim() != 4) throw DimensionError("batchnorm expects NCHW");
    int N = s[0], C = s[1], H = s[2], W = s[3];
    int64_t plane = static_cast<int64_t>(H) * W;
    int64_t m = static_cast<int64_t>(N) * plane;

    Tensor mean({C}), var({C});
    if (training) {
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = x->value.data() + (static_cast<int64_t>(n) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) acc += p[i];
            }
            mean[c] = acc / static_cast<double>(m);
        }
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = x->value.data() + (static_cast<int64_t>(n) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    double d = p[i] - mean[c];
                    acc += d * d;
                }
            }
            var[c] = acc / static_cast<double>(m);
        }
        for (int c = 0; c < C; ++c) {
            running.mean[c] = (1.0 - momentum) * running.mean[c] + momentum * mean[c];
            running.var[c] = (1.0 - momentum) * running.var[c] + momentum * var[c];
        }
    } else {
        mean = running.mean;
        var = running.var;
    }

    Tensor inv_std({C});
    for (int c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);

    Tensor v(s);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* p = x->value.data() + (static_cast<int64_t>(n) * C + c) * plane;
            double* q = v.data() + (static_cast<int64_t>(n) * C + c) * plane;
            double g = gamma->value[c], bb = beta->value[c], mu = mean[c], is = inv_std[c];
            for (int64_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mu) * is + bb;
        }

    auto out = make_op(std::move(v), {x, gamma, beta});
    if (out->requires_grad) {
        Node *o = out.get(), *px = x.get(), *pg = gamma.get(), *pb = beta.get();
        Tensor mu = std::move(mean), is = std::move(inv_std);
        out->backprop = [o, px, pg, pb, mu, is, N, C, plane, m, training] {
            for (int c = 0; c < C; ++c) {
                double gsum = 0.0, gxh = 0.0;
                for (int n = 0; n < N; ++n) {
                    const double* gp = o->grad.data() + (static_cast<int64_t>(n) * C + c) * plane;
                    const double* xp = px->value.data() + (static_cast<int64_t>(n) * C + c) * plane;
                    for (int64_t i = 0; i < plane; ++i) {
                        gsum += gp[i];
                        gxh += gp[i] * (xp[i] - mu[c]) * is[c];
                    }
                }
                if (pg->requires_grad) pg->grad[c] += gxh;
                if (pb->requires_grad) pb->grad[c] += gsum;
                if (!px->requires_grad) continue;
                double gam = pg->value[c];
                if (training) {
                    // dx = (gamma*inv_std/m) * (m*g - sum(g) - xhat*sum(g*xhat))
                    double inv_m = 1.0 / static_cast<double>(m);
                    for (int n = 0; n < N; ++n) {
                        const double* gp =
                            o->grad.data() + (static_cast<int64_t>(n) * C + c) * plane;
                        const double* xp =
                            px->value.data() + (static_cast<int64_t>(n) * C + c) * plane;
                        double* dxp = px->grad.data() + (static_cast<int64_t>(n) * C + c) * plane;
                        for (int64_t i = 0; i < plane; ++i) {
                            double xhat = (xp[i] - mu[c]) * is[c];
                            dxp[i] += gam * is[c] * (gp[i] - inv_m * gsum - inv_m * xhat * gxh);
                        }
                    }
                } else {
                    for (int n = 0; n < N; ++n) {
                        const double* gp =
                            o->grad.data() + (static_cast<int64_t>(n) * C + c) * plane;
                        double* dxp = px->grad.data() + (static_cast<int64_t>(n) * C + c) * plane;
                        for (int64_t i = 0; i < plane; ++i) dxp[i] += gp[i] * gam * is[c];
                    }
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

// Bilinear resize with half-pixel centers (align_corners = false).
inline NodePtr bilinear_resize(const NodePtr& x, int oh, int ow) {
    const auto& s = x->value.shape();
    if (x->value.ndim() != 4) throw DimensionError("bilinear_resize expects NCHW");
    int N = s[0], C = s[1], H = s[2], W = s[3];
    if (oh <= 0 || ow <= 0) throw DimensionError("bilinear_resize target must be positive");
    double sy = static_cast<double>(H) / oh, sx = static_cast<double>(W) / ow;

    // Per output row/col: two source indices and an interpolation weight.
    std::vector<int> y0(oh), y1(oh), x0(ow), x1(ow);
    std::vector<double> fy(oh), fx(ow);
    for (int oy = 0; oy < oh; ++oy) {
        double t = std::max(0.0, (oy + 0.5) * sy - 0.5);
        int i = std::min(static_cast<int>(t), H - 1);
        y0[oy] = i;
        y1[oy] = std::min(i + 1, H - 1);
        fy[oy] = std::min(t - i, 1.0);
    }
    for (int ox = 0; ox < ow; ++ox) {
        double t = std::max(0.0, (ox + 0.5) * sx - 0.5);
        int i = std::min(static_cast<int>(t), W - 1);
        x0[ox] = i;
        x1[ox] = std::min(i + 1, W - 1);
        fx[ox] = std::min(t - i, 1.0);
    }

    Tensor v({N, C, oh, ow});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* p = x->value.data() + (static_cast<int64_t>(n) * C + c) * H * W;
            double* q = v.data() + (static_cast<int64_t>(n) * C + c) * oh * ow;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double a = p[static_cast<int64_t>(y0[oy]) * W + x0[ox]];
                    double bb = p[static_cast<int64_t>(y0[oy]) * W + x1[ox]];
                    double cc = p[static_cast<int64_t>(y1[oy]) * W + x0[ox]];
                    double d = p[static_cast<int64_t>(y1[oy]) * W + x1[ox]];
                    double top = a + (bb - a) * fx[ox];
                    double bot = cc + (d - cc) * fx[ox];
                    q[static_cast<int64_t>(oy) * ow + ox] = top + (bot - top) * fy[oy];
                }
        }
    auto out = make_op(std::move(v), {x});
    if (out->requires_grad) {
        Node *o = out.get(), *px = x.get();
        out->backprop = [o, px, y0, y1, x0, x1, fy, fx, N, C, H, W, oh, ow] {
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    double* gp = px->grad.data() + (static_cast<int64_t>(n) * C + c) * H * W;
                    const double* g = o->grad.data() + (static_cast<int64_t>(n) * C + c) * oh * ow;
                    for (int oy = 0; oy < oh; ++oy)
                        for (int ox = 0; ox < ow; ++ox) {
                            double gv = g[static_cast<int64_t>(oy) * ow + ox];
                            double wy1 = fy[oy], wy0 = 1.0 - wy1;
                            double wx1 = fx[ox], wx0 = 1.0 - wx1;
                            gp[static_cast<int64_t>(y0[oy]) * W + x0[ox]] += gv * wy0 * wx0;
                            gp[static_cast<int64_t>(y0[oy]) * W + x1[ox]] += gv * wy0 * wx1;
                            gp[static_cast<int64_t>(y1[oy]) * W + x0[ox]] += gv * wy1 * wx0;
                            gp[static_cast<int64_t>(y1[oy]) * W + x1[ox]] += gv * wy1 * wx1;
                        }
                }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax over the channel axis
// ---------------------------------------------------------------------------

inline NodePtr softmax_channels(const NodePtr& x) {
    const auto& s = x->value.shape();
    if (x->value.ndim() != 4) throw DimensionError("softmax_channels expects NCHW");
    int N = s[0], C = s[1], H = s[2], W = s[3];
    int64_t plane = static_cast<int64_t>(H) * W;
    Tensor v(s);
    for (int n = 0; n < N; ++n)
        for (int64_t i = 0; i < plane; ++i) {
            double mx = -1e300;
            for (int c = 0; c < C; ++c)
                mx = std::max(mx, x->value[(static_cast<int64_t>(n) * C + c) * plane + i]);
            double z = 0.0;
            for (int c = 0; c < C; ++c) {
                double e = std::exp(x->value[(static_cast<int64_t>(n) * C + c) * plane + i] - mx);
                v[(static_cast<int64_t>(n) * C + c) * plane + i] = e;
                z += e;
            }
            for (int c = 0; c < C; ++c) v[(static_cast<int64_t>(n) * C + c) * plane + i] /= z;
        }
    auto out = make_op(std::move(v), {x});
    if (out->requires_grad) {
        Node *o = out.get(), *px = x.get();
        out->backprop = [o, px, N, C, plane] {
            for (int n = 0; n < N; ++n)
                for (int64_t i = 0; i < plane; ++i) {
                    double dot = 0.0;
                    for (int c = 0; c < C; ++c) {
                        int64_t idx = (static_cast<int64_t>(n) * C + c) * plane + i;
                        dot += o->grad[idx] * o->value[idx];
                    }
                    for (int c = 0; c < C; ++c) {
                        int64_t idx = (static_cast<int64_t>(n) * C + c) * plane + i;
                        px->grad[idx] += o->value[idx] * (o->grad[idx] - dot);
                    }
                }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fixed-kernel 3x3 depthwise correlation with edge-replication padding
// (shared by the Sobel pair).
// ---------------------------------------------------------------------------

inline NodePtr depthwise3x3_replicate(const NodePtr& x, const std::array<double, 9>& k) {
    const auto& s = x->value.shape();
    if (x->value.ndim() != 4) throw DimensionError("depthwise3x3 expects NCHW");
    int N = s[0], C = s[1], H = s[2], W = s[3];
    if (H < 3 || W < 3) throw DimensionError("depthwise3x3 requires spatial dims >= 3");
    Tensor v(s);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* p = x->value.data() + (static_cast<int64_t>(n) * C + c) * H * W;
            double* q = v.data() + (static_cast<int64_t>(n) * C + c) * H * W;
            for (int y = 0; y < H; ++y)
                for (int xw = 0; xw < W; ++xw) {
                    double acc = 0.0;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            int yy = std::clamp(y + dy, 0, H - 1);
                            int xx = std::clamp(xw + dx, 0, W - 1);
                            acc += k[static_cast<size_t>((dy + 1) * 3 + (dx + 1))] *
                                   p[static_cast<int64_t>(yy) * W + xx];
                        }
                    q[static_cast<int64_t>(y) * W + xw] = acc;
                }
        }
    auto out = make_op(std::move(v), {x});
    if (out->requires_grad) {
        Node *o = out.get(), *px = x.get();
        auto kk = k;
        out->backprop = [o, px, kk, N, C, H, W] {
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    double* gp = px->grad.data() + (static_cast<int64_t>(n) * C + c) * H * W;
                    const double* g = o->grad.data() + (static_cast<int64_t>(n) * C + c) * H * W;
                    for (int y = 0; y < H; ++y)
                        for (int xw = 0; xw < W; ++xw) {
                            double gv = g[static_cast<int64_t>(y) * W + xw];
                            for (int dy = -1; dy <= 1; ++dy)
                                for (int dx = -1; dx <= 1; ++dx) {
                                    int yy = std::clamp(y + dy, 0, H - 1);
                                    int xx = std::clamp(xw + dx, 0, W - 1);
                                    gp[static_cast<int64_t>(yy) * W + xx] +=
                                        gv * kk[static_cast<size_t>((dy + 1) * 3 + (dx + 1))];
                                }
                        }
                }
        };
    }
    return out;
}

}  // namespace vlink
