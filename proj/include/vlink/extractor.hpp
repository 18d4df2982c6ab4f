#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "vlink/autodiff.hpp"
#include "vlink/image.hpp"
#include "vlink/rng.hpp"

namespace vlink {

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 1469598103934665603ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return s;
}

// Frozen, deterministic feature map φ. The default is a three-block random
// convolutional pyramid (features at strides 1, 2, 4) seeded from config; an
// identity variant feeds raw pixels through for tests and reductions.
// Parameters are constants in the graph and are never trained.
class FeatureExtractor {
public:
    // Conv weights drawn fan-in-scaled uniform from the given seed.
    static FeatureExtractor random_pyramid(int base_channels, uint64_t seed) {
        FeatureExtractor fe;
        fe.base_channels_ = base_channels;
        fe.seed_ = seed;
        Rng rng(seed);
        int c = base_channels;
        fe.weights_.push_back(init_conv(3, c, rng));
        fe.weights_.push_back(init_conv(c, 2 * c, rng));
        fe.weights_.push_back(init_conv(2 * c, 4 * c, rng));
        fe.compute_hash();
        return fe;
    }

    static FeatureExtractor identity() {
        FeatureExtractor fe;
        fe.identity_ = true;
        fe.hash_ = "identity";
        return fe;
    }

    // Loads pyramid weights previously stored with save_weights.
    static FeatureExtractor from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open extractor weights " + path);
        char magic[4];
        in.read(magic, 4);
        if (!in || std::string(magic, 4) != "VLFE")
            throw IntegrityError("bad extractor weights file " + path);
        int32_t base = 0;
        in.read(reinterpret_cast<char*>(&base), sizeof(base));
        FeatureExtractor fe;
        fe.base_channels_ = base;
        fe.seed_ = 0;
        int c = base;
        int dims[3][2] = {{3, c}, {c, 2 * c}, {2 * c, 4 * c}};
        for (auto& d : dims) {
            Tensor w({d[1], d[0], 3, 3});
            in.read(reinterpret_cast<char*>(w.data()), w.numel() * sizeof(double));
            if (!in) throw IntegrityError("truncated extractor weights " + path);
            fe.weights_.push_back(constant(std::move(w)));
        }
        fe.compute_hash();
        return fe;
    }

    void save_weights(const std::string& path) const {
        if (identity_) throw ArgumentError("identity extractor has no weights");
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write extractor weights " + path);
        out.write("VLFE", 4);
        int32_t base = base_channels_;
        out.write(reinterpret_cast<const char*>(&base), sizeof(base));
        for (const auto& w : weights_)
            out.write(reinterpret_cast<const char*>(w->value.data()),
                      w->value.numel() * sizeof(double));
    }

    bool is_identity() const { return identity_; }
    uint64_t seed() const { return seed_; }
    int base_channels() const { return base_channels_; }

    // Layer features of an (N,3,H,W) input, differentiable w.r.t. the input.
    std::vector<NodePtr> features(const NodePtr& image) const {
        if (identity_) return {image};
        std::vector<NodePtr> out;
        NodePtr h = elu(conv2d(image, weights_[0], nullptr, 1));
        out.push_back(h);
        h = elu(conv2d(h, weights_[1], nullptr, 2));
        out.push_back(h);
        h = elu(conv2d(h, weights_[2], nullptr, 2));
        out.push_back(h);
        return out;
    }

    // Spatially pooled deepest-layer features, used by FID. Returns a flat
    // vector of dimension 4*base_channels (or 3 for the identity extractor,
    // which pools raw channels).
    Tensor pooled_features(const Tensor& image_nchw) const {
        auto feats = features(constant(image_nchw));
        const Tensor& deepest = feats.back()->value;
        int N = deepest.dim(0), C = deepest.dim(1);
        if (N != 1) throw DimensionError("pooled_features expects a single image");
        int64_t plane = static_cast<int64_t>(deepest.dim(2)) * deepest.dim(3);
        Tensor out({C});
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            const double* p = deepest.data() + static_cast<int64_t>(c) * plane;
            for (int64_t i = 0; i < plane; ++i) acc += p[i];
            out[c] = acc / static_cast<double>(plane);
        }
        return out;
    }

    // Identity of this extractor's parameters; printed beside FID values so
    // reports from different extractors are never compared blindly.
    const std::string& identity_hash() const { return hash_; }

    // Hash of weight bytes; constant across a run unless someone mutates the
    // frozen parameters (which the trainer must never do).
    std::string current_param_hash() const {
        if (identity_) return "identity";
        uint64_t h = 1469598103934665603ULL;
        for (const auto& w : weights_)
            h = fnv1a64(w->value.data(), static_cast<size_t>(w->value.numel()) * sizeof(double), h);
        return hex64(h);
    }

private:
    static NodePtr init_conv(int cin, int cout, Rng& rng) {
        Tensor w({cout, cin, 3, 3});
        double s = std::sqrt(1.0 / (cin * 9.0));
        for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-s, s);
        return constant(std::move(w));
    }

    void compute_hash() { hash_ = current_param_hash(); }

    bool identity_ = false;
    int base_channels_ = 0;
    uint64_t seed_ = 0;
    std::vector<NodePtr> weights_;
    std::string hash_;
};

}  // namespace vlink
