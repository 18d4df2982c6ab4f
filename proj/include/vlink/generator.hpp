#pragma once

#include <cmath>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "vlink/image.hpp"
#include "vlink/layers.hpp"

namespace vlink {

enum class FusionVariant { Rstl, Vn1 };

struct EncoderBlockSpec {
    int out_channels = 0;
    int dilation = 1;
    bool batchnorm = false;
    bool maxpool = false;
    double dropout = 0.0;  // branch-A rate; branch B runs with dropout disabled
};

struct GeneratorConfig {
    int input_resolution = 64;
    int base_channels = 8;
    uint64_t seed = 7;
    FusionVariant fusion = FusionVariant::Rstl;
    std::vector<EncoderBlockSpec> encoder_blocks;
    int decoder_input_channels = 0;
    std::vector<int> decoder_channels;  // one entry per upsampling stage

    // Reference schedule: eight blocks per branch, widths base x
    // (1,2,4,8,8,8,8,8), dilations (1,1,2,4,8,16,16,16), batchnorm + maxpool
    // on blocks 1-5, dropout 0.2 on blocks 6-8.
    static GeneratorConfig defaults(int resolution, int base, uint64_t seed = 7) {
        GeneratorConfig cfg;
        cfg.input_resolution = resolution;
        cfg.base_channels = base;
        cfg.seed = seed;
        const int mult[8] = {1, 2, 4, 8, 8, 8, 8, 8};
        const int dil[8] = {1, 1, 2, 4, 8, 16, 16, 16};
        for (int i = 0; i < 8; ++i) {
            EncoderBlockSpec b;
            b.out_channels = base * mult[i];
            b.dilation = dil[i];
            b.batchnorm = i < 5;
            b.maxpool = i < 5;
            b.dropout = i >= 5 ? 0.2 : 0.0;
            cfg.encoder_blocks.push_back(b);
        }
        cfg.decoder_input_channels = base * 8;
        cfg.decoder_channels = {base * 4, base * 2, base, base, base};
        return cfg;
    }

    int pool_count() const {
        int n = 0;
        for (const auto& b : encoder_blocks)
            if (b.maxpool) ++n;
        return n;
    }

    void validate() const {
        if (input_resolution <= 0 || base_channels <= 0)
            throw ConfigError("generator resolution and base_channels must be positive");
        if (encoder_blocks.size() != 8)
            throw ConfigError("encoder must have exactly 8 convolution blocks");
        std::set<int> allowed = {1, 2, 4, 8, 16};
        bool has8 = false, has16 = false;
        for (size_t i = 0; i < encoder_blocks.size(); ++i) {
            const auto& b = encoder_blocks[i];
            if (b.out_channels <= 0) throw ConfigError("encoder block channels must be positive");
            if (!allowed.count(b.dilation))
                throw ConfigError("encoder dilation rates must come from {1,2,4,8,16}");
            if (b.dilation == 8) has8 = true;
            if (b.dilation == 16) has16 = true;
            bool early = i < 5;
            if (b.batchnorm != early || b.maxpool != early)
                throw ConfigError("blocks 1-5 need batchnorm+maxpool, blocks 6-8 neither");
            if (!early && b.dropout != 0.2)
                throw ConfigError("branch-A dropout rate must be 0.2 on blocks 6-8");
            if (early && b.dropout != 0.0)
                throw ConfigError("blocks 1-5 carry no dropout");
        }
        if (!has8 || !has16)
            throw ConfigError("dilation schedule must reach rates 8 and 16 in the deep blocks");
        int stages = pool_count();
        if (static_cast<int>(decoder_channels.size()) != stages)
            throw ConfigError("decoder stage count must match encoder pooling count");
        if ((input_resolution >> stages) << stages != input_resolution)
            throw ConfigError("input resolution must be divisible by 2^pool_count");
        if (decoder_input_channels <= 0)
            throw ConfigError("decoder_input_channels must be positive");
    }
};

// Block-8 and block-3 activations of one encoder branch.
struct EncoderTaps {
    NodePtr deep;
    NodePtr tap3;
};

// One encoder branch: conv -> [batchnorm] -> ELU -> [maxpool] -> [dropout]
// per block.
class Encoder {
public:
    Encoder() = default;
    Encoder(std::string name, int in_channels, const std::vector<EncoderBlockSpec>& specs,
            bool enable_dropout, Rng& rng)
        : name_(std::move(name)) {
        int cin = in_channels;
        for (const auto& s : specs) {
            Block b;
            b.conv = ConvLayer(cin, s.out_channels, 3, 1, s.dilation, rng);
            if (s.batchnorm) b.bn = BnLayer(s.out_channels);
            b.maxpool = s.maxpool;
            b.dropout = enable_dropout ? s.dropout : 0.0;
            blocks_.push_back(std::move(b));
            cin = s.out_channels;
        }
    }

    EncoderTaps forward(const NodePtr& x, bool training, Rng& rng) {
        NodePtr h = x;
        NodePtr tap3;
        for (size_t i = 0; i < blocks_.size(); ++i) {
            auto& b = blocks_[i];
            h = b.conv.forward(h);
            if (b.bn) h = b.bn->forward(h, training);
            h = elu(h);
            if (b.maxpool) h = maxpool2x2(h);
            if (b.dropout > 0.0) h = dropout(h, b.dropout, training, rng);
            if (!h->value.all_finite())
                throw NumericError(name_ + " produced non-finite activations in block " +
                                   std::to_string(i + 1));
            if (i + 1 == 3 || (blocks_.size() < 3 && i + 1 == blocks_.size())) tap3 = h;
        }
        return {h, tap3};
    }

    void collect(std::vector<NamedParam>& params, std::vector<NamedState>& state) {
        for (size_t i = 0; i < blocks_.size(); ++i) {
            std::string prefix = name_ + ".block" + std::to_string(i + 1);
            blocks_[i].conv.collect(prefix + ".conv", params);
            if (blocks_[i].bn) blocks_[i].bn->collect(prefix + ".bn", params, state);
        }
    }

private:
    struct Block {
        ConvLayer conv;
        std::optional<BnLayer> bn;
        bool maxpool = false;
        double dropout = 0.0;
    };
    std::string name_;
    std::vector<Block> blocks_;
};

struct FusionOut {
    // RSTL: the residual sum X_phi before the refinement projection.
    // VN1: the softmax-normalized concatenated map.
    NodePtr pre_projection;
    NodePtr fused;
};

// Recursive residual transition: concat -> ELU -> 2x2 stride-1 maxpool ->
// dilated 3x3 conv -> ELU, residually added to the concatenated input, then a
// dilated refinement conv projecting to the decoder width.
class RstlFusion {
public:
    RstlFusion() = default;
    RstlFusion(std::string name, int branch_channels, int out_channels, Rng& rng)
        : name_(std::move(name)),
          inner_(2 * branch_channels, 2 * branch_channels, 3, 1, 16, rng),
          projection_(2 * branch_channels, out_channels, 3, 1, 2, rng) {}

    FusionOut forward(const NodePtr& feat_a, const NodePtr& feat_b) const {
        check_same_shape(feat_a->value, feat_b->value, "rstl_forward");
        NodePtr xi = concat_channels(feat_a, feat_b);
        NodePtr h = elu(xi);
        h = maxpool2x2_s1_same(h);
        h = inner_.forward(h);
        h = elu(h);
        NodePtr pre = add(h, xi);
        return {pre, projection_.forward(pre)};
    }

    void collect(std::vector<NamedParam>& params) {
        inner_.collect(name_ + ".inner", params);
        projection_.collect(name_ + ".projection", params);
    }

    ConvLayer& inner() { return inner_; }
    ConvLayer& projection() { return projection_; }

private:
    std::string name_;
    ConvLayer inner_;
    ConvLayer projection_;
};

// Ablation fusion: per-branch 1x1 convs, concat, channel softmax, projection.
// No pooling unit.
class Vn1Fusion {
public:
    Vn1Fusion() = default;
    Vn1Fusion(std::string name, int branch_channels, int out_channels, Rng& rng)
        : name_(std::move(name)),
          proj_a_(branch_channels, branch_channels, 1, 1, 1, rng),
          proj_b_(branch_channels, branch_channels, 1, 1, 1, rng),
          projection_(2 * branch_channels, out_channels, 3, 1, 2, rng) {}

    FusionOut forward(const NodePtr& feat_a, const NodePtr& feat_b) const {
        check_same_shape(feat_a->value, feat_b->value, "vn1_forward");
        NodePtr xi = concat_channels(proj_a_.forward(feat_a), proj_b_.forward(feat_b));
        NodePtr attn = softmax_channels(xi);
        return {attn, projection_.forward(attn)};
    }

    void collect(std::vector<NamedParam>& params) {
        proj_a_.collect(name_ + ".proj_a", params);
        proj_b_.collect(name_ + ".proj_b", params);
        projection_.collect(name_ + ".projection", params);
    }

    ConvLayer& proj_a() { return proj_a_; }
    ConvLayer& proj_b() { return proj_b_; }

private:
    std::string name_;
    ConvLayer proj_a_;
    ConvLayer proj_b_;
    ConvLayer projection_;
};

// Decoder: per stage, fixed bilinear x2 upsample followed by a learnable conv
// with batchnorm and ELU; the output block is a conv with Tanh and no
// batchnorm.
class Decoder {
public:
    Decoder() = default;
    Decoder(std::string name, int in_channels, const std::vector<int>& stage_channels, Rng& rng)
        : name_(std::move(name)) {
        int cin = in_channels;
        for (int cout : stage_channels) {
            Stage s;
            s.conv = ConvLayer(cin, cout, 3, 1, 1, rng);
            s.bn = BnLayer(cout);
            stages_.push_back(std::move(s));
            cin = cout;
        }
        final_ = ConvLayer(cin, 3, 3, 1, 1, rng);
    }

    NodePtr forward(const NodePtr& fused, bool training) {
        NodePtr h = fused;
        for (auto& s : stages_) {
            int H = h->value.dim(2), W = h->value.dim(3);
            h = bilinear_resize(h, H * 2, W * 2);
            h = s.conv.forward(h);
            h = s.bn.forward(h, training);
            h = elu(h);
        }
        return tanh_act(final_.forward(h));
    }

    void collect(std::vector<NamedParam>& params, std::vector<NamedState>& state) {
        for (size_t i = 0; i < stages_.size(); ++i) {
            std::string prefix = name_ + ".stage" + std::to_string(i + 1);
            stages_[i].conv.collect(prefix + ".conv", params);
            stages_[i].bn.collect(prefix + ".bn", params, state);
        }
        final_.collect(name_ + ".final", params);
    }

private:
    struct Stage {
        ConvLayer conv;
        BnLayer bn;
    };
    std::string name_;
    std::vector<Stage> stages_;
    ConvLayer final_;
};

struct GeneratorForward {
    NodePtr pred;  // (N,3,H,W), Tanh range
    EncoderTaps taps_a;
    EncoderTaps taps_b;
    FusionOut fusion;
};

// Dual-encoder generator. Branch A consumes the masked image, branch B the
// reverse-masked image; features fuse through the configured variant and the
// decoder reconstructs the full image.
class Generator {
public:
    explicit Generator(GeneratorConfig cfg) : cfg_(std::move(cfg)) {
        Rng rng(cfg_.seed);
        branch_a_ = Encoder("encoderA", 3, cfg_.encoder_blocks, true, rng);
        branch_b_ = Encoder("encoderB", 3, cfg_.encoder_blocks, false, rng);
        int enc_out = cfg_.encoder_blocks.back().out_channels;
        if (cfg_.fusion == FusionVariant::Rstl)
            rstl_ = RstlFusion("rstl", enc_out, cfg_.decoder_input_channels, rng);
        else
            vn1_ = Vn1Fusion("vn1", enc_out, cfg_.decoder_input_channels, rng);
        decoder_ = Decoder("decoder", cfg_.decoder_input_channels, cfg_.decoder_channels, rng);
    }

    const GeneratorConfig& config() const { return cfg_; }

    // Forward from an image node (N,3,H,W) so test-time input optimization can
    // differentiate through the masking.
    GeneratorForward forward_node(const NodePtr& image, const Tensor& mask_batch, bool training,
                                  Rng& rng) {
        if (image->value.dim(2) != cfg_.input_resolution ||
            image->value.dim(3) != cfg_.input_resolution)
            throw DimensionError("generator input resolution mismatch: got " +
                                 image->value.shape_str());
        Tensor rmask(mask_batch.shape());
        for (int64_t i = 0; i < mask_batch.numel(); ++i) rmask[i] = 1.0 - mask_batch[i];
        NodePtr in_a = mask_mul(image, mask_batch);
        NodePtr in_b = mask_mul(image, rmask);
        GeneratorForward out;
        out.taps_a = branch_a_.forward(in_a, training, rng);
        out.taps_b = branch_b_.forward(in_b, training, rng);
        out.fusion = fuse(out.taps_a.deep, out.taps_b.deep);
        out.pred = decoder_.forward(out.fusion.fused, training);
        return out;
    }

    GeneratorForward forward(const Tensor& gt_batch, const Tensor& mask_batch, bool training,
                             Rng& rng) {
        return forward_node(constant(gt_batch), mask_batch, training, rng);
    }

    // Single-image inference convenience.
    Image infer(const Image& img, const BinaryMask& mask) {
        Rng dummy(0);
        auto out = forward(image_to_nchw(img), mask_to_nchw(mask), false, dummy);
        return nchw_to_image(out.pred->value);
    }

    FusionOut fuse(const NodePtr& feat_a, const NodePtr& feat_b) const {
        return cfg_.fusion == FusionVariant::Rstl ? rstl_.forward(feat_a, feat_b)
                                                  : vn1_.forward(feat_a, feat_b);
    }

    // Registries are rebuilt per call; NodePtr handles are stable, and state
    // entries point into the current object (do not hold them across moves).
    std::vector<NamedParam> params() {
        std::vector<NamedParam> params;
        std::vector<NamedState> state;
        collect(params, state);
        return params;
    }

    std::vector<NamedState> state_tensors() {
        std::vector<NamedParam> params;
        std::vector<NamedState> state;
        collect(params, state);
        return state;
    }

    void set_requires_grad(bool rg) {
        for (auto& p : params()) p.node->requires_grad = rg;
    }

    RstlFusion& rstl() { return rstl_; }
    Vn1Fusion& vn1() { return vn1_; }
    Encoder& branch_a() { return branch_a_; }
    Encoder& branch_b() { return branch_b_; }

private:
    void collect(std::vector<NamedParam>& params, std::vector<NamedState>& state) {
        branch_a_.collect(params, state);
        branch_b_.collect(params, state);
        if (cfg_.fusion == FusionVariant::Rstl)
            rstl_.collect(params);
        else
            vn1_.collect(params);
        decoder_.collect(params, state);
    }

    GeneratorConfig cfg_;
    Encoder branch_a_;
    Encoder branch_b_;
    RstlFusion rstl_;
    Vn1Fusion vn1_;
    Decoder decoder_;
};

}  // namespace vlink
