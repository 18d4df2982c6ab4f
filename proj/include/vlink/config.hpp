#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "vlink/critic.hpp"
#include "vlink/generator.hpp"
#include "vlink/losses.hpp"
#include "vlink/png_io.hpp"

namespace vlink {

using json = nlohmann::json;

// Everything a run needs, with the published schedule as defaults: RMSProp
// pretraining at 5e-4, Adam adversarial updates at 1e-4 with beta 0.5, batch
// size 5 over 100 epochs, and 1e-5 fine-tuning.
struct RunConfig {
    uint64_t seed = 7;
    int resolution = 64;
    int batch_size = 5;

    int pretrain_steps = 1000;
    double pretrain_lr = 5e-4;
    int adversarial_epochs = 100;
    int adversarial_steps = 0;  // when > 0, overrides the epoch-derived count
    double adversarial_lr = 1e-4;
    double adversarial_beta1 = 0.5;
    int n_critic = 1;
    int finetune_steps = 0;
    double finetune_lr = 1e-5;

    GeneratorConfig generator = GeneratorConfig::defaults(64, 8);
    CriticConfig critic;

    LossWeights loss;
    bool feature_edge_symmetric = true;

    int extractor_channels = 8;
    uint64_t extractor_seed = 1234;
    std::string extractor_weights;  // optional weights file for φ

    std::string images_dir;
    std::string masks_dir;
    std::string mask_polarity = "white_hole";

    std::string out_dir = "out";
    int checkpoint_every = 0;  // steps between checkpoints; 0 = phase ends only

    int ttopt_iters = 50;
    double ttopt_lr = 0.1;

    static RunConfig desk_default() {
        RunConfig cfg;
        cfg.resolution = 64;
        cfg.generator = GeneratorConfig::defaults(64, 8, cfg.seed);
        cfg.critic.input_resolution = 64;
        cfg.critic.local_patch_resolution = 32;
        return cfg;
    }

    static RunConfig full_scale_default() {
        RunConfig cfg;
        cfg.resolution = 256;
        cfg.generator = GeneratorConfig::defaults(256, 64, cfg.seed);
        cfg.critic.input_resolution = 256;
        cfg.critic.local_patch_resolution = 128;
        return cfg;
    }

    MaskPolarity polarity() const {
        if (mask_polarity == "white_hole") return MaskPolarity::WhiteHole;
        if (mask_polarity == "white_known") return MaskPolarity::WhiteKnown;
        throw ConfigError("mask_polarity must be white_hole or white_known");
    }

    void validate() const {
        if (batch_size <= 0) throw ConfigError("batch_size must be positive");
        if (resolution != generator.input_resolution)
            throw ConfigError("run resolution must match the generator config");
        if (critic.input_resolution != resolution)
            throw ConfigError("critic resolution must match the run resolution");
        if (n_critic <= 0) throw ConfigError("n_critic must be positive");
        if (pretrain_lr < 0 || adversarial_lr < 0 || finetune_lr < 0)
            throw ConfigError("learning rates must be non-negative");
        generator.validate();
        critic.validate();
        loss.validate();
        polarity();
    }

    json to_json() const {
        json j;
        j["seed"] = seed;
        j["resolution"] = resolution;
        j["batch_size"] = batch_size;
        j["phases"] = {
            {"pretrain", {{"steps", pretrain_steps}, {"lr", pretrain_lr}}},
            {"adversarial",
             {{"epochs", adversarial_epochs},
              {"steps", adversarial_steps},
              {"lr", adversarial_lr},
              {"beta1", adversarial_beta1},
              {"n_critic", n_critic}}},
            {"finetune", {{"steps", finetune_steps}, {"lr", finetune_lr}}},
        };
        json blocks = json::array();
        for (const auto& b : generator.encoder_blocks)
            blocks.push_back({{"out_channels", b.out_channels},
                              {"dilation", b.dilation},
                              {"batchnorm", b.batchnorm},
                              {"maxpool", b.maxpool},
                              {"dropout", b.dropout}});
        j["generator"] = {
            {"input_resolution", generator.input_resolution},
            {"base_channels", generator.base_channels},
            {"seed", generator.seed},
            {"fusion", generator.fusion == FusionVariant::Rstl ? "rstl" : "vn1"},
            {"encoder_blocks", blocks},
            {"decoder_input_channels", generator.decoder_input_channels},
            {"decoder_channels", generator.decoder_channels},
        };
        j["critic"] = {
            {"input_resolution", critic.input_resolution},
            {"channels", critic.channels},
            {"lipschitz", critic.mode == LipschitzMode::WeightClip ? "weight_clip"
                                                                   : "gradient_penalty"},
            {"clip_c", critic.clip_c},
            {"gp_gamma", critic.gp_gamma},
            {"local_patch_resolution", critic.local_patch_resolution},
        };
        j["loss"] = {
            {"lambda_edge", loss.lambda_edge},     {"alpha_vgg", loss.alpha_vgg},
            {"alpha_rm", loss.alpha_rm},           {"alpha_pix", loss.alpha_pix},
            {"tt_contextual", loss.tt_contextual}, {"tt_perceptual", loss.tt_perceptual},
            {"k_pix", loss.k_pix},                 {"feature_edge", loss.feature_edge},
            {"feature_edge_symmetric", feature_edge_symmetric},
        };
        j["extractor"] = {
            {"channels", extractor_channels},
            {"seed", extractor_seed},
            {"weights", extractor_weights},
        };
        j["data"] = {
            {"images_dir", images_dir},
            {"masks_dir", masks_dir},
            {"mask_polarity", mask_polarity},
        };
        j["output"] = {{"dir", out_dir}, {"checkpoint_every", checkpoint_every}};
        j["ttopt"] = {{"iters", ttopt_iters}, {"lr", ttopt_lr}};
        return j;
    }

    static RunConfig from_json(const json& j) {
        RunConfig cfg;
        cfg.seed = j.value("seed", cfg.seed);
        cfg.resolution = j.value("resolution", cfg.resolution);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        if (j.contains("phases")) {
            const auto& p = j["phases"];
            if (p.contains("pretrain")) {
                cfg.pretrain_steps = p["pretrain"].value("steps", cfg.pretrain_steps);
                cfg.pretrain_lr = p["pretrain"].value("lr", cfg.pretrain_lr);
            }
            if (p.contains("adversarial")) {
                const auto& a = p["adversarial"];
                cfg.adversarial_epochs = a.value("epochs", cfg.adversarial_epochs);
                cfg.adversarial_steps = a.value("steps", cfg.adversarial_steps);
                cfg.adversarial_lr = a.value("lr", cfg.adversarial_lr);
                cfg.adversarial_beta1 = a.value("beta1", cfg.adversarial_beta1);
                cfg.n_critic = a.value("n_critic", cfg.n_critic);
            }
            if (p.contains("finetune")) {
                cfg.finetune_steps = p["finetune"].value("steps", cfg.finetune_steps);
                cfg.finetune_lr = p["finetune"].value("lr", cfg.finetune_lr);
            }
        }
        if (j.contains("generator")) {
            const auto& g = j["generator"];
            int res = g.value("input_resolution", cfg.resolution);
            int base = g.value("base_channels", 8);
            uint64_t gseed = g.value("seed", cfg.seed);
            cfg.generator = GeneratorConfig::defaults(res, base, gseed);
            if (g.contains("fusion"))
                cfg.generator.fusion = g["fusion"] == "vn1" ? FusionVariant::Vn1
                                                            : FusionVariant::Rstl;
            if (g.contains("encoder_blocks")) {
                cfg.generator.encoder_blocks.clear();
                for (const auto& b : g["encoder_blocks"]) {
                    EncoderBlockSpec s;
                    s.out_channels = b.value("out_channels", 0);
                    s.dilation = b.value("dilation", 1);
                    s.batchnorm = b.value("batchnorm", false);
                    s.maxpool = b.value("maxpool", false);
                    s.dropout = b.value("dropout", 0.0);
                    cfg.generator.encoder_blocks.push_back(s);
                }
            }
            if (g.contains("decoder_input_channels"))
                cfg.generator.decoder_input_channels = g["decoder_input_channels"];
            if (g.contains("decoder_channels"))
                cfg.generator.decoder_channels = g["decoder_channels"].get<std::vector<int>>();
        } else {
            cfg.generator = GeneratorConfig::defaults(cfg.resolution, 8, cfg.seed);
        }
        if (j.contains("critic")) {
            const auto& c = j["critic"];
            cfg.critic.input_resolution = c.value("input_resolution", cfg.resolution);
            if (c.contains("channels")) cfg.critic.channels = c["channels"].get<std::vector<int>>();
            if (c.contains("lipschitz"))
                cfg.critic.mode = c["lipschitz"] == "gradient_penalty"
                                      ? LipschitzMode::GradientPenalty
                                      : LipschitzMode::WeightClip;
            cfg.critic.clip_c = c.value("clip_c", cfg.critic.clip_c);
            cfg.critic.gp_gamma = c.value("gp_gamma", cfg.critic.gp_gamma);
            cfg.critic.local_patch_resolution =
                c.value("local_patch_resolution", cfg.resolution / 2);
        } else {
            cfg.critic.input_resolution = cfg.resolution;
            cfg.critic.local_patch_resolution = cfg.resolution / 2;
        }
        if (j.contains("loss")) {
            const auto& l = j["loss"];
            cfg.loss.lambda_edge = l.value("lambda_edge", cfg.loss.lambda_edge);
            cfg.loss.alpha_vgg = l.value("alpha_vgg", cfg.loss.alpha_vgg);
            cfg.loss.alpha_rm = l.value("alpha_rm", cfg.loss.alpha_rm);
            cfg.loss.alpha_pix = l.value("alpha_pix", cfg.loss.alpha_pix);
            cfg.loss.tt_contextual = l.value("tt_contextual", cfg.loss.tt_contextual);
            cfg.loss.tt_perceptual = l.value("tt_perceptual", cfg.loss.tt_perceptual);
            cfg.loss.k_pix = l.value("k_pix", cfg.loss.k_pix);
            cfg.loss.feature_edge = l.value("feature_edge", cfg.loss.feature_edge);
            cfg.feature_edge_symmetric =
                l.value("feature_edge_symmetric", cfg.feature_edge_symmetric);
        }
        if (j.contains("extractor")) {
            const auto& e = j["extractor"];
            cfg.extractor_channels = e.value("channels", cfg.extractor_channels);
            cfg.extractor_seed = e.value("seed", cfg.extractor_seed);
            cfg.extractor_weights = e.value("weights", cfg.extractor_weights);
        }
        if (j.contains("data")) {
            const auto& d = j["data"];
            cfg.images_dir = d.value("images_dir", cfg.images_dir);
            cfg.masks_dir = d.value("masks_dir", cfg.masks_dir);
            cfg.mask_polarity = d.value("mask_polarity", cfg.mask_polarity);
        }
        if (j.contains("output")) {
            cfg.out_dir = j["output"].value("dir", cfg.out_dir);
            cfg.checkpoint_every = j["output"].value("checkpoint_every", cfg.checkpoint_every);
        }
        if (j.contains("ttopt")) {
            cfg.ttopt_iters = j["ttopt"].value("iters", cfg.ttopt_iters);
            cfg.ttopt_lr = j["ttopt"].value("lr", cfg.ttopt_lr);
        }
        return cfg;
    }

    static RunConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config " + path);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw ParseError("config " + path + ": " + e.what());
        }
        return from_json(j);
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write config " + path);
        out << to_json().dump(2) << "\n";
    }
};

// Builds the configured φ.
inline FeatureExtractor make_extractor(const RunConfig& cfg) {
    if (!cfg.extractor_weights.empty()) return FeatureExtractor::from_file(cfg.extractor_weights);
    return FeatureExtractor::random_pyramid(cfg.extractor_channels, cfg.extractor_seed);
}

}  // namespace vlink
