#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "vlink/protocol.hpp"

namespace vlink::cli {

struct Command {
    std::string verb;
    std::string config_path;
    std::string checkpoint;
    std::string image;
    std::string mask;
    std::string out;
    std::string gt;
    std::string pred;
    std::string manifest;
    std::string images_dir;
    std::string masks_dir;
    std::string bucket = "MaskDataset1";
    std::string polarity;
    std::optional<uint64_t> seed;
    std::optional<int> steps;
    int ttopt_iters = 0;
    bool ttopt = false;
    bool strict = false;
    bool hole_only = false;
    bool oracle = false;
};

// Builds the CLI11 command tree and parses argv into a Command.
// Throws CLI::ParseError on usage errors (unknown verbs/flags, missing
// required options). A help request returns verb "help" with the text in
// *help_out when provided.
inline Command parse(const std::vector<std::string>& args, std::string* help_out = nullptr) {
    Command cmd;
    CLI::App app{"V-LinkNet inpainting: training, inference and the standardized evaluation protocol"};
    app.require_subcommand(1);

    uint64_t seed_value = 0;
    int steps_value = 0;

    auto add_seed = [&](CLI::App* sub) {
        sub->add_option("--seed", seed_value, "override the config seed");
    };

    auto* pretrain = app.add_subcommand("pretrain", "run the pretraining phase");
    auto* train = app.add_subcommand("train", "run the adversarial phase");
    auto* finetune = app.add_subcommand("finetune", "run the fine-tuning phase");
    for (auto* sub : {pretrain, train, finetune}) {
        sub->add_option("--config", cmd.config_path, "run configuration file")->required();
        sub->add_option("--checkpoint", cmd.checkpoint, "resume from this checkpoint");
        sub->add_option("--out", cmd.out, "output directory override");
        sub->add_option("--steps", steps_value, "phase step count override");
        add_seed(sub);
    }

    auto* infer = app.add_subcommand("infer", "inpaint one image");
    infer->add_option("--config", cmd.config_path, "run configuration file")->required();
    infer->add_option("--image", cmd.image, "input image (PNG)")->required();
    infer->add_option("--mask", cmd.mask, "binary mask (PNG)")->required();
    infer->add_option("--out", cmd.out, "output image path")->required();
    infer->add_option("--checkpoint", cmd.checkpoint, "checkpoint override");
    infer->add_option("--gt", cmd.gt, "ground truth for a metrics line");
    infer->add_option("--polarity", cmd.polarity, "mask polarity: white_hole|white_known");
    infer->add_flag("--ttopt", cmd.ttopt, "run test-time optimization");
    infer->add_option("--ttopt-iters", cmd.ttopt_iters, "test-time optimization iterations");
    add_seed(infer);

    auto* evaluate = app.add_subcommand("evaluate", "evaluate a protocol manifest");
    evaluate->add_option("--manifest", cmd.manifest, "manifest CSV")->required();
    evaluate->add_option("--checkpoint", cmd.checkpoint, "model checkpoint")->required();
    evaluate->add_option("--config", cmd.config_path, "run configuration file");
    evaluate->add_option("--images-dir", cmd.images_dir, "image directory override");
    evaluate->add_option("--masks-dir", cmd.masks_dir, "mask directory override");
    evaluate->add_option("--out", cmd.out, "write the report CSV here");
    evaluate->add_option("--polarity", cmd.polarity, "mask polarity: white_hole|white_known");
    evaluate->add_flag("--ttopt", cmd.ttopt, "apply test-time optimization per row");
    evaluate->add_option("--ttopt-iters", cmd.ttopt_iters, "test-time optimization iterations");
    evaluate->add_flag("--strict", cmd.strict, "abort on the first bad row");
    evaluate->add_flag("--hole-only", cmd.hole_only, "restrict metrics to hole regions");
    evaluate->add_flag("--oracle", cmd.oracle, "score the perfect-model bound instead");
    add_seed(evaluate);

    auto* pbuild = app.add_subcommand("protocol-build", "build a mask-image pairing manifest");
    pbuild->add_option("--images-dir", cmd.images_dir, "test image directory")->required();
    pbuild->add_option("--masks-dir", cmd.masks_dir, "mask directory")->required();
    pbuild->add_option("--bucket", cmd.bucket, "bucket name (default MaskDataset1)");
    pbuild->add_option("--out", cmd.out, "manifest CSV path")->required();
    pbuild->add_option("--polarity", cmd.polarity, "mask polarity: white_hole|white_known");
    add_seed(pbuild);

    auto* pvalidate = app.add_subcommand("protocol-validate", "validate a manifest");
    pvalidate->add_option("--manifest", cmd.manifest, "manifest CSV")->required();
    pvalidate->add_option("--masks-dir", cmd.masks_dir, "recompute hole ratios from these masks");
    pvalidate->add_option("--polarity", cmd.polarity, "mask polarity: white_hole|white_known");

    auto* metrics_cmd = app.add_subcommand("metrics", "score images or directories");
    metrics_cmd->add_option("--gt", cmd.gt, "ground truth image or directory")->required();
    metrics_cmd->add_option("--pred", cmd.pred, "predicted image or directory")->required();
    metrics_cmd->add_option("--config", cmd.config_path, "config (extractor settings for FID)");
    metrics_cmd->add_option("--out", cmd.out, "write the report CSV here");
    add_seed(metrics_cmd);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        if (!help_out) throw;
        *help_out = app.help();
        cmd.verb = "help";
        return cmd;
    }

    for (auto* sub : app.get_subcommands()) {
        cmd.verb = sub->get_name();
        auto* seed_opt = sub->get_option_no_throw("--seed");
        if (seed_opt && seed_opt->count() > 0) cmd.seed = seed_value;
        auto* steps_opt = sub->get_option_no_throw("--steps");
        if (steps_opt && steps_opt->count() > 0) cmd.steps = steps_value;
    }
    return cmd;
}

namespace detail {

inline RunConfig load_config(const Command& cmd) {
    RunConfig cfg =
        cmd.config_path.empty() ? RunConfig::desk_default() : RunConfig::load(cmd.config_path);
    if (cmd.seed) {
        cfg.seed = *cmd.seed;
        cfg.generator.seed = *cmd.seed;
    }
    if (!cmd.out.empty() && (cmd.verb == "pretrain" || cmd.verb == "train" ||
                             cmd.verb == "finetune"))
        cfg.out_dir = cmd.out;
    if (!cmd.images_dir.empty()) cfg.images_dir = cmd.images_dir;
    if (!cmd.masks_dir.empty()) cfg.masks_dir = cmd.masks_dir;
    if (!cmd.polarity.empty()) cfg.mask_polarity = cmd.polarity;
    return cfg;
}

inline MaskPolarity polarity_of(const Command& cmd, const RunConfig& cfg) {
    if (!cmd.polarity.empty()) {
        RunConfig tmp;
        tmp.mask_polarity = cmd.polarity;
        return tmp.polarity();
    }
    return cfg.polarity();
}

inline int run_training_phase(const Command& cmd) {
    RunConfig cfg = detail::load_config(cmd);
    TrainState state = cmd.checkpoint.empty() ? TrainState::init(cfg)
                                              : load_checkpoint(cmd.checkpoint);
    if (cmd.seed) {
        state.cfg.seed = *cmd.seed;
        std::cerr << "seed=" << *cmd.seed << "\n";
    }
    if (!cmd.out.empty()) state.cfg.out_dir = cmd.out;
    if (cmd.steps) {
        if (cmd.verb == "pretrain") state.cfg.pretrain_steps = *cmd.steps;
        if (cmd.verb == "train") state.cfg.adversarial_steps = *cmd.steps;
        if (cmd.verb == "finetune") state.cfg.finetune_steps = *cmd.steps;
    }
    Dataset ds = Dataset::from_dirs(state.cfg.images_dir, state.cfg.masks_dir,
                                    state.cfg.polarity(), state.cfg.resolution, state.cfg.seed);
    std::filesystem::create_directories(state.cfg.out_dir);
    LossLogger logger(state.cfg.out_dir + "/losses_" + cmd.verb + ".csv", state.cfg.seed);
    if (cmd.verb == "pretrain")
        run_pretrain(state, ds, &logger);
    else if (cmd.verb == "train")
        run_adversarial(state, ds, &logger);
    else
        run_finetune(state, ds, &logger);
    std::string ckpt = state.cfg.out_dir + "/" + cmd.verb + ".ckpt";
    save_checkpoint(state, ckpt);
    std::cout << "checkpoint written: " << ckpt << "\n";
    return 0;
}

inline int run_infer(const Command& cmd) {
    RunConfig cfg = load_config(cmd);
    std::string ckpt = cmd.checkpoint;
    if (ckpt.empty()) ckpt = cfg.out_dir + "/train.ckpt";
    TrainState state = load_checkpoint(ckpt);
    if (cmd.seed) std::cerr << "seed=" << *cmd.seed << "\n";
    int res = state.cfg.resolution;
    Image observed = load_image(cmd.image, res);
    BinaryMask mask = load_mask(cmd.mask, polarity_of(cmd, state.cfg), res);
    Image result;
    if (cmd.ttopt && hole_ratio(mask) > 0.0) {
        Rng rng(cmd.seed ? *cmd.seed : state.cfg.seed);
        int iters = cmd.ttopt_iters > 0 ? cmd.ttopt_iters : state.cfg.ttopt_iters;
        result = test_time_optimize(state, observed, mask, iters, rng);
    } else {
        Image pred = state.gen->infer(observed, mask);
        result = compose(observed, pred, mask);
    }
    save_image(result, cmd.out);
    if (!cmd.gt.empty()) {
        Image gt = load_image(cmd.gt, res);
        std::cout << "mae=" << mae(gt, result) << " psnr=" << psnr(gt, result)
                  << " ssim=" << ssim(gt, result) << "\n";
    }
    return 0;
}

inline int run_evaluate(const Command& cmd) {
    TrainState state = load_checkpoint(cmd.checkpoint);
    RunConfig cfg = cmd.config_path.empty() ? state.cfg : RunConfig::load(cmd.config_path);
    ProtocolManifest manifest = load_manifest(cmd.manifest);
    EvaluateOptions opt;
    opt.images_dir = cmd.images_dir.empty() ? cfg.images_dir : cmd.images_dir;
    opt.masks_dir = cmd.masks_dir.empty() ? cfg.masks_dir : cmd.masks_dir;
    opt.polarity = polarity_of(cmd, cfg);
    opt.resolution = state.cfg.resolution;
    opt.model = cmd.oracle ? EvalModel::Oracle : EvalModel::Checkpoint;
    opt.use_ttopt = cmd.ttopt;
    opt.ttopt_iters = cmd.ttopt_iters > 0 ? cmd.ttopt_iters : state.cfg.ttopt_iters;
    opt.ttopt_seed = cmd.seed ? *cmd.seed : state.cfg.seed;
    opt.strict = cmd.strict;
    opt.hole_only = cmd.hole_only;
    std::vector<std::string> errors;
    MetricReport report = evaluate_manifest(manifest, state, opt, &errors);
    for (const auto& e : errors) std::cerr << "evaluate: " << e << "\n";
    std::cout << report_table(report);
    if (!cmd.out.empty()) {
        std::ofstream out(cmd.out);
        if (!out) throw IoError("cannot write report " + cmd.out);
        if (cmd.seed) out << "# seed=" << *cmd.seed << "\n";
        out << report_csv(report);
    }
    return 0;
}

inline int run_protocol_build(const Command& cmd) {
    namespace fs = std::filesystem;
    RunConfig defaults;
    MaskPolarity polarity = polarity_of(cmd, defaults);
    std::vector<std::string> image_ids;
    for (const auto& e : fs::directory_iterator(cmd.images_dir))
        if (e.is_regular_file() && e.path().extension() == ".png")
            image_ids.push_back(e.path().stem().string());
    std::vector<MaskEntry> inventory;
    for (const auto& e : fs::directory_iterator(cmd.masks_dir))
        if (e.is_regular_file() && e.path().extension() == ".png") {
            BinaryMask m = load_mask(e.path().string(), polarity);
            inventory.push_back({e.path().stem().string(), hole_ratio(m)});
        }
    auto buckets = default_buckets();
    const MaskBucket& bucket = find_bucket(buckets, cmd.bucket);
    uint64_t seed = cmd.seed ? *cmd.seed : 0;
    ProtocolManifest manifest = build_manifest(image_ids, inventory, bucket, seed);
    write_manifest(manifest, cmd.out);
    std::cout << "wrote " << manifest.rows.size() << " rows to " << cmd.out << "\n";
    return 0;
}

inline int run_protocol_validate(const Command& cmd) {
    ProtocolManifest manifest = load_manifest(cmd.manifest);
    if (!cmd.masks_dir.empty()) {
        RunConfig defaults;
        MaskPolarity polarity = polarity_of(cmd, defaults);
        namespace fs = std::filesystem;
        for (size_t i = 0; i < manifest.rows.size(); ++i) {
            const auto& row = manifest.rows[i];
            fs::path p = fs::path(cmd.masks_dir) / (row.mask_id + ".png");
            if (!fs::exists(p)) throw ValidationError("row " + std::to_string(i + 1) +
                                                      ": missing mask file " + p.string());
            double r = hole_ratio(load_mask(p.string(), polarity));
            if (std::abs(r - row.hole_ratio) > 1e-9)
                throw ValidationError("row " + std::to_string(i + 1) + ": mask " + row.mask_id +
                                      " hole_ratio drifted to " + std::to_string(r));
        }
    }
    std::cout << "manifest ok: " << manifest.rows.size() << " rows, seed " << manifest.seed
              << "\n";
    return 0;
}

inline int run_metrics(const Command& cmd) {
    namespace fs = std::filesystem;
    RunConfig cfg =
        cmd.config_path.empty() ? RunConfig::desk_default() : RunConfig::load(cmd.config_path);
    FeatureExtractor phi = make_extractor(cfg);
    MetricReport report;
    report.extractor_hash = phi.identity_hash();
    vlink::detail::PairAccum acc;
    if (fs::is_directory(cmd.gt) != fs::is_directory(cmd.pred))
        throw ArgumentError("metrics: --gt and --pred must both be files or both directories");
    std::vector<std::pair<std::string, std::string>> pairs;
    if (fs::is_directory(cmd.gt)) {
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(cmd.gt))
            if (e.is_regular_file() && e.path().extension() == ".png")
                names.push_back(e.path().filename().string());
        std::sort(names.begin(), names.end());
        for (const auto& n : names) {
            fs::path p = fs::path(cmd.pred) / n;
            if (!fs::exists(p)) throw IoError("missing predicted image " + p.string());
            pairs.emplace_back((fs::path(cmd.gt) / n).string(), p.string());
        }
        if (pairs.empty()) throw IoError("no PNG images in " + cmd.gt);
    } else {
        pairs.emplace_back(cmd.gt, cmd.pred);
    }
    for (const auto& [gp, pp] : pairs) {
        Image g = load_image(gp);
        Image p = load_image(pp);
        acc.add(mae(g, p), psnr(g, p), ssim(g, p));
        acc.real_feats.push_back(phi.pooled_features(image_to_nchw(g)).raw());
        acc.fake_feats.push_back(phi.pooled_features(image_to_nchw(p)).raw());
    }
    report.overall = acc.finish(phi);
    std::cout << report_table(report);
    if (!cmd.out.empty()) {
        std::ofstream out(cmd.out);
        if (!out) throw IoError("cannot write report " + cmd.out);
        if (cmd.seed) out << "# seed=" << *cmd.seed << "\n";
        out << report_csv(report);
    }
    return 0;
}

}  // namespace detail

inline int run(const Command& cmd) {
    if (cmd.verb == "pretrain" || cmd.verb == "train" || cmd.verb == "finetune")
        return detail::run_training_phase(cmd);
    if (cmd.verb == "infer") return detail::run_infer(cmd);
    if (cmd.verb == "evaluate") return detail::run_evaluate(cmd);
    if (cmd.verb == "protocol-build") return detail::run_protocol_build(cmd);
    if (cmd.verb == "protocol-validate") return detail::run_protocol_validate(cmd);
    if (cmd.verb == "metrics") return detail::run_metrics(cmd);
    throw ArgumentError("unknown verb " + cmd.verb);
}

inline int run_main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    Command cmd;
    std::string help;
    try {
        cmd = parse(args, &help);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }
    if (cmd.verb == "help") {
        std::cout << help;
        return 0;
    }
    try {
        return run(cmd);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace vlink::cli
