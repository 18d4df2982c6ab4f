#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "vlink/checkpoint.hpp"
#include "vlink/config.hpp"
#include "vlink/critic.hpp"
#include "vlink/generator.hpp"
#include "vlink/losses.hpp"
#include "vlink/optim.hpp"

namespace vlink {

enum class Phase : uint32_t { Pretrain = 1, Adversarial = 2, Finetune = 3 };

inline const char* phase_name(Phase p) {
    switch (p) {
        case Phase::Pretrain: return "pretrain";
        case Phase::Adversarial: return "adversarial";
        case Phase::Finetune: return "finetune";
    }
    return "?";
}

inline constexpr size_t kLossHistoryCapacity = 128;

// Everything that evolves during training. Serialization through
// save_checkpoint/load_checkpoint restores the state bit-identically, so the
// continuation of a loaded run matches the uninterrupted one.
struct TrainState {
    RunConfig cfg;
    std::unique_ptr<Generator> gen;
    std::unique_ptr<Critic> critic_global;
    std::unique_ptr<Critic> critic_local;
    FeatureExtractor phi;

    RmsProp pretrain_opt;
    Adam gen_opt, critic_g_opt, critic_l_opt, finetune_opt;

    Phase phase = Phase::Pretrain;
    int64_t phase_step = 0;
    int64_t global_step = 0;
    Rng rng{0};

    std::vector<double> loss_history;  // ring buffer of phase objectives
    size_t loss_history_next = 0;

    static TrainState init(RunConfig cfg) {
        cfg.validate();
        TrainState st;
        st.cfg = cfg;
        st.gen = std::make_unique<Generator>(cfg.generator);
        Rng critic_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
        st.critic_global = std::make_unique<Critic>("criticG", cfg.critic.input_resolution,
                                                    cfg.critic.channels, critic_rng);
        st.critic_local = std::make_unique<Critic>("criticL", cfg.critic.local_patch_resolution,
                                                   cfg.critic.channels, critic_rng);
        st.phi = make_extractor(cfg);
        st.pretrain_opt = RmsProp(cfg.pretrain_lr);
        st.gen_opt = Adam(cfg.adversarial_lr, cfg.adversarial_beta1);
        st.critic_g_opt = Adam(cfg.adversarial_lr, cfg.adversarial_beta1);
        st.critic_l_opt = Adam(cfg.adversarial_lr, cfg.adversarial_beta1);
        st.finetune_opt = Adam(cfg.finetune_lr, cfg.adversarial_beta1);
        st.rng = Rng(cfg.seed);
        return st;
    }

    void push_loss(double v) {
        if (loss_history.size() < kLossHistoryCapacity) {
            loss_history.push_back(v);
        } else {
            loss_history[loss_history_next] = v;
        }
        loss_history_next = (loss_history_next + 1) % kLossHistoryCapacity;
    }
};

// ---------------------------------------------------------------------------
// Data handling
// ---------------------------------------------------------------------------

struct Sample {
    std::string id;
    Image image;
    BinaryMask mask;
};

struct Dataset {
    std::vector<Sample> samples;

    size_t size() const { return samples.size(); }

    // Sorted image list paired with a seeded shuffle of the sorted mask list;
    // masks repeat round-robin when images outnumber them.
    static Dataset from_dirs(const std::string& images_dir, const std::string& masks_dir,
                             MaskPolarity polarity, int resolution, uint64_t seed) {
        namespace fs = std::filesystem;
        auto list_pngs = [](const std::string& dir) {
            if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
            std::vector<std::string> files;
            for (const auto& e : fs::directory_iterator(dir))
                if (e.is_regular_file() && e.path().extension() == ".png")
                    files.push_back(e.path().string());
            std::sort(files.begin(), files.end());
            return files;
        };
        auto images = list_pngs(images_dir);
        auto masks = list_pngs(masks_dir);
        if (images.empty()) throw IoError("no PNG images in " + images_dir);
        if (masks.empty()) throw IoError("no PNG masks in " + masks_dir);
        Rng rng(seed);
        rng.shuffle(masks);
        Dataset ds;
        for (size_t i = 0; i < images.size(); ++i) {
            Sample s;
            s.id = fs::path(images[i]).stem().string();
            s.image = load_image(images[i], resolution);
            s.mask = load_mask(masks[i % masks.size()], polarity, resolution);
            ds.samples.push_back(std::move(s));
        }
        return ds;
    }
};

struct Batch {
    Tensor images;  // (B,3,H,W)
    Tensor masks;   // (B,1,H,W)
    std::vector<std::string> ids;

    int size() const { return images.empty() ? 0 : images.dim(0); }
};

inline Batch make_batch(const Dataset& ds, const std::vector<size_t>& indices) {
    if (indices.empty()) throw ArgumentError("empty batch");
    int B = static_cast<int>(indices.size());
    int H = ds.samples[indices[0]].image.height;
    int W = ds.samples[indices[0]].image.width;
    Batch b;
    b.images = Tensor({B, 3, H, W});
    b.masks = Tensor({B, 1, H, W});
    for (int i = 0; i < B; ++i) {
        const Sample& s = ds.samples[indices[static_cast<size_t>(i)]];
        std::copy_n(s.image.pixels.data(), static_cast<int64_t>(3) * H * W,
                    b.images.data() + static_cast<int64_t>(i) * 3 * H * W);
        std::copy_n(s.mask.values.data(), static_cast<int64_t>(H) * W,
                    b.masks.data() + static_cast<int64_t>(i) * H * W);
        b.ids.push_back(s.id);
    }
    return b;
}

// The batch order is a pure function of (seed, phase, step): each epoch's
// permutation is regenerated from a derived seed, so a resumed run needs only
// the step counter to see the same data order.
inline std::vector<size_t> batch_indices(uint64_t seed, Phase phase, int64_t step, size_t n,
                                         int batch_size) {
    auto epoch_perm = [&](int64_t epoch) {
        uint64_t bytes[3] = {seed, static_cast<uint64_t>(phase), static_cast<uint64_t>(epoch)};
        Rng rng(fnv1a64(bytes, sizeof(bytes)));
        std::vector<size_t> perm(n);
        for (size_t i = 0; i < n; ++i) perm[i] = i;
        rng.shuffle(perm);
        return perm;
    };
    std::vector<size_t> out;
    int64_t cached_epoch = -1;
    std::vector<size_t> perm;
    for (int j = 0; j < batch_size; ++j) {
        int64_t pos = step * batch_size + j;
        int64_t epoch = pos / static_cast<int64_t>(n);
        if (epoch != cached_epoch) {
            perm = epoch_perm(epoch);
            cached_epoch = epoch;
        }
        out.push_back(perm[static_cast<size_t>(pos % static_cast<int64_t>(n))]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Step losses
// ---------------------------------------------------------------------------

struct StepLosses {
    static constexpr double unset = std::numeric_limits<double>::quiet_NaN();
    double l_phi = unset;
    double l_edge = unset;
    double l_edge_combined = unset;
    double l_feature_edge = unset;
    double l_pix = unset;
    double l_vgg = unset;
    double l_rm = unset;
    double l_total = unset;
    double adv_g = unset;
    double critic_global = unset;
    double critic_local = unset;
    double objective = unset;  // what the phase optimizer minimized
};

inline std::string join_ids(const std::vector<std::string>& ids) {
    std::string s;
    for (const auto& id : ids) {
        if (!s.empty()) s += ",";
        s += id;
    }
    return s;
}

inline void check_loss_finite(double v, const char* what, const Batch& batch, int64_t step) {
    if (!std::isfinite(v))
        throw NumericError(std::string(what) + " is not finite at step " + std::to_string(step) +
                           "; batch ids: [" + join_ids(batch.ids) + "]");
}

// Re-throws numeric failures from inside a step with the offending batch ids
// attached.
template <typename F>
auto with_batch_context(const Batch& batch, int64_t step, F&& f) {
    try {
        return f();
    } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at step " + std::to_string(step) +
                           "; batch ids: [" + join_ids(batch.ids) + "]");
    }
}

// ---------------------------------------------------------------------------
// Training steps
// ---------------------------------------------------------------------------

// One RMSProp step on edge_combined(L_phi, L_edge) + L_pix (+ the optional
// feature-edge term).
inline StepLosses pretrain_step(TrainState& st, const Batch& batch) {
    if (st.phase != Phase::Pretrain)
        throw ArgumentError("pretrain_step called outside the pretrain phase");
    auto params = st.gen->params();
    zero_grad(params);
    auto fw = with_batch_context(batch, st.global_step, [&] {
        return st.gen->forward(batch.images, batch.masks, true, st.rng);
    });
    NodePtr gt = constant(batch.images);

    NodePtr l_phi = latent_loss(fw.taps_a.deep, fw.taps_b.deep);
    NodePtr l_edge = edge_loss(gt, fw.pred);
    NodePtr l_ec = edge_combined(l_phi, l_edge, st.cfg.loss);
    NodePtr l_pix = pixel_loss(gt, fw.pred, st.cfg.loss);
    NodePtr obj = add(l_ec, l_pix);
    StepLosses out;
    if (st.cfg.loss.feature_edge > 0.0) {
        NodePtr l_fe = feature_edge_loss(fw.taps_a.tap3, fw.taps_b.tap3,
                                         st.cfg.feature_edge_symmetric);
        out.l_feature_edge = l_fe->value[0];
        obj = add(obj, smul(l_fe, st.cfg.loss.feature_edge));
    }

    out.l_phi = l_phi->value[0];
    out.l_edge = l_edge->value[0];
    out.l_edge_combined = l_ec->value[0];
    out.l_pix = l_pix->value[0];
    out.objective = obj->value[0];
    check_loss_finite(out.objective, "pretrain loss", batch, st.global_step);

    backward(obj);
    st.pretrain_opt.step(params);
    ++st.phase_step;
    ++st.global_step;
    st.push_loss(out.objective);
    return out;
}

namespace detail {

// Per-sample local patch boxes; samples without holes are skipped (the local
// critic has nothing to criticize there).
inline std::vector<std::pair<int, PatchBox>> batch_patch_boxes(const Batch& batch) {
    int H = batch.images.dim(2), W = batch.images.dim(3);
    std::vector<std::pair<int, PatchBox>> boxes;
    for (int n = 0; n < batch.size(); ++n) {
        BinaryMask m(H, W);
        std::copy_n(batch.masks.data() + static_cast<int64_t>(n) * H * W,
                    static_cast<int64_t>(H) * W, m.values.data());
        try {
            boxes.emplace_back(n, hole_patch_box(m));
        } catch (const NoHoleError&) {
        }
    }
    return boxes;
}

inline NodePtr gather_patches(const NodePtr& batch,
                              const std::vector<std::pair<int, PatchBox>>& boxes, int res) {
    std::vector<NodePtr> items;
    for (const auto& [n, box] : boxes)
        items.push_back(
            bilinear_resize(crop_sample(batch, n, box.r0, box.c0, box.side, box.side), res, res));
    return concat_batch(items);
}

// One critic update against fixed real/fake tensors; returns the Wasserstein
// estimate mean(real) - mean(fake) after the update was computed.
inline double critic_update(Critic& critic, Adam& opt, const CriticConfig& ccfg,
                            const Tensor& real, const Tensor& fake, Rng& rng) {
    auto params = critic.params();
    zero_grad(params);
    NodePtr real_scores = critic.forward(constant(real));
    NodePtr fake_scores = critic.forward(constant(fake));
    NodePtr wgan = wgan_critic_loss(real_scores, fake_scores);
    // Critic maximizes the estimate; minimize its negation.
    NodePtr loss = smul(wgan, -1.0);
    backward(loss);
    if (ccfg.mode == LipschitzMode::GradientPenalty) {
        auto gp = gradient_penalty(critic, real, fake, ccfg.gp_gamma, rng);
        accumulate_gp_param_grads(critic, gp, ccfg.gp_gamma);
    }
    opt.step(params);
    if (ccfg.mode == LipschitzMode::WeightClip) critic.clip_weights(ccfg.clip_c);
    return wgan->value[0];
}

}  // namespace detail

// n_critic critic updates (global on full images, local on hole patches, fed
// with composed outputs) followed by one generator update minimizing
// L_T + the generator adversarial term.
inline StepLosses adversarial_step(TrainState& st, const Batch& batch) {
    if (st.phase != Phase::Adversarial)
        throw ArgumentError("adversarial_step called outside the adversarial phase");
    StepLosses out;
    const LossWeights& w = st.cfg.loss;

    // Generator forward once; the same graph serves critic fakes (detached)
    // and the generator update (attached).
    auto gparams = st.gen->params();
    zero_grad(gparams);
    auto fw = with_batch_context(batch, st.global_step, [&] {
        return st.gen->forward(batch.images, batch.masks, true, st.rng);
    });
    NodePtr gt = constant(batch.images);
    Tensor rmask(batch.masks.shape());
    for (int64_t i = 0; i < rmask.numel(); ++i) rmask[i] = 1.0 - batch.masks[i];
    NodePtr composed = add(mask_mul(gt, batch.masks), mask_mul(fw.pred, rmask));

    auto boxes = detail::batch_patch_boxes(batch);
    int patch_res = st.cfg.critic.local_patch_resolution;

    // Critic updates use detached copies of the composed output.
    Tensor fake_global = composed->value;
    for (int i = 0; i < st.cfg.n_critic; ++i) {
        out.critic_global = detail::critic_update(*st.critic_global, st.critic_g_opt,
                                                  st.cfg.critic, batch.images, fake_global,
                                                  st.rng);
        if (!boxes.empty()) {
            Tensor real_patches =
                detail::gather_patches(constant(batch.images), boxes, patch_res)->value;
            Tensor fake_patches =
                detail::gather_patches(constant(fake_global), boxes, patch_res)->value;
            out.critic_local = detail::critic_update(*st.critic_local, st.critic_l_opt,
                                                     st.cfg.critic, real_patches, fake_patches,
                                                     st.rng);
        }
    }

    // Generator update: L_T + (-mean Dg(composed) - mean Dl(patches)).
    NodePtr l_vgg = perceptual_loss(gt, fw.pred, st.phi);
    NodePtr l_rm = reverse_mask_loss(gt, composed, batch.masks, st.phi);
    NodePtr l_pix = pixel_loss(gt, fw.pred, w);
    NodePtr l_t = total_loss(l_vgg, l_rm, l_pix, w);

    st.critic_global->set_requires_grad(false);
    st.critic_local->set_requires_grad(false);
    NodePtr adv = smul(mean_all(st.critic_global->forward(composed)), -1.0);
    if (!boxes.empty()) {
        NodePtr patches = detail::gather_patches(composed, boxes, patch_res);
        adv = add(adv, smul(mean_all(st.critic_local->forward(patches)), -1.0));
    }
    NodePtr obj = final_loss(l_t, adv);

    out.l_vgg = l_vgg->value[0];
    out.l_rm = l_rm->value[0];
    out.l_pix = l_pix->value[0];
    out.l_total = l_t->value[0];
    out.adv_g = adv->value[0];
    out.objective = obj->value[0];
    check_loss_finite(out.objective, "adversarial loss", batch, st.global_step);

    backward(obj);
    st.critic_global->set_requires_grad(true);
    st.critic_local->set_requires_grad(true);
    st.gen_opt.step(gparams);
    ++st.phase_step;
    ++st.global_step;
    st.push_loss(out.objective);
    return out;
}

// Generator-only refinement at the decreased rate; the topology is untouched,
// only parameter values move.
inline StepLosses finetune_step(TrainState& st, const Batch& batch) {
    if (st.phase != Phase::Finetune)
        throw ArgumentError("finetune_step called outside the finetune phase");
    const LossWeights& w = st.cfg.loss;
    auto params = st.gen->params();
    zero_grad(params);
    auto fw = with_batch_context(batch, st.global_step, [&] {
        return st.gen->forward(batch.images, batch.masks, true, st.rng);
    });
    NodePtr gt = constant(batch.images);
    Tensor rmask(batch.masks.shape());
    for (int64_t i = 0; i < rmask.numel(); ++i) rmask[i] = 1.0 - batch.masks[i];
    NodePtr composed = add(mask_mul(gt, batch.masks), mask_mul(fw.pred, rmask));

    NodePtr l_vgg = perceptual_loss(gt, fw.pred, st.phi);
    NodePtr l_rm = reverse_mask_loss(gt, composed, batch.masks, st.phi);
    NodePtr l_pix = pixel_loss(gt, fw.pred, w);
    NodePtr obj = total_loss(l_vgg, l_rm, l_pix, w);

    StepLosses out;
    out.l_vgg = l_vgg->value[0];
    out.l_rm = l_rm->value[0];
    out.l_pix = l_pix->value[0];
    out.l_total = obj->value[0];
    out.objective = obj->value[0];
    check_loss_finite(out.objective, "finetune loss", batch, st.global_step);

    backward(obj);
    st.finetune_opt.step(params);
    ++st.phase_step;
    ++st.global_step;
    st.push_loss(out.objective);
    return out;
}

// ---------------------------------------------------------------------------
// Test-time optimization
// ---------------------------------------------------------------------------

struct TtoptStats {
    double initial_objective = 0.0;
    double final_objective = 0.0;
    int accepted_steps = 0;
    double max_abs_perturbation = 0.0;  // across every iteration, not just the last
};

// Optimizes an additive input perturbation minimizing
// tt_contextual·L_c + tt_perceptual·L_vgg with the network frozen.
// Out-of-range perturbation coordinates are resampled uniformly in [-1,1]
// (stochastic clipping); a monotone accept rule guarantees the final
// objective never exceeds the initial one. Returns the composed completion.
inline Image test_time_optimize(TrainState& st, const Image& observed, const BinaryMask& mask,
                                int iters, Rng& rng, TtoptStats* stats = nullptr) {
    if (iters <= 0) throw ArgumentError("test_time_optimize requires iters > 0");
    check_pair(observed, mask, "test_time_optimize");
    if (hole_ratio(mask) == 0.0) throw NoHoleError("test_time_optimize needs a hole to fill");

    Tensor y = image_to_nchw(observed);
    Tensor m = mask_to_nchw(mask);
    Tensor rm(m.shape());
    for (int64_t i = 0; i < m.numel(); ++i) rm[i] = 1.0 - m[i];

    st.gen->set_requires_grad(false);
    Rng dropout_rng(0);  // inference mode; never consulted

    Tensor delta(y.shape());
    Tensor pred_value;
    Tensor grad;
    auto evaluate = [&](const Tensor& d, Tensor* grad_out, Tensor* pred_out) {
        NodePtr dn = leaf(d, true);
        NodePtr input = add(constant(y), dn);
        auto fw = st.gen->forward_node(input, m, false, dropout_rng);
        NodePtr y_const = constant(y);
        NodePtr composed = add(mask_mul(y_const, m), mask_mul(fw.pred, rm));
        NodePtr ctx = contextual_loss(y_const, fw.pred, m, st.phi);
        NodePtr per = perceptual_loss(y_const, composed, st.phi);
        NodePtr obj = add(smul(ctx, st.cfg.loss.tt_contextual),
                          smul(per, st.cfg.loss.tt_perceptual));
        if (grad_out) {
            backward(obj);
            *grad_out = dn->grad;
        }
        if (pred_out) *pred_out = fw.pred->value;
        return obj->value[0];
    };

    double current = evaluate(delta, &grad, &pred_value);
    TtoptStats local_stats;
    local_stats.initial_objective = current;
    double lr = st.cfg.ttopt_lr;
    for (int it = 0; it < iters; ++it) {
        Tensor proposal(delta.shape());
        for (int64_t i = 0; i < delta.numel(); ++i) {
            double v = delta[i] - lr * grad[i];
            if (v < -1.0 || v > 1.0) v = rng.uniform(-1.0, 1.0);
            proposal[i] = v;
        }
        local_stats.max_abs_perturbation =
            std::max(local_stats.max_abs_perturbation, proposal.abs_max());
        Tensor new_grad, new_pred;
        double proposed = evaluate(proposal, &new_grad, &new_pred);
        if (proposed <= current) {
            delta = std::move(proposal);
            grad = std::move(new_grad);
            pred_value = std::move(new_pred);
            current = proposed;
            ++local_stats.accepted_steps;
        } else {
            lr *= 0.5;
        }
    }
    st.gen->set_requires_grad(true);
    local_stats.final_objective = current;
    if (stats) *stats = local_stats;

    return compose(observed, nchw_to_image(pred_value), mask);
}

// ---------------------------------------------------------------------------
// Loss CSV log
// ---------------------------------------------------------------------------

class LossLogger {
public:
    LossLogger(const std::string& path, uint64_t seed) : out_(path) {
        if (!out_) throw IoError("cannot write loss log " + path);
        out_ << "# seed=" << seed << "\n";
        out_ << "step,phase,l_phi,l_edge,l_edge_combined,l_feature_edge,l_pix,l_vgg,l_rm,"
                "l_total,adv_g,critic_global,critic_local,objective\n";
    }

    void log(int64_t step, Phase phase, const StepLosses& l) {
        out_ << step << "," << phase_name(phase);
        for (double v : {l.l_phi, l.l_edge, l.l_edge_combined, l.l_feature_edge, l.l_pix, l.l_vgg,
                         l.l_rm, l.l_total, l.adv_g, l.critic_global, l.critic_local, l.objective})
            out_ << "," << fmt(v);
        out_ << "\n";
        out_.flush();
    }

private:
    static std::string fmt(double v) {
        if (!std::isfinite(v)) return "";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return buf;
    }
    std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

namespace detail {

inline void write_named_tensors(ByteWriter& w, TrainState& st) {
    std::vector<std::pair<std::string, const Tensor*>> entries;
    for (auto& p : st.gen->params()) entries.emplace_back(p.name, &p.node->value);
    for (auto& s : st.gen->state_tensors()) entries.emplace_back(s.name, s.tensor);
    for (auto& p : st.critic_global->params()) entries.emplace_back(p.name, &p.node->value);
    for (auto& p : st.critic_local->params()) entries.emplace_back(p.name, &p.node->value);
    w.u32(static_cast<uint32_t>(entries.size()));
    for (auto& [name, t] : entries) {
        w.str(name);
        w.tensor(*t);
    }
}

inline void read_named_tensors(ByteReader& r, TrainState& st) {
    std::vector<std::pair<std::string, Tensor*>> entries;
    for (auto& p : st.gen->params()) entries.emplace_back(p.name, &p.node->value);
    auto states = st.gen->state_tensors();
    for (auto& s : states) entries.emplace_back(s.name, s.tensor);
    for (auto& p : st.critic_global->params()) entries.emplace_back(p.name, &p.node->value);
    for (auto& p : st.critic_local->params()) entries.emplace_back(p.name, &p.node->value);
    uint32_t count = r.u32();
    if (count != entries.size())
        throw IntegrityError("checkpoint tensor count mismatch: " + std::to_string(count) +
                             " vs " + std::to_string(entries.size()));
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        Tensor t = r.tensor();
        if (name != entries[i].first)
            throw IntegrityError("checkpoint tensor order mismatch at " + name);
        if (!t.same_shape(*entries[i].second))
            throw IntegrityError("checkpoint tensor shape mismatch at " + name);
        *entries[i].second = std::move(t);
    }
}

inline void write_buffers(ByteWriter& w, std::vector<Tensor>& bufs) {
    w.u32(static_cast<uint32_t>(bufs.size()));
    for (auto& t : bufs) w.tensor(t);
}

inline void read_buffers(ByteReader& r, std::vector<Tensor>& bufs) {
    bufs.clear();
    uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; ++i) bufs.push_back(r.tensor());
}

inline void write_adam(ByteWriter& w, Adam& a) {
    w.i64(a.step_count());
    write_buffers(w, a.first_moments());
    write_buffers(w, a.second_moments());
}

inline void read_adam(ByteReader& r, Adam& a) {
    a.step_count() = r.i64();
    read_buffers(r, a.first_moments());
    read_buffers(r, a.second_moments());
}

}  // namespace detail

inline void save_checkpoint(TrainState& st, const std::string& path) {
    ByteWriter w;
    w.str(st.cfg.to_json().dump());
    w.u32(static_cast<uint32_t>(st.phase));
    w.i64(st.phase_step);
    w.i64(st.global_step);
    w.str(st.rng.save_state());
    w.str(st.phi.current_param_hash());
    detail::write_named_tensors(w, st);
    detail::write_buffers(w, st.pretrain_opt.buffers());
    detail::write_adam(w, st.gen_opt);
    detail::write_adam(w, st.critic_g_opt);
    detail::write_adam(w, st.critic_l_opt);
    detail::write_adam(w, st.finetune_opt);
    w.u32(static_cast<uint32_t>(st.loss_history.size()));
    for (double v : st.loss_history) w.f64(v);
    w.u64(st.loss_history_next);
    w.write_file(path);
}

inline TrainState load_checkpoint(const std::string& path) {
    ByteReader r(path);
    RunConfig cfg = RunConfig::from_json(json::parse(r.str()));
    TrainState st = TrainState::init(cfg);
    uint32_t phase_tag = r.u32();
    if (phase_tag < 1 || phase_tag > 3)
        throw IntegrityError("checkpoint has invalid phase tag " + std::to_string(phase_tag));
    st.phase = static_cast<Phase>(phase_tag);
    st.phase_step = r.i64();
    st.global_step = r.i64();
    st.rng.load_state(r.str());
    std::string phi_hash = r.str();
    if (phi_hash != st.phi.current_param_hash())
        throw IntegrityError("checkpoint was trained with a different feature extractor (" +
                             phi_hash + " vs " + st.phi.current_param_hash() + ")");
    detail::read_named_tensors(r, st);
    detail::read_buffers(r, st.pretrain_opt.buffers());
    detail::read_adam(r, st.gen_opt);
    detail::read_adam(r, st.critic_g_opt);
    detail::read_adam(r, st.critic_l_opt);
    detail::read_adam(r, st.finetune_opt);
    uint32_t hist = r.u32();
    st.loss_history.clear();
    for (uint32_t i = 0; i < hist; ++i) st.loss_history.push_back(r.f64());
    st.loss_history_next = r.u64();
    return st;
}

// ---------------------------------------------------------------------------
// Phase runners
// ---------------------------------------------------------------------------

namespace detail {

inline void maybe_checkpoint(TrainState& st) {
    if (st.cfg.checkpoint_every <= 0 || st.global_step % st.cfg.checkpoint_every != 0) return;
    std::filesystem::create_directories(st.cfg.out_dir);
    save_checkpoint(st, st.cfg.out_dir + "/ckpt_" + std::to_string(st.global_step) + ".ckpt");
}

}  // namespace detail

inline int64_t adversarial_step_count(const RunConfig& cfg, size_t dataset_size) {
    if (cfg.adversarial_steps > 0) return cfg.adversarial_steps;
    int64_t per_epoch = (static_cast<int64_t>(dataset_size) + cfg.batch_size - 1) / cfg.batch_size;
    return cfg.adversarial_epochs * per_epoch;
}

inline void run_pretrain(TrainState& st, const Dataset& ds, LossLogger* log = nullptr) {
    if (st.phase != Phase::Pretrain) throw ArgumentError("state is past the pretrain phase");
    while (st.phase_step < st.cfg.pretrain_steps) {
        Batch b = make_batch(ds, batch_indices(st.cfg.seed, st.phase, st.phase_step, ds.size(),
                                               st.cfg.batch_size));
        StepLosses l = pretrain_step(st, b);
        if (log) log->log(st.global_step, Phase::Pretrain, l);
        detail::maybe_checkpoint(st);
    }
    st.phase = Phase::Adversarial;
    st.phase_step = 0;
}

inline void run_adversarial(TrainState& st, const Dataset& ds, LossLogger* log = nullptr) {
    if (st.phase == Phase::Pretrain) {
        // Invoking the adversarial phase declares pretraining complete.
        st.phase = Phase::Adversarial;
        st.phase_step = 0;
    }
    if (st.phase != Phase::Adversarial) throw ArgumentError("state is past the adversarial phase");
    int64_t steps = adversarial_step_count(st.cfg, ds.size());
    while (st.phase_step < steps) {
        Batch b = make_batch(ds, batch_indices(st.cfg.seed, st.phase, st.phase_step, ds.size(),
                                               st.cfg.batch_size));
        StepLosses l = adversarial_step(st, b);
        if (log) log->log(st.global_step, Phase::Adversarial, l);
        detail::maybe_checkpoint(st);
    }
    st.phase = Phase::Finetune;
    st.phase_step = 0;
}

inline void run_finetune(TrainState& st, const Dataset& ds, LossLogger* log = nullptr) {
    if (st.phase == Phase::Adversarial) {
        st.phase = Phase::Finetune;
        st.phase_step = 0;
    }
    if (st.phase != Phase::Finetune) throw ArgumentError("state is not in the finetune phase");
    while (st.phase_step < st.cfg.finetune_steps) {
        Batch b = make_batch(ds, batch_indices(st.cfg.seed, st.phase, st.phase_step, ds.size(),
                                               st.cfg.batch_size));
        StepLosses l = finetune_step(st, b);
        if (log) log->log(st.global_step, Phase::Finetune, l);
        detail::maybe_checkpoint(st);
    }
}

}  // namespace vlink
