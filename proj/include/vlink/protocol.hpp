#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "vlink/metrics.hpp"
#include "vlink/trainer.hpp"

namespace vlink {

// ---------------------------------------------------------------------------
// Hole-ratio buckets
// ---------------------------------------------------------------------------

struct MaskBucket {
    std::string name;
    double ratio_low = 0.0;
    double ratio_high = 1.0;
    // Containment is half-open [low, high) except for the bucket(s) whose
    // high bound tops the set, which are closed.
    bool closed_high = false;

    bool contains(double r) const {
        return r >= ratio_low && (closed_high ? r <= ratio_high : r < ratio_high);
    }

    void validate() const {
        if (!(ratio_low >= 0.0 && ratio_low < ratio_high && ratio_high <= 1.0))
            throw ConfigError("bucket " + name + " needs 0 <= low < high <= 1");
    }
};

inline std::vector<MaskBucket> default_buckets() {
    std::vector<MaskBucket> b = {
        {"MaskDataset1", 0.01, 0.6, false}, {"MaskDataset2", 0.01, 0.1, false},
        {"MaskDataset3", 0.1, 0.3, false},  {"MaskDataset4", 0.3, 0.4, false},
        {"MaskDataset5", 0.5, 0.6, false},  {"MaskDataset6", 0.1, 0.4, false},
    };
    double top = 0.0;
    for (const auto& bk : b) top = std::max(top, bk.ratio_high);
    for (auto& bk : b) bk.closed_high = bk.ratio_high == top;
    return b;
}

inline const MaskBucket& find_bucket(const std::vector<MaskBucket>& buckets,
                                     const std::string& name) {
    for (const auto& b : buckets)
        if (b.name == name) return b;
    throw ArgumentError("unknown bucket " + name);
}

// All bucket names containing the ratio; empty means unbucketed.
inline std::vector<std::string> bucket_of(double ratio, const std::vector<MaskBucket>& buckets) {
    std::vector<std::string> out;
    for (const auto& b : buckets)
        if (b.contains(ratio)) out.push_back(b.name);
    return out;
}

inline std::vector<std::string> bucket_of(const BinaryMask& mask,
                                          const std::vector<MaskBucket>& buckets) {
    return bucket_of(hole_ratio(mask), buckets);
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

struct ManifestRow {
    std::string image_id;
    std::string mask_id;
    std::string bucket;
    double hole_ratio = 0.0;
};

struct ProtocolManifest {
    uint64_t seed = 0;
    std::vector<ManifestRow> rows;
};

struct MaskEntry {
    std::string id;
    double hole_ratio = 0.0;
};

inline constexpr const char* kManifestHeader = "image_id,mask_id,bucket,hole_ratio";

// Deterministic pairing: the bucket's masks (sorted by id) are shuffled by
// the seeded generator and assigned round-robin to the sorted image list.
// Masks repeat when images outnumber masks.
inline ProtocolManifest build_manifest(std::vector<std::string> image_ids,
                                       std::vector<MaskEntry> mask_inventory,
                                       const MaskBucket& bucket, uint64_t seed) {
    if (image_ids.empty()) throw ArgumentError("build_manifest: empty image list");
    bucket.validate();
    std::vector<MaskEntry> pool;
    for (const auto& m : mask_inventory)
        if (bucket.contains(m.hole_ratio)) pool.push_back(m);
    if (pool.empty())
        throw ArgumentError("build_manifest: no masks fall in bucket " + bucket.name);
    std::sort(image_ids.begin(), image_ids.end());
    std::sort(pool.begin(), pool.end(),
              [](const MaskEntry& a, const MaskEntry& b) { return a.id < b.id; });
    Rng rng(seed);
    rng.shuffle(pool);

    ProtocolManifest manifest;
    manifest.seed = seed;
    for (size_t i = 0; i < image_ids.size(); ++i) {
        const MaskEntry& m = pool[i % pool.size()];
        manifest.rows.push_back({image_ids[i], m.id, bucket.name, m.hole_ratio});
    }
    return manifest;
}

inline void write_manifest(const ProtocolManifest& manifest, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path);
    out << "# seed=" << manifest.seed << "\n";
    out << kManifestHeader << "\n";
    char buf[64];
    for (const auto& r : manifest.rows) {
        std::snprintf(buf, sizeof(buf), "%.10f", r.hole_ratio);
        out << r.image_id << "," << r.mask_id << "," << r.bucket << "," << buf << "\n";
    }
}

inline void validate_manifest(const ProtocolManifest& manifest,
                              const std::vector<MaskBucket>& buckets) {
    std::set<std::string> seen_images;
    for (size_t i = 0; i < manifest.rows.size(); ++i) {
        const auto& r = manifest.rows[i];
        if (!seen_images.insert(r.image_id).second)
            throw ValidationError("manifest row " + std::to_string(i + 1) + ": image " +
                                  r.image_id + " appears more than once");
        const MaskBucket& b = find_bucket(buckets, r.bucket);
        if (!b.contains(r.hole_ratio))
            throw ValidationError("manifest row " + std::to_string(i + 1) + ": hole_ratio " +
                                  std::to_string(r.hole_ratio) + " outside bucket " + r.bucket);
    }
}

inline ProtocolManifest load_manifest(const std::string& path,
                                      const std::vector<MaskBucket>& buckets = default_buckets()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path);
    ProtocolManifest manifest;
    std::string line;
    int lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto pos = line.find("seed=");
            if (pos != std::string::npos) {
                try {
                    manifest.seed = std::stoull(line.substr(pos + 5));
                } catch (const std::exception&) {
                    throw ParseError("manifest " + path + " line " + std::to_string(lineno) +
                                     ": bad seed comment");
                }
            }
            continue;
        }
        if (!header_seen) {
            if (line != kManifestHeader)
                throw ParseError("manifest " + path + " line " + std::to_string(lineno) +
                                 ": expected header '" + kManifestHeader + "', got '" + line + "'");
            header_seen = true;
            continue;
        }
        ManifestRow row;
        size_t p0 = line.find(',');
        size_t p1 = p0 == std::string::npos ? p0 : line.find(',', p0 + 1);
        size_t p2 = p1 == std::string::npos ? p1 : line.find(',', p1 + 1);
        if (p0 == std::string::npos || p1 == std::string::npos || p2 == std::string::npos ||
            line.find(',', p2 + 1) != std::string::npos)
            throw ParseError("manifest " + path + " line " + std::to_string(lineno) +
                             ": expected 4 comma-separated fields");
        row.image_id = line.substr(0, p0);
        row.mask_id = line.substr(p0 + 1, p1 - p0 - 1);
        row.bucket = line.substr(p1 + 1, p2 - p1 - 1);
        try {
            size_t used = 0;
            std::string ratio = line.substr(p2 + 1);
            row.hole_ratio = std::stod(ratio, &used);
            if (used != ratio.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw ParseError("manifest " + path + " line " + std::to_string(lineno) +
                             ": bad hole_ratio field");
        }
        manifest.rows.push_back(std::move(row));
    }
    if (!header_seen) throw ParseError("manifest " + path + ": missing header row");
    validate_manifest(manifest, buckets);
    return manifest;
}

// ---------------------------------------------------------------------------
// Manifest-driven evaluation
// ---------------------------------------------------------------------------

enum class EvalModel {
    Checkpoint,  // run the generator (optionally with test-time optimization)
    Oracle,      // pred := gt, the perfect-model bound
    ZeroFill,    // pred := hole-fill value everywhere
};

struct EvaluateOptions {
    std::string images_dir;
    std::string masks_dir;
    MaskPolarity polarity = MaskPolarity::WhiteHole;
    int resolution = 64;
    EvalModel model = EvalModel::Checkpoint;
    bool use_ttopt = false;
    int ttopt_iters = 50;
    uint64_t ttopt_seed = 0;
    bool strict = false;      // abort on the first bad row instead of collecting
    bool hole_only = false;   // restrict MAE/PSNR to hole pixels, SSIM to the hole box
};

namespace detail {

struct PairAccum {
    MetricAggregate agg;
    std::vector<std::vector<double>> real_feats;
    std::vector<std::vector<double>> fake_feats;

    void add(double m, double p, double s) {
        agg.mae += m;
        agg.psnr += p;
        agg.ssim += s;
        ++agg.count;
    }

    MetricAggregate finish(const FeatureExtractor& phi) {
        MetricAggregate out = agg;
        if (out.count > 0) {
            out.mae /= out.count;
            out.psnr /= out.count;
            out.ssim /= out.count;
        }
        out.fid = real_feats.size() >= 2 ? fid(real_feats, fake_feats)
                                         : std::numeric_limits<double>::quiet_NaN();
        (void)phi;
        return out;
    }
};

inline double hole_mae(const Image& gt, const Image& pred, const BinaryMask& m) {
    double acc = 0.0;
    int64_t n = 0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < gt.height; ++y)
            for (int x = 0; x < gt.width; ++x)
                if (m.at(y, x) == 0.0) {
                    acc += std::abs(to_8bit(gt.at(c, y, x)) - to_8bit(pred.at(c, y, x)));
                    ++n;
                }
    return n ? acc / static_cast<double>(n) : 0.0;
}

inline double hole_psnr(const Image& gt, const Image& pred, const BinaryMask& m) {
    double acc = 0.0;
    int64_t n = 0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < gt.height; ++y)
            for (int x = 0; x < gt.width; ++x)
                if (m.at(y, x) == 0.0) {
                    double d = to_8bit(gt.at(c, y, x)) - to_8bit(pred.at(c, y, x));
                    acc += d * d;
                    ++n;
                }
    if (n == 0 || acc == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / (acc / static_cast<double>(n))));
}

}  // namespace detail

// Runs every manifest row through the model, composes the result into the
// holes, and aggregates MAE/PSNR/SSIM/FID per bucket and overall. Missing or
// inconsistent rows are itemized in `errors` and skipped unless `strict`.
inline MetricReport evaluate_manifest(const ProtocolManifest& manifest, TrainState& state,
                                      const EvaluateOptions& opt,
                                      std::vector<std::string>* errors = nullptr) {
    namespace fs = std::filesystem;
    detail::PairAccum overall;
    std::map<std::string, detail::PairAccum> per_bucket;
    Rng ttopt_rng(opt.ttopt_seed);

    for (size_t i = 0; i < manifest.rows.size(); ++i) {
        const auto& row = manifest.rows[i];
        auto fail = [&](const std::string& msg) {
            std::string full = "row " + std::to_string(i + 1) + " (" + row.image_id + "): " + msg;
            if (opt.strict) throw ValidationError(full);
            if (errors) errors->push_back(full);
        };
        fs::path img_path = fs::path(opt.images_dir) / (row.image_id + ".png");
        fs::path mask_path = fs::path(opt.masks_dir) / (row.mask_id + ".png");
        if (!fs::exists(img_path)) {
            fail("missing image file " + img_path.string());
            continue;
        }
        if (!fs::exists(mask_path)) {
            fail("missing mask file " + mask_path.string());
            continue;
        }
        Image gt_full = load_image(img_path.string());
        BinaryMask mask_full = load_mask(mask_path.string(), opt.polarity);
        double recomputed = hole_ratio(mask_full);
        if (std::abs(recomputed - row.hole_ratio) > 1e-9) {
            fail("mask file hole_ratio " + std::to_string(recomputed) +
                 " drifted from manifest value " + std::to_string(row.hole_ratio));
            continue;
        }
        Image gt = resize_image(gt_full, opt.resolution, opt.resolution);
        BinaryMask mask = resize_mask(mask_full, opt.resolution, opt.resolution);

        Image pred;
        switch (opt.model) {
            case EvalModel::Oracle: pred = gt; break;
            case EvalModel::ZeroFill: {
                pred = Image(opt.resolution, opt.resolution);
                pred.pixels.fill(kHoleFill);
                break;
            }
            case EvalModel::Checkpoint: {
                if (opt.use_ttopt && hole_ratio(mask) > 0.0) {
                    Image observed = apply_mask(gt, mask);
                    pred = test_time_optimize(state, observed, mask, opt.ttopt_iters, ttopt_rng);
                } else {
                    pred = state.gen->infer(gt, mask);
                }
                break;
            }
        }
        Image composed = compose(gt, pred, mask);

        double m, p, s;
        if (opt.hole_only) {
            m = detail::hole_mae(gt, composed, mask);
            p = detail::hole_psnr(gt, composed, mask);
            if (hole_ratio(mask) > 0.0) {
                PatchBox box = hole_patch_box(mask);
                int side = std::max(box.side, 11);
                box.r0 = std::clamp(box.r0, 0, gt.height - side);
                box.c0 = std::clamp(box.c0, 0, gt.width - side);
                Image gt_crop(side, side), cp_crop(side, side);
                for (int c = 0; c < 3; ++c)
                    for (int y = 0; y < side; ++y)
                        for (int x = 0; x < side; ++x) {
                            gt_crop.at(c, y, x) = gt.at(c, box.r0 + y, box.c0 + x);
                            cp_crop.at(c, y, x) = composed.at(c, box.r0 + y, box.c0 + x);
                        }
                s = ssim(gt_crop, cp_crop);
            } else {
                s = 1.0;
            }
        } else {
            m = mae(gt, composed);
            p = psnr(gt, composed);
            s = ssim(gt, composed);
        }

        auto gt_feats = state.phi.pooled_features(image_to_nchw(gt)).raw();
        auto cp_feats = state.phi.pooled_features(image_to_nchw(composed)).raw();
        overall.add(m, p, s);
        overall.real_feats.push_back(gt_feats);
        overall.fake_feats.push_back(cp_feats);
        auto& bucket_acc = per_bucket[row.bucket];
        bucket_acc.add(m, p, s);
        bucket_acc.real_feats.push_back(gt_feats);
        bucket_acc.fake_feats.push_back(cp_feats);
    }

    MetricReport report;
    report.overall = overall.finish(state.phi);
    for (auto& [name, acc] : per_bucket) report.per_bucket[name] = acc.finish(state.phi);
    report.extractor_hash = state.phi.identity_hash();
    return report;
}

}  // namespace vlink
