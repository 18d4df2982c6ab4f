#pragma once

#include <algorithm>
#include <cmath>

#include "vlink/errors.hpp"
#include "vlink/tensor.hpp"

namespace vlink {

// Hole pixels are filled with the midpoint of the [-1,1] value range, so
// masking is a pure element-wise product.
inline constexpr double kHoleFill = 0.0;

// RGB image stored planar (3,H,W) with values in [-1,1].
struct Image {
    int height = 0;
    int width = 0;
    Tensor pixels;  // (3,H,W)

    Image() = default;
    Image(int h, int w) : height(h), width(w), pixels({3, h, w}) {}
    Image(int h, int w, Tensor px) : height(h), width(w), pixels(std::move(px)) {
        if (pixels.ndim() != 3 || pixels.dim(0) != 3 || pixels.dim(1) != h || pixels.dim(2) != w)
            throw DimensionError("image tensor must be (3,H,W)");
    }

    double& at(int c, int y, int x) { return pixels.at(c, y, x); }
    double at(int c, int y, int x) const { return pixels.at(c, y, x); }
};

// Binary mask, 1 = known/visible pixel, 0 = hole.
struct BinaryMask {
    int height = 0;
    int width = 0;
    Tensor values;  // (H,W), each element exactly 0 or 1

    BinaryMask() = default;
    BinaryMask(int h, int w) : height(h), width(w), values({h, w}) {}
    BinaryMask(int h, int w, Tensor v) : height(h), width(w), values(std::move(v)) {
        if (values.ndim() != 2 || values.dim(0) != h || values.dim(1) != w)
            throw DimensionError("mask tensor must be (H,W)");
    }

    double& at(int y, int x) { return values.at(y, x); }
    double at(int y, int x) const { return values.at(y, x); }
};

inline void check_pair(const Image& img, const BinaryMask& m, const char* where) {
    if (img.height != m.height || img.width != m.width)
        throw DimensionError(std::string(where) + ": image " + std::to_string(img.height) + "x" +
                             std::to_string(img.width) + " vs mask " + std::to_string(m.height) +
                             "x" + std::to_string(m.width));
}

// I ⊙ M broadcast over channels; hole pixels become kHoleFill.
inline Image apply_mask(const Image& img, const BinaryMask& m) {
    check_pair(img, m, "apply_mask");
    Image out(img.height, img.width);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                out.at(c, y, x) = m.at(y, x) != 0.0 ? img.at(c, y, x) : kHoleFill;
    return out;
}

inline BinaryMask reverse_mask(const BinaryMask& m) {
    BinaryMask out(m.height, m.width);
    for (int64_t i = 0; i < m.values.numel(); ++i) out.values[i] = 1.0 - m.values[i];
    return out;
}

inline double hole_ratio(const BinaryMask& m) {
    if (m.values.numel() == 0) throw DimensionError("hole_ratio of empty mask");
    int64_t zeros = 0;
    for (int64_t i = 0; i < m.values.numel(); ++i)
        if (m.values[i] == 0.0) ++zeros;
    return static_cast<double>(zeros) / static_cast<double>(m.values.numel());
}

// I_c = M ⊙ I_gt + (1-M) ⊙ I_pred: known pixels from gt, holes from pred.
inline Image compose(const Image& gt, const Image& pred, const BinaryMask& m) {
    check_pair(gt, m, "compose");
    if (gt.height != pred.height || gt.width != pred.width)
        throw DimensionError("compose: gt vs pred size mismatch");
    Image out(gt.height, gt.width);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < gt.height; ++y)
            for (int x = 0; x < gt.width; ++x)
                out.at(c, y, x) = m.at(y, x) != 0.0 ? gt.at(c, y, x) : pred.at(c, y, x);
    return out;
}

// Image with its cached masked form.
struct MaskedImage {
    Image image;
    BinaryMask mask;
    Image masked;

    MaskedImage() = default;
    MaskedImage(Image img, BinaryMask m)
        : image(std::move(img)), mask(std::move(m)), masked(apply_mask(image, mask)) {}
};

// ---------------------------------------------------------------------------
// Conversions and resizing
// ---------------------------------------------------------------------------

inline Tensor image_to_nchw(const Image& img) {
    return img.pixels.reshaped({1, 3, img.height, img.width});
}

inline Image nchw_to_image(const Tensor& t, int batch_index = 0) {
    if (t.ndim() != 4 || t.dim(1) != 3) throw DimensionError("nchw_to_image expects (N,3,H,W)");
    int H = t.dim(2), W = t.dim(3);
    Image out(H, W);
    int64_t base = static_cast<int64_t>(batch_index) * 3 * H * W;
    std::copy_n(t.data() + base, static_cast<int64_t>(3) * H * W, out.pixels.data());
    return out;
}

inline Tensor mask_to_nchw(const BinaryMask& m) {
    return m.values.reshaped({1, 1, m.height, m.width});
}

// Bilinear image resize (plain, no autodiff); output clamped to [-1,1].
inline Image resize_image(const Image& img, int oh, int ow) {
    if (oh <= 0 || ow <= 0) throw DimensionError("resize target must be positive");
    if (oh == img.height && ow == img.width) return img;
    Image out(oh, ow);
    double sy = static_cast<double>(img.height) / oh, sx = static_cast<double>(img.width) / ow;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < oh; ++y) {
            double ty = std::max(0.0, (y + 0.5) * sy - 0.5);
            int y0 = std::min(static_cast<int>(ty), img.height - 1);
            int y1 = std::min(y0 + 1, img.height - 1);
            double fy = std::min(ty - y0, 1.0);
            for (int x = 0; x < ow; ++x) {
                double tx = std::max(0.0, (x + 0.5) * sx - 0.5);
                int x0 = std::min(static_cast<int>(tx), img.width - 1);
                int x1 = std::min(x0 + 1, img.width - 1);
                double fx = std::min(tx - x0, 1.0);
                double top = img.at(c, y0, x0) + (img.at(c, y0, x1) - img.at(c, y0, x0)) * fx;
                double bot = img.at(c, y1, x0) + (img.at(c, y1, x1) - img.at(c, y1, x0)) * fx;
                out.at(c, y, x) = std::clamp(top + (bot - top) * fy, -1.0, 1.0);
            }
        }
    return out;
}

// Nearest-neighbor mask resize; keeps values in {0,1}.
inline BinaryMask resize_mask(const BinaryMask& m, int oh, int ow) {
    if (oh <= 0 || ow <= 0) throw DimensionError("resize target must be positive");
    if (oh == m.height && ow == m.width) return m;
    BinaryMask out(oh, ow);
    for (int y = 0; y < oh; ++y) {
        int sy = std::min(static_cast<int>((y + 0.5) * m.height / oh), m.height - 1);
        for (int x = 0; x < ow; ++x) {
            int sx = std::min(static_cast<int>((x + 0.5) * m.width / ow), m.width - 1);
            out.at(y, x) = m.at(sy, sx);
        }
    }
    return out;
}

}  // namespace vlink
