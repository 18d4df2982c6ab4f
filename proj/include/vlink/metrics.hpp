#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "vlink/errors.hpp"
#include "vlink/image.hpp"

namespace vlink {

// All metrics operate on the 8-bit [0,255] scale so the magnitudes line up
// with published inpainting tables.
inline double to_8bit(double unit) { return (unit + 1.0) * 127.5; }

inline constexpr double kPsnrCap = 100.0;  // sentinel for vanishing MSE

inline double mae(const Image& gt, const Image& pred) {
    if (gt.height != pred.height || gt.width != pred.width)
        throw DimensionError("mae: image size mismatch");
    double acc = 0.0;
    for (int64_t i = 0; i < gt.pixels.numel(); ++i)
        acc += std::abs(to_8bit(gt.pixels[i]) - to_8bit(pred.pixels[i]));
    return acc / static_cast<double>(gt.pixels.numel());
}

inline double psnr(const Image& gt, const Image& pred) {
    if (gt.height != pred.height || gt.width != pred.width)
        throw DimensionError("psnr: image size mismatch");
    double mse = 0.0;
    for (int64_t i = 0; i < gt.pixels.numel(); ++i) {
        double d = to_8bit(gt.pixels[i]) - to_8bit(pred.pixels[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(gt.pixels.numel());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

namespace detail {

inline std::vector<double> ssim_gaussian_kernel() {
    // 11-tap Gaussian, sigma 1.5, normalized to sum 1.
    std::vector<double> k(11);
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        double d = i - 5;
        k[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += k[static_cast<size_t>(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Separable valid-mode Gaussian filtering of an H x W plane.
inline std::vector<double> gaussian_valid(const std::vector<double>& plane, int H, int W) {
    static const std::vector<double> k = ssim_gaussian_kernel();
    int OH = H - 10, OW = W - 10;
    std::vector<double> rows(static_cast<size_t>(H) * OW, 0.0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < OW; ++x) {
            double acc = 0.0;
            for (int t = 0; t < 11; ++t) acc += k[static_cast<size_t>(t)] * plane[static_cast<size_t>(y) * W + x + t];
            rows[static_cast<size_t>(y) * OW + x] = acc;
        }
    std::vector<double> out(static_cast<size_t>(OH) * OW, 0.0);
    for (int y = 0; y < OH; ++y)
        for (int x = 0; x < OW; ++x) {
            double acc = 0.0;
            for (int t = 0; t < 11; ++t) acc += k[static_cast<size_t>(t)] * rows[static_cast<size_t>(y + t) * OW + x];
            out[static_cast<size_t>(y) * OW + x] = acc;
        }
    return out;
}

}  // namespace detail

// Mean local SSIM with the canonical constants: 11x11 Gaussian window with
// sigma 1.5, C1 = (0.01*255)^2, C2 = (0.03*255)^2, averaged over channels.
inline double ssim(const Image& gt, const Image& pred) {
    if (gt.height != pred.height || gt.width != pred.width)
        throw DimensionError("ssim: image size mismatch");
    int H = gt.height, W = gt.width;
    if (H < 11 || W < 11) throw DimensionError("ssim needs images at least 11x11");
    const double c1 = (0.01 * 255) * (0.01 * 255);
    const double c2 = (0.03 * 255) * (0.03 * 255);
    int OH = H - 10, OW = W - 10;
    size_t plane_n = static_cast<size_t>(H) * W;

    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> x(plane_n), y(plane_n), xx(plane_n), yy(plane_n), xy(plane_n);
        for (int i = 0; i < H * W; ++i) {
            double xv = to_8bit(gt.pixels[static_cast<int64_t>(c) * H * W + i]);
            double yv = to_8bit(pred.pixels[static_cast<int64_t>(c) * H * W + i]);
            x[static_cast<size_t>(i)] = xv;
            y[static_cast<size_t>(i)] = yv;
            xx[static_cast<size_t>(i)] = xv * xv;
            yy[static_cast<size_t>(i)] = yv * yv;
            xy[static_cast<size_t>(i)] = xv * yv;
        }
        auto mx = detail::gaussian_valid(x, H, W);
        auto my = detail::gaussian_valid(y, H, W);
        auto mxx = detail::gaussian_valid(xx, H, W);
        auto myy = detail::gaussian_valid(yy, H, W);
        auto mxy = detail::gaussian_valid(xy, H, W);
        double acc = 0.0;
        for (size_t i = 0; i < mx.size(); ++i) {
            double mu_x = mx[i], mu_y = my[i];
            double var_x = mxx[i] - mu_x * mu_x;
            double var_y = myy[i] - mu_y * mu_y;
            double cov = mxy[i] - mu_x * mu_y;
            acc += ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) /
                   ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2));
        }
        total += acc / static_cast<double>(OH * OW);
    }
    return total / 3.0;
}

// ---------------------------------------------------------------------------
// FID
// ---------------------------------------------------------------------------

// Fréchet distance between Gaussian fits of two feature sets (rows are
// samples). Sample covariance uses the n-1 denominator. A failed matrix
// square root is retried with eps*I regularization on both covariances.
inline double fid(const std::vector<std::vector<double>>& real_features,
                  const std::vector<std::vector<double>>& fake_features) {
    if (real_features.size() < 2 || fake_features.size() < 2)
        throw ArgumentError("fid needs at least 2 samples per set");
    size_t dim = real_features[0].size();
    if (dim == 0 || fake_features[0].size() != dim)
        throw DimensionError("fid feature dimensions disagree");

    auto fit = [dim](const std::vector<std::vector<double>>& rows, Eigen::VectorXd& mu,
                     Eigen::MatrixXd& cov) {
        int n = static_cast<int>(rows.size());
        Eigen::MatrixXd X(n, dim);
        for (int i = 0; i < n; ++i) {
            if (rows[static_cast<size_t>(i)].size() != dim)
                throw DimensionError("fid feature rows have inconsistent dimension");
            for (size_t j = 0; j < dim; ++j) X(i, static_cast<Eigen::Index>(j)) = rows[static_cast<size_t>(i)][j];
        }
        mu = X.colwise().mean();
        Eigen::MatrixXd centered = X.rowwise() - mu.transpose();
        cov = centered.transpose() * centered / static_cast<double>(n - 1);
    };

    Eigen::VectorXd mu_r, mu_f;
    Eigen::MatrixXd cov_r, cov_f;
    fit(real_features, mu_r, cov_r);
    fit(fake_features, mu_f, cov_f);

    auto trace_sqrt_product = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                 bool& ok) -> double {
        // trace((a b)^{1/2}) = trace((a^{1/2} b a^{1/2})^{1/2}) for PSD a, b.
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_a(a);
        if (es_a.info() != Eigen::Success) {
            ok = false;
            return 0.0;
        }
        double scale = std::max(1.0, es_a.eigenvalues().cwiseAbs().maxCoeff());
        Eigen::VectorXd ev = es_a.eigenvalues();
        for (Eigen::Index i = 0; i < ev.size(); ++i) {
            if (ev(i) < -1e-9 * scale) {
                ok = false;
                return 0.0;
            }
            ev(i) = std::sqrt(std::max(ev(i), 0.0));
        }
        Eigen::MatrixXd sqrt_a = es_a.eigenvectors() * ev.asDiagonal() * es_a.eigenvectors().transpose();
        Eigen::MatrixXd inner = sqrt_a * b * sqrt_a;
        inner = 0.5 * (inner + inner.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_m(inner);
        if (es_m.info() != Eigen::Success) {
            ok = false;
            return 0.0;
        }
        double tr = 0.0;
        for (Eigen::Index i = 0; i < es_m.eigenvalues().size(); ++i) {
            double v = es_m.eigenvalues()(i);
            if (v < -1e-9 * std::max(1.0, std::abs(es_m.eigenvalues().cwiseAbs().maxCoeff()))) {
                ok = false;
                return 0.0;
            }
            tr += std::sqrt(std::max(v, 0.0));
        }
        ok = true;
        return tr;
    };

    bool ok = false;
    double tr = trace_sqrt_product(cov_r, cov_f, ok);
    if (!ok) {
        std::cerr << "warning: fid covariance square root needed eps regularization\n";
        Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim),
                                                        static_cast<Eigen::Index>(dim));
        tr = trace_sqrt_product(cov_r + 1e-6 * eye, cov_f + 1e-6 * eye, ok);
        if (!ok) throw NumericError("fid matrix square root failed after regularization");
    }

    double mean_gap = (mu_r - mu_f).squaredNorm();
    double value = mean_gap + cov_r.trace() + cov_f.trace() - 2.0 * tr;
    return std::max(value, 0.0);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct MetricAggregate {
    double mae = 0.0;
    double fid = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    int count = 0;
};

struct MetricReport {
    MetricAggregate overall;
    std::map<std::string, MetricAggregate> per_bucket;
    std::string extractor_hash;  // printed beside FID; substitute-extractor values
                                 // are not comparable across extractors
};

// CSV with Table-style columns: Method,MAE,FID,PSNR,SSIM.
inline std::string report_csv(const MetricReport& r) {
    char buf[256];
    std::string out = "Method,MAE,FID,PSNR,SSIM\n";
    auto row = [&](const std::string& name, const MetricAggregate& a) {
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f\n", name.c_str(), a.mae, a.fid,
                      a.psnr, a.ssim);
        out += buf;
    };
    for (const auto& [name, agg] : r.per_bucket) row(name, agg);
    row("overall", r.overall);
    return out;
}

inline std::string report_table(const MetricReport& r) {
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-16s %10s %10s %10s %8s %6s\n", "Method", "MAE", "FID",
                  "PSNR", "SSIM", "n");
    out += buf;
    auto row = [&](const std::string& name, const MetricAggregate& a) {
        std::snprintf(buf, sizeof(buf), "%-16s %10.4f %10.4f %10.4f %8.4f %6d\n", name.c_str(),
                      a.mae, a.fid, a.psnr, a.ssim, a.count);
        out += buf;
    };
    for (const auto& [name, agg] : r.per_bucket) row(name, agg);
    row("overall", r.overall);
    out += "FID extractor: " + r.extractor_hash + "\n";
    return out;
}

}  // namespace vlink
