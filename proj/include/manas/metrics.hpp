// SPDX-License-Identifier: Apache-2.0
//
// Full-reference image quality metrics: PSNR and a differentiable SSIM
// (11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, unit dynamic
// range, computed per channel and averaged). SSIM is built on the tape so
// it can sit inside training losses; scalar convenience wrappers run it on
// a throwaway tape.

#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "manas/autodiff.hpp"
#include "manas/core.hpp"

namespace manas {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

// 10*log10(peak^2 / MSE); +infinity when the images agree exactly.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
    if (!a.same_shape(b)) throw ConfigError("psnr: shape mismatch " + shape_str(a.shape) +
                                            " vs " + shape_str(b.shape));
    if (peak <= 0) throw ConfigError("psnr: peak must be positive");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

// Normalized 1-channel-per-group Gaussian window stacked C times, shaped
// for a depthwise convolution.
template <typename T>
Tensor<T> ssim_window(int channels) {
    std::vector<double> g(kSsimWindow);
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        double d = i - (kSsimWindow - 1) / 2.0;
        g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += g[static_cast<std::size_t>(i)];
    }
    for (auto& e : g) e /= sum;
    Tensor<T> w({channels, 1, kSsimWindow, kSsimWindow});
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < kSsimWindow; ++y)
            for (int x = 0; x < kSsimWindow; ++x)
                w.at4(c, 0, y, x) = static_cast<T>(g[static_cast<std::size_t>(y)] *
                                                   g[static_cast<std::size_t>(x)]);
    return w;
}

}  // namespace detail

// Mean SSIM between two [C,H,W] maps as a differentiable graph node.
template <typename T>
Var<T> ssim(Var<T> a, Var<T> b) {
    const ShapeVec& s = a.shape();
    if (s.size() != 3 || !(a.val().same_shape(b.val())))
        throw ConfigError("ssim: expects two equal [C,H,W] images");
    if (s[1] < kSsimWindow || s[2] < kSsimWindow)
        throw ConfigError("ssim: image " + shape_str(s) + " smaller than the " +
                          std::to_string(kSsimWindow) + "x" + std::to_string(kSsimWindow) +
                          " window");
    Tape<T>& tape = *a.tape;
    int channels = s[0];
    Var<T> win = tape.value(detail::ssim_window<T>(channels));
    auto blur = [&](Var<T> x) { return conv2d(x, win, 1, 0, channels); };

    const T c1 = static_cast<T>(kSsimK1 * kSsimK1);
    const T c2 = static_cast<T>(kSsimK2 * kSsimK2);

    Var<T> mu_a = blur(a);
    Var<T> mu_b = blur(b);
    Var<T> mu_aa = mul(mu_a, mu_a);
    Var<T> mu_bb = mul(mu_b, mu_b);
    Var<T> mu_ab = mul(mu_a, mu_b);
    Var<T> sig_a = sub(blur(mul(a, a)), mu_aa);
    Var<T> sig_b = sub(blur(mul(b, b)), mu_bb);
    Var<T> sig_ab = sub(blur(mul(a, b)), mu_ab);

    Var<T> num = mul(add_const(scale(mu_ab, T(2)), c1), add_const(scale(sig_ab, T(2)), c2));
    Var<T> den = mul(add_const(add(mu_aa, mu_bb), c1), add_const(add(sig_a, sig_b), c2));
    return mean(divide(num, den));
}

// Scalar SSIM without touching any caller tape.
template <typename T>
double ssim_value(const Tensor<T>& a, const Tensor<T>& b) {
    Tape<T> tape;
    return static_cast<double>(ssim(tape.value(a), tape.value(b)).val()[0]);
}

// Published full-scale results for this architecture family; desk-scale
// runs cannot reach them and reports label them accordingly.
struct ReferenceScores {
    double did_mdn_psnr = 32.60;
    double did_mdn_ssim = 0.922;
    double rain_cityscapes_psnr = 35.19;
    double rain_cityscapes_ssim = 0.984;
};

struct MetricReport {
    struct Row {
        std::string image;
        double psnr_db;
        double ssim;
    };
    std::vector<Row> rows;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    int count = 0;
};

// Scores a list of (name, output, ground truth) triples at unit peak.
template <typename T>
MetricReport score_outputs(const std::vector<std::string>& names,
                           const std::vector<Tensor<T>>& outputs,
                           const std::vector<Tensor<T>>& gts) {
    if (names.size() != outputs.size() || outputs.size() != gts.size())
        throw ConfigError("score_outputs: list length mismatch");
    MetricReport r;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        double p = psnr(outputs[i], gts[i]);
        double s = ssim_value(outputs[i], gts[i]);
        r.rows.push_back({names[i], p, s});
        r.mean_psnr += p;
        r.mean_ssim += s;
    }
    r.count = static_cast<int>(r.rows.size());
    if (r.count > 0) {
        r.mean_psnr /= r.count;
        r.mean_ssim /= r.count;
    }
    return r;
}

void write_metric_csv(const std::string& path, const MetricReport& r);
void write_metric_summary(const std::string& path, const MetricReport& r);

}  // namespace manas
