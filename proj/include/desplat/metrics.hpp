// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "desplat/image.hpp"

namespace desplat {

// 10*log10(1/MSE) at unit dynamic range; +infinity for identical inputs.
inline double psnr(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("psnr: dimension mismatch");
    double mse = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = double(a.data[i]) - b.data[i];
        mse += d * d;
    }
    mse /= a.data.size();
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

// Gaussian-window SSIM (11x11, sigma 1.5, C1=0.01^2, C2=0.03^2), mean over
// valid window positions, channel-averaged.
inline double ssim(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("ssim: dimension mismatch");
    constexpr int W = 11;
    constexpr int R = W / 2;
    if (a.width < W || a.height < W) throw std::invalid_argument("ssim: image smaller than window");
    double kernel[W];
    double ksum = 0;
    for (int i = 0; i < W; ++i) {
        const double d = i - R;
        kernel[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        ksum += kernel[i];
    }
    for (double& k : kernel) k /= ksum;
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

    double total = 0.0;
    int64_t count = 0;
    for (int c = 0; c < 3; ++c) {
        for (int y = R; y < a.height - R; ++y) {
            for (int x = R; x < a.width - R; ++x) {
                double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
                for (int j = -R; j <= R; ++j) {
                    for (int i = -R; i <= R; ++i) {
                        const double w = kernel[j + R] * kernel[i + R];
                        const double va = a.at(x + i, y + j, c);
                        const double vb = b.at(x + i, y + j, c);
                        mu_a += w * va;
                        mu_b += w * vb;
                        aa += w * va * va;
                        bb += w * vb * vb;
                        ab += w * va * vb;
                    }
                }
                const double var_a = aa - mu_a * mu_a;
                const double var_b = bb - mu_b * mu_b;
                const double cov = ab - mu_a * mu_b;
                total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                         ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                ++count;
            }
        }
    }
    return total / count;
}

struct MaskMetrics {
    double iou = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    bool empty_prediction = false;  // no positive (distractor) predictions
    bool empty_truth = false;
};

// Positive class = distractor = bit 0 in both masks. Pixels outside the
// optional coverage mask are excluded from the tally.
inline MaskMetrics mask_metrics(const BinaryMask& pred, const BinaryMask& gt,
                                const BinaryMask* coverage = nullptr) {
    if (pred.width != gt.width || pred.height != gt.height)
        throw std::invalid_argument("mask_metrics: dimension mismatch");
    if (coverage && (coverage->width != gt.width || coverage->height != gt.height))
        throw std::invalid_argument("mask_metrics: coverage dimension mismatch");
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        if (coverage && !coverage->data[i]) continue;
        const bool p = pred.data[i] == 0;
        const bool g = gt.data[i] == 0;
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
    }
    MaskMetrics m;
    m.empty_prediction = (tp + fp) == 0;
    m.empty_truth = (tp + fn) == 0;
    m.precision = m.empty_prediction ? 1.0 : double(tp) / (tp + fp);
    m.recall = m.empty_truth ? 1.0 : double(tp) / (tp + fn);
    m.iou = (tp + fp + fn) == 0 ? 1.0 : double(tp) / (tp + fp + fn);
    return m;
}

}  // namespace desplat
