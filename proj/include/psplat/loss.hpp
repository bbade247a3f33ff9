#pragma once

#include "psplat/image.hpp"

namespace psplat {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

struct LossResult {
    double loss = 0.0;
    Image d_rendered;
};

// Mean SSIM over pixels and channels; 11x11 Gaussian window (sigma 1.5),
// zero padding at the borders.
double ssim(const Image& a, const Image& b);

double l1_loss(const Image& a, const Image& b);

// (1 - lambda) L1 + lambda (1 - SSIM) / 2, with its gradient w.r.t. `rendered`.
// Throws InvalidArgument on shape mismatch or lambda outside [0,1].
LossResult reconstruction_loss(const Image& rendered, const Image& target, double lambda);

} // namespace psplat
