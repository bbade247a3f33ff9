#include "psplat/loss.hpp"

#include "psplat/common.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace psplat {

namespace {

std::array<double, kSsimWindow> gaussian_window() {
    std::array<double, kSsimWindow> w{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        w[i] = std::exp(-(d * d) / (2.0 * kSsimSigma * kSsimSigma));
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

const std::array<double, kSsimWindow>& window() {
    static const auto w = gaussian_window();
    return w;
}

// Separable zero-padded "same" filtering of a single plane.
class Filter {
public:
    Filter(int w, int h) : w_(w), h_(h), tmp_(static_cast<std::size_t>(w) * h) {}

    void apply(const std::vector<double>& in, std::vector<double>& out) {
        const auto& g = window();
        constexpr int r = kSsimWindow / 2;
        out.assign(in.size(), 0.0);
        for (int y = 0; y < h_; ++y) {
            const double* row = &in[static_cast<std::size_t>(y) * w_];
            double* dst = &tmp_[static_cast<std::size_t>(y) * w_];
            for (int x = 0; x < w_; ++x) {
                double acc = 0.0;
                const int k0 = std::max(0, r - x), k1 = std::min(kSsimWindow - 1, r + (w_ - 1 - x));
                for (int k = k0; k <= k1; ++k) acc += g[k] * row[x + k - r];
                dst[x] = acc;
            }
        }
        for (int y = 0; y < h_; ++y) {
            const int k0 = std::max(0, r - y), k1 = std::min(kSsimWindow - 1, r + (h_ - 1 - y));
            double* dst = &out[static_cast<std::size_t>(y) * w_];
            for (int k = k0; k <= k1; ++k) {
                const double* src = &tmp_[static_cast<std::size_t>(y + k - r) * w_];
                const double gk = g[k];
                for (int x = 0; x < w_; ++x) dst[x] += gk * src[x];
            }
        }
    }

private:
    int w_, h_;
    std::vector<double> tmp_;
};

// Mean SSIM; optionally writes dSSIM/da into grad (interleaved layout).
double ssim_impl(const Image& a, const Image& b, Image* grad) {
    const int w = a.width, h = a.height;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    Filter filter(w, h);
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    std::vector<double> mx, my, exx, eyy, exy;
    std::vector<double> d_mu(n), d_exx(n), d_exy(n), f_mu, f_exx, f_exy;
    const double norm = 1.0 / (static_cast<double>(n) * 3.0);
    double total = 0.0;

    for (int c = 0; c < 3; ++c) {
        for (std::size_t p = 0; p < n; ++p) {
            x[p] = a.data[p * 3 + c];
            y[p] = b.data[p * 3 + c];
            xx[p] = x[p] * x[p];
            yy[p] = y[p] * y[p];
            xy[p] = x[p] * y[p];
        }
        filter.apply(x, mx);
        filter.apply(y, my);
        filter.apply(xx, exx);
        filter.apply(yy, eyy);
        filter.apply(xy, exy);
        for (std::size_t p = 0; p < n; ++p) {
            const double ux = mx[p], uy = my[p];
            const double a1 = 2.0 * ux * uy + kSsimC1;
            const double a2 = 2.0 * (exy[p] - ux * uy) + kSsimC2;
            const double b1 = ux * ux + uy * uy + kSsimC1;
            const double b2 = (exx[p] - ux * ux) + (eyy[p] - uy * uy) + kSsimC2;
            const double s = (a1 * a2) / (b1 * b2);
            total += s;
            if (grad) {
                d_mu[p] = norm * ((2.0 * uy * a2 - 2.0 * uy * a1) / (b1 * b2) - s * (2.0 * ux / b1 - 2.0 * ux / b2));
                d_exx[p] = norm * (-s / b2);
                d_exy[p] = norm * (2.0 * a1 / (b1 * b2));
            }
        }
        if (grad) {
            filter.apply(d_mu, f_mu);
            filter.apply(d_exx, f_exx);
            filter.apply(d_exy, f_exy);
            for (std::size_t p = 0; p < n; ++p) {
                grad->data[p * 3 + c] = f_mu[p] + 2.0 * x[p] * f_exx[p] + y[p] * f_exy[p];
            }
        }
    }
    return total * norm;
}

void check_shapes(const Image& a, const Image& b) {
    if (!a.same_shape(b) || a.size() != b.size() || a.size() != static_cast<std::size_t>(a.width) * a.height * 3) {
        throw InvalidArgument("image dimensions do not match");
    }
    if (a.size() == 0) throw InvalidArgument("empty image");
}

} // namespace

double ssim(const Image& a, const Image& b) {
    check_shapes(a, b);
    return ssim_impl(a, b, nullptr);
}

double l1_loss(const Image& a, const Image& b) {
    check_shapes(a, b);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a.data[i] - b.data[i]);
    return sum / static_cast<double>(a.size());
}

LossResult reconstruction_loss(const Image& rendered, const Image& target, double lambda) {
    check_shapes(rendered, target);
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("lambda must lie in [0,1]");
    LossResult r;
    r.d_rendered = Image(rendered.width, rendered.height);
    const double inv_n = 1.0 / static_cast<double>(rendered.size());
    double l1 = 0.0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        const double d = rendered.data[i] - target.data[i];
        l1 += std::abs(d);
        r.d_rendered.data[i] = (1.0 - lambda) * inv_n * static_cast<double>((d > 0.0) - (d < 0.0));
    }
    l1 *= inv_n;
    r.loss = (1.0 - lambda) * l1;
    if (lambda > 0.0) {
        Image d_ssim(rendered.width, rendered.height);
        const double s = ssim_impl(rendered, target, &d_ssim);
        r.loss += lambda * 0.5 * (1.0 - s);
        for (std::size_t i = 0; i < rendered.size(); ++i) r.d_rendered.data[i] -= 0.5 * lambda * d_ssim.data[i];
    }
    return r;
}

} // namespace psplat
