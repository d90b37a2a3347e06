#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

#include "physhdr/error.hpp"
#include "physhdr/metrics.hpp"

namespace physhdr::metrics {

namespace {

void require_same_dims(const HdrImage& a, const HdrImage& b, const char* what) {
    if (!a.same_dims(b) || a.empty())
        throw ShapeError(std::string(what) + ": image dims differ (" + std::to_string(a.height()) + "x" +
                         std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                         std::to_string(b.width()) + ")");
}

// Row-major single-channel plane.
struct Plane {
    int h = 0, w = 0;
    std::vector<double> v;

    Plane(int h_, int w_) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, 0.0) {}
    double& operator()(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    double operator()(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

Plane luminance_plane(const HdrImage& img) {
    Plane p(img.height(), img.width());
    for (int y = 0; y < p.h; ++y)
        for (int x = 0; x < p.w; ++x) p(y, x) = luminance(img, y, x);
    return p;
}

double plane_max(const Plane& p) { return *std::max_element(p.v.begin(), p.v.end()); }

// Valid-mode separable filtering with a normalized 1-D kernel.
Plane filter_valid(const Plane& in, const std::vector<double>& k) {
    const int n = static_cast<int>(k.size());
    Plane tmp(in.h, in.w - n + 1);
    for (int y = 0; y < tmp.h; ++y)
        for (int x = 0; x < tmp.w; ++x) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += k[i] * in(y, x + i);
            tmp(y, x) = acc;
        }
    Plane out(in.h - n + 1, tmp.w);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += k[i] * tmp(y + i, x);
            out(y, x) = acc;
        }
    return out;
}

std::vector<double> gaussian_kernel(int size, double sigma) {
    std::vector<double> k(size);
    const double c = (size - 1) / 2.0;
    double s = 0.0;
    for (int i = 0; i < size; ++i) s += k[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
    for (double& v : k) v /= s;
    return k;
}

Plane product(const Plane& a, const Plane& b) {
    Plane out(a.h, a.w);
    for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
    return out;
}

Plane downsample2(const Plane& p) {
    Plane out(std::max(1, p.h / 2), std::max(1, p.w / 2));
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            double acc = 0.0;
            int cnt = 0;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const int yy = 2 * y + dy, xx = 2 * x + dx;
                    if (yy < p.h && xx < p.w) {
                        acc += p(yy, xx);
                        ++cnt;
                    }
                }
            out(y, x) = acc / cnt;
        }
    return out;
}

void gradient_features(const Plane& p, std::vector<double>& out) {
    for (int y = 0; y < p.h; ++y)
        for (int x = 0; x + 1 < p.w; ++x) out.push_back(p(y, x + 1) - p(y, x));
    for (int y = 0; y + 1 < p.h; ++y)
        for (int x = 0; x < p.w; ++x) out.push_back(p(y + 1, x) - p(y, x));
}

} // namespace

double psnr_from_mse(double mse) {
    if (!(mse >= 0.0)) throw NumericError("PSNR of a negative or NaN MSE");
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double psnr_mu(const HdrImage& gt, const HdrImage& pred, const ToneCurve& curve) {
    require_same_dims(gt, pred, "psnr_mu");
    validate(gt);
    validate(pred);
    const double peak = max_value(gt);
    const double inv = peak > 0.0 ? 1.0 / peak : 1.0;
    const auto a = gt.data();
    const auto b = pred.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = curve(std::clamp(a[i] * inv, 0.0, 1.0)) - curve(std::clamp(b[i] * inv, 0.0, 1.0));
        acc += d * d;
    }
    return psnr_from_mse(acc / static_cast<double>(a.size()));
}

double ssim_linear(const HdrImage& gt, const HdrImage& pred) {
    require_same_dims(gt, pred, "ssim_linear");
    validate(gt);
    validate(pred);
    const Plane a = luminance_plane(gt);
    const Plane b = luminance_plane(pred);
    const double L = std::max(plane_max(a), plane_max(b));
    if (L <= 0.0) return 1.0;  // both black

    int win = std::min({11, a.h, a.w});
    if (win % 2 == 0) --win;
    const auto k = gaussian_kernel(win, 1.5);
    const Plane mu_a = filter_valid(a, k), mu_b = filter_valid(b, k);
    const Plane aa = filter_valid(product(a, a), k), bb = filter_valid(product(b, b), k),
                ab = filter_valid(product(a, b), k);
    const double c1 = (0.01 * L) * (0.01 * L), c2 = (0.03 * L) * (0.03 * L);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.v.size(); ++i) {
        const double ma = mu_a.v[i], mb = mu_b.v[i];
        const double va = aa.v[i] - ma * ma, vb = bb.v[i] - mb * mb, cov = ab.v[i] - ma * mb;
        acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    return acc / static_cast<double>(mu_a.v.size());
}

double ToyPerceptual::distance(const HdrImage& gt, const HdrImage& pred) const {
    require_same_dims(gt, pred, "perceptual_distance");
    validate(gt);
    validate(pred);
    const double peak = std::max(max_value(gt), max_value(pred));
    if (peak <= 0.0) return 0.0;
    const ToneCurve curve = ToneCurve::mu_law();
    auto tone_plane = [&](const HdrImage& img) {
        Plane p = luminance_plane(img);
        for (double& v : p.v) v = curve(std::clamp(v / peak, 0.0, 1.0));
        return p;
    };
    Plane a = tone_plane(gt), b = tone_plane(pred);
    std::vector<double> fa, fb;
    for (int s = 0; s < scales_; ++s) {
        gradient_features(a, fa);
        gradient_features(b, fb);
        if (s + 1 < scales_) {
            a = downsample2(a);
            b = downsample2(b);
        }
    }
    fa.insert(fa.end(), a.v.begin(), a.v.end());
    fb.insert(fb.end(), b.v.begin(), b.v.end());
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < fa.size(); ++i) {
        diff += (fa[i] - fb[i]) * (fa[i] - fb[i]);
        na += fa[i] * fa[i];
        nb += fb[i] * fb[i];
    }
    if (diff == 0.0) return 0.0;
    return std::sqrt(diff) / (std::sqrt(na) + std::sqrt(nb));
}

namespace {

std::map<std::string, PerceptualFactory>& perceptual_registry() {
    static std::map<std::string, PerceptualFactory> r;
    return r;
}
std::mutex perceptual_mutex;

} // namespace

void register_perceptual(const std::string& id, PerceptualFactory factory) {
    if (id == "toy") throw ConfigError("perceptual provider id 'toy' is reserved");
    std::lock_guard lock(perceptual_mutex);
    perceptual_registry()[id] = std::move(factory);
}

std::unique_ptr<PerceptualProvider> make_perceptual(const std::string& id) {
    if (id == "toy") return std::make_unique<ToyPerceptual>();
    std::lock_guard lock(perceptual_mutex);
    const auto it = perceptual_registry().find(id);
    if (it == perceptual_registry().end()) throw ConfigError("unknown perceptual provider '" + id + "'");
    return it->second();
}

double vdp_stub_quality(const HdrImage& gt, const HdrImage& pred) {
    require_same_dims(gt, pred, "vdp_quality");
    validate(gt);
    validate(pred);
    const double peak = max_value(gt);
    const double inv = peak > 0.0 ? 1.0 / peak : 1.0;
    const auto a = gt.data();
    const auto b = pred.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = (static_cast<double>(a[i]) - b[i]) * inv;
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(a.size());
    return 10.0 - std::clamp(std::log10(1.0 + 1e4 * mse), 0.0, 10.0);
}

double VdpStub::quality(const std::string& id, const HdrImage& gt, const HdrImage& pred) const {
    (void)id;
    return vdp_stub_quality(gt, pred);
}

} // namespace physhdr::metrics
