#include "physhdr/tonemap.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "physhdr/error.hpp"

namespace physhdr {

ToneCurve ToneCurve::mu_law(double mu) {
    if (!(mu > 0.0) || !std::isfinite(mu)) {
        throw RangeError("mu-law constant must be positive, got " + std::to_string(mu));
    }
    return ToneCurve{Kind::MuLaw, mu};
}

ToneCurve ToneCurve::reinhard() { return ToneCurve{Kind::Reinhard, kDefaultMu}; }

double ToneCurve::operator()(double x) const {
    if (kind == Kind::Reinhard) return x / (1.0 + x);
    return physhdr::mu_law(x, mu);
}

double ToneCurve::derivative(double x) const {
    if (kind == Kind::Reinhard) return 1.0 / ((1.0 + x) * (1.0 + x));
    return mu / ((1.0 + mu * x) * std::log1p(mu));
}

double mu_law(double x, double mu) { return std::log1p(mu * x) / std::log1p(mu); }

NormalizedRadiance normalize_radiance(const HdrImage& h) {
    validate(h);
    const float m = max_value(h);
    if (m <= 0.0f) return {h, 1.0f};
    return {normalize_by(h, m), m};
}

HdrImage normalize_by(const HdrImage& h, float scale) {
    if (!(scale > 0.0f)) throw RangeError("normalization scale must be positive");
    HdrImage out = h;
    for (float& v : out.data()) v /= scale;
    return out;
}

HdrImage mu_law_tonemap(const HdrImage& x, const ToneCurve& curve) {
    if (!(curve.mu > 0.0)) throw RangeError("mu-law constant must be positive");
    HdrImage out = x;
    for (float& v : out.data()) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw RangeError("mu-law input outside [0, 1]: " + std::to_string(v));
        }
        v = static_cast<float>(mu_law(v, curve.mu));
    }
    return out;
}

LdrImage reinhard_display(const HdrImage& h) {
    validate(h);
    LdrImage out(h.height(), h.width());
    auto src = h.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double x = src[i];
        const double compressed = std::isinf(x) ? 1.0 : x / (1.0 + x);
        const double encoded = std::pow(compressed, 1.0 / 2.2);
        dst[i] = static_cast<std::uint8_t>(std::clamp(std::lround(255.0 * encoded), 0L, 255L));
    }
    return out;
}

} // namespace physhdr
