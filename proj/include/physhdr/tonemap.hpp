#pragma once

#include "physhdr/image.hpp"

namespace physhdr {

/// Compression constant used when none is configured.
inline constexpr double kDefaultMu = 5000.0;

struct ToneCurve {
    enum class Kind { MuLaw, Reinhard };

    Kind kind = Kind::MuLaw;
    double mu = kDefaultMu;

    /// Throws RangeError when mu <= 0.
    static ToneCurve mu_law(double mu = kDefaultMu);
    static ToneCurve reinhard();

    /// Applies the curve to a single value. For mu-law x must lie in [0, 1].
    double operator()(double x) const;
    double derivative(double x) const;
};

/// log(1 + mu x) / log(1 + mu). Undefined outside [0, 1]; callers validate.
double mu_law(double x, double mu);

struct NormalizedRadiance {
    HdrImage image;
    float scale = 1.0f;  ///< original = image * scale
};

/// Divides by the image maximum. An all-zero image is returned as-is with scale 1.
NormalizedRadiance normalize_radiance(const HdrImage& h);

/// Divides by an externally supplied scale (the reference image's maximum).
HdrImage normalize_by(const HdrImage& h, float scale);

/// Elementwise mu-law on a [0, 1] image. Throws RangeError on out-of-range values.
HdrImage mu_law_tonemap(const HdrImage& x, const ToneCurve& curve);

/// Global per-channel x / (1 + x), gamma 1/2.2, quantized to 8 bits.
LdrImage reinhard_display(const HdrImage& h);

} // namespace physhdr
