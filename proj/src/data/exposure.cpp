#include <algorithm>
#include <cmath>
#include <sstream>

#include "physhdr/data.hpp"
#include "physhdr/error.hpp"

namespace physhdr::data {

ExposureParams ExposureParams::parse(const std::string& text) {
    ExposureParams p;
    const auto colon = text.find(':');
    try {
        std::size_t used = 0;
        const std::string a = text.substr(0, colon);
        p.alpha = std::stod(a, &used);
        if (used != a.size()) throw std::invalid_argument(a);
        if (colon != std::string::npos) {
            const std::string b = text.substr(colon + 1);
            p.beta = std::stod(b, &used);
            if (used != b.size()) throw std::invalid_argument(b);
        }
    } catch (const std::exception&) {
        throw ConfigError("malformed exposure '" + text + "', expected alpha[:beta]");
    }
    if (!(p.alpha > 0.0) || !std::isfinite(p.alpha) || !std::isfinite(p.beta)) {
        throw ConfigError("exposure alpha must be positive: '" + text + "'");
    }
    return p;
}

std::string ExposureParams::to_string() const {
    std::ostringstream s;
    s << alpha << ':' << beta;
    return s.str();
}

LdrImage synth_exposure(const LdrImage& ldr, const ExposureParams& params) {
    LdrImage out = ldr;
    for (auto& v : out.data()) {
        const double y = std::round(params.alpha * v + params.beta);
        v = static_cast<std::uint8_t>(std::clamp(y, 0.0, 255.0));
    }
    return out;
}

LdrImage simulate_ldr(const HdrImage& hdr, double exposure, double gamma) {
    if (!(exposure > 0.0) || !(gamma > 0.0)) throw RangeError("exposure and gamma must be positive");
    validate(hdr);
    LdrImage out(hdr.height(), hdr.width());
    auto src = hdr.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double clipped = std::min(exposure * src[i], 1.0);
        const double v = std::round(255.0 * std::pow(clipped, 1.0 / gamma));
        dst[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    return out;
}

namespace {

template <typename T, typename Store>
Image<T> resize_impl(const Image<T>& img, int target_h, int target_w, Store store) {
    if (target_h < 1 || target_w < 1) {
        throw ShapeError("resize target must be >= 1, got " + std::to_string(target_h) + "x" +
                         std::to_string(target_w));
    }
    Image<T> out(target_h, target_w);
    const double sy = static_cast<double>(img.height()) / target_h;
    const double sx = static_cast<double>(img.width()) / target_w;
    for (int y = 0; y < target_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, img.height() - 1);
        const double wy = fy - y0;
        for (int x = 0; x < target_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, img.width() - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = img.at(y0, x0, c) + wx * (img.at(y0, x1, c) - static_cast<double>(img.at(y0, x0, c)));
                const double bot = img.at(y1, x0, c) + wx * (img.at(y1, x1, c) - static_cast<double>(img.at(y1, x0, c)));
                out.at(y, x, c) = store(top + wy * (bot - top));
            }
        }
    }
    return out;
}

} // namespace

HdrImage resize_image(const HdrImage& img, int target_h, int target_w) {
    if (img.height() == target_h && img.width() == target_w) return img;
    return resize_impl(img, target_h, target_w, [](double v) { return static_cast<float>(v); });
}

LdrImage resize_image(const LdrImage& img, int target_h, int target_w) {
    if (img.height() == target_h && img.width() == target_w) return img;
    return resize_impl(img, target_h, target_w,
                       [](double v) { return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)); });
}

} // namespace physhdr::data
