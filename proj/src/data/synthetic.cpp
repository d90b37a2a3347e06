#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "physhdr/data.hpp"

namespace physhdr::data {

namespace {

using Rgb = std::array<double, 3>;

double smoothstep(double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

} // namespace

HdrImage synthetic_scene(std::uint64_t seed, int height, int width) {
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto color = [&](double lo, double hi) { return Rgb{lo + (hi - lo) * u(rng), lo + (hi - lo) * u(rng), lo + (hi - lo) * u(rng)}; };

    const double sky_level = 0.25 + 0.5 * u(rng);
    const Rgb zenith{0.25 * sky_level, 0.4 * sky_level, 0.9 * sky_level};
    const Rgb horizon{0.8 * sky_level, 0.75 * sky_level, 0.65 * sky_level};
    const double horizon_y = 0.45 + 0.2 * u(rng);
    const Rgb ground = color(0.05, 0.35);

    struct Panel { double x0, y0, x1, y1; Rgb albedo; };
    std::vector<Panel> panels;
    const int n_panels = 1 + static_cast<int>(u(rng) * 3);
    for (int i = 0; i < n_panels; ++i) {
        const double x0 = u(rng) * 0.7;
        const double y0 = 0.2 + u(rng) * 0.6;
        panels.push_back({x0, y0, x0 + 0.15 + 0.25 * u(rng), y0 + 0.1 + 0.2 * u(rng), color(0.05, 0.9)});
    }

    const double cx = 0.25 + 0.5 * u(rng);
    const double cy = 0.4 + 0.3 * u(rng);
    const double radius = 0.12 + 0.1 * u(rng);
    const Rgb sphere_albedo = color(0.1, 0.9);
    const double light_x = u(rng) * 2.0 - 1.0;
    const double light_y = -0.4 - 0.5 * u(rng);
    const double light_norm = std::sqrt(light_x * light_x + light_y * light_y + 1.0);
    const std::array<double, 3> light{light_x / light_norm, light_y / light_norm, 1.0 / light_norm};
    const double specular = 2.0 + 6.0 * u(rng);

    struct Emitter { double x, y, r, peak; Rgb tint; };
    std::vector<Emitter> emitters;
    const int n_emitters = 1 + static_cast<int>(u(rng) * 2);
    for (int i = 0; i < n_emitters; ++i) {
        emitters.push_back({0.1 + 0.8 * u(rng), 0.05 + 0.4 * u(rng), 0.03 + 0.04 * u(rng), 8.0 + 24.0 * u(rng),
                            color(0.7, 1.0)});
    }

    HdrImage img(height, width);
    const double aa = 1.5 / std::max(height, width);
    for (int y = 0; y < height; ++y) {
        const double py = (y + 0.5) / height;
        for (int x = 0; x < width; ++x) {
            const double px = (x + 0.5) / width;
            Rgb c{};
            const double sky_t = std::clamp(py / horizon_y, 0.0, 1.0);
            const double ground_w = smoothstep(horizon_y - aa, horizon_y + aa, py);
            const double shade = 0.5 + 0.5 * (py - horizon_y) / (1.0 - horizon_y);
            for (int k = 0; k < 3; ++k) {
                const double sky = zenith[k] + (horizon[k] - zenith[k]) * sky_t;
                c[k] = (1.0 - ground_w) * sky + ground_w * ground[k] * sky_level * shade;
            }
            for (const auto& p : panels) {
                const double w = smoothstep(p.x0 - aa, p.x0 + aa, px) * (1.0 - smoothstep(p.x1 - aa, p.x1 + aa, px)) *
                                 smoothstep(p.y0 - aa, p.y0 + aa, py) * (1.0 - smoothstep(p.y1 - aa, p.y1 + aa, py));
                for (int k = 0; k < 3; ++k) c[k] = (1.0 - w) * c[k] + w * p.albedo[k] * (0.3 + 0.5 * sky_level);
            }
            const double dx = (px - cx) / radius;
            const double dy = (py - cy) / radius;
            const double d2 = dx * dx + dy * dy;
            const double inside = 1.0 - smoothstep(1.0 - 2.0 * aa / radius, 1.0, std::sqrt(d2));
            if (inside > 0.0) {
                const double nz = std::sqrt(std::max(0.0, 1.0 - d2));
                const double ndotl = std::max(0.0, dx * light[0] + dy * light[1] + nz * light[2]);
                const double rz = 2.0 * ndotl * nz - light[2];
                const double spec = specular * std::pow(std::max(0.0, rz), 24.0);
                for (int k = 0; k < 3; ++k) {
                    const double lit = sphere_albedo[k] * (0.08 + 1.1 * ndotl) + spec;
                    c[k] = (1.0 - inside) * c[k] + inside * lit;
                }
            }
            for (const auto& e : emitters) {
                const double ex = (px - e.x) / e.r;
                const double ey = (py - e.y) / e.r;
                const double g = std::exp(-0.5 * (ex * ex + ey * ey));
                for (int k = 0; k < 3; ++k) c[k] += e.peak * e.tint[k] * g;
            }
            for (int k = 0; k < 3; ++k) img.at(y, x, k) = static_cast<float>(std::max(c[k], 0.0));
        }
    }
    return img;
}

} // namespace physhdr::data
