#include <algorithm>
#include <cmath>

#include "physhdr/encoders.hpp"
#include "physhdr/error.hpp"

namespace physhdr::encoders {

using nn::Tensor;

namespace {

constexpr double kLumR = 0.2126, kLumG = 0.7152, kLumB = 0.0722;
// Half an 8-bit code value; keeps black pixels off log(0).
constexpr double kLumFloor = 0.5 / 255.0;

void check_ldr(const Tensor& ldr, int grid, const char* who) {
    if (ldr.rank() != 4 || ldr.dim(1) != 3)
        throw ShapeError(std::string(who) + ": expected [N, 3, H, W], got " + nn::to_string(ldr.shape()));
    if (grid < 1) throw ConfigError(std::string(who) + ": grid must be >= 1");
    if (ldr.dim(2) < grid || ldr.dim(3) < grid)
        throw ShapeError(std::string(who) + ": image smaller than the " + std::to_string(grid) + "x" +
                         std::to_string(grid) + " condition grid");
}

Tensor luminance(const Tensor& ldr) {
    const int N = ldr.dim(0), H = ldr.dim(2), W = ldr.dim(3);
    Tensor y({N, 1, H, W});
    for (int n = 0; n < N; ++n)
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c)
                y.at(n, 0, r, c) = kLumR * ldr.at(n, 0, r, c) + kLumG * ldr.at(n, 1, r, c) + kLumB * ldr.at(n, 2, r, c);
    return y;
}

int cell_edge(int i, int size, int grid) { return static_cast<int>(static_cast<long long>(i) * size / grid); }

} // namespace

Tensor area_resample(const Tensor& x, int grid) {
    if (x.rank() != 4) throw ShapeError("area_resample: expected rank 4, got " + nn::to_string(x.shape()));
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (grid < 1 || H < grid || W < grid) throw ShapeError("area_resample: grid larger than the input");
    Tensor out({N, C, grid, grid});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < grid; ++i)
                for (int j = 0; j < grid; ++j) {
                    const int y0 = cell_edge(i, H, grid), y1 = cell_edge(i + 1, H, grid);
                    const int x0 = cell_edge(j, W, grid), x1 = cell_edge(j + 1, W, grid);
                    double acc = 0.0;
                    for (int y = y0; y < y1; ++y)
                        for (int xx = x0; xx < x1; ++xx) acc += x.at(n, c, y, xx);
                    out.at(n, c, i, j) = acc / static_cast<double>((y1 - y0) * (x1 - x0));
                }
    return out;
}

Tensor ToyIllumination::encode(const Tensor& ldr, int grid) const {
    check_ldr(ldr, grid, "illumination encoder");
    const int N = ldr.dim(0), H = ldr.dim(2), W = ldr.dim(3);
    const Tensor lum = luminance(ldr);
    Tensor out({N, 3, grid, grid});
    std::vector<double> ell(static_cast<std::size_t>(H) * W);
    for (int n = 0; n < N; ++n) {
        double global = 0.0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double v = std::log(std::max(lum.at(n, 0, y, x), kLumFloor));
                ell[static_cast<std::size_t>(y) * W + x] = v;
                global += v;
            }
        global /= static_cast<double>(ell.size());

        for (int i = 0; i < grid; ++i)
            for (int j = 0; j < grid; ++j) {
                const int y0 = cell_edge(i, H, grid), y1 = cell_edge(i + 1, H, grid);
                const int x0 = cell_edge(j, W, grid), x1 = cell_edge(j + 1, W, grid);
                const double pivot = ell[static_cast<std::size_t>(y0) * W + x0];
                double s = 0.0, s2 = 0.0;
                int bright = 0;
                for (int y = y0; y < y1; ++y)
                    for (int x = x0; x < x1; ++x) {
                        const double v = ell[static_cast<std::size_t>(y) * W + x];
                        // shifted sums keep a flat cell at exactly zero variance
                        s += v - pivot;
                        s2 += (v - pivot) * (v - pivot);
                        if (v - global > log_threshold_) ++bright;
                    }
                const double count = static_cast<double>((y1 - y0) * (x1 - x0));
                const double m = s / count;
                out.at(n, 0, i, j) = pivot + m;
                out.at(n, 1, i, j) = std::max(0.0, s2 / count - m * m);
                out.at(n, 2, i, j) = bright / count;
            }
    }
    return out;
}

Tensor ToyDepth::encode(const Tensor& ldr, int grid) const {
    check_ldr(ldr, grid, "depth encoder");
    const int N = ldr.dim(0), H = ldr.dim(2), W = ldr.dim(3);
    const Tensor lum = luminance(ldr);
    Tensor inv({N, 1, H, W});
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double acc = 0.0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = std::clamp(y + dy, 0, H - 1), xx = std::clamp(x + dx, 0, W - 1);
                        acc += lum.at(n, 0, yy, xx);
                    }
                inv.at(n, 0, y, x) = 1.0 - acc / 9.0;
            }
    Tensor out = area_resample(inv, grid);
    const std::size_t per = static_cast<std::size_t>(grid) * grid;
    for (int n = 0; n < N; ++n) {
        double* p = out.data() + n * per;
        const auto [lo, hi] = std::minmax_element(p, p + per);
        const double a = *lo, range = *hi - *lo;
        for (std::size_t i = 0; i < per; ++i) p[i] = range > 1e-12 ? std::clamp((p[i] - a) / range, 0.0, 1.0) : 0.0;
    }
    return out;
}

} // namespace physhdr::encoders
