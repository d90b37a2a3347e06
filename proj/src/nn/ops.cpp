#include "physhdr/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "physhdr/error.hpp"

namespace physhdr::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

void require_same(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
}

void require_rank(const Var& x, int rank, const char* op) {
    if (x.value().rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(x.shape()));
    }
}

bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }
Tensor& gbuf(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }

template <typename F, typename DF>
Var unary(const Var& x, F f, DF df) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
    return make_op(std::move(out), {x}, [df](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        Tensor& g = gbuf(self, 0);
        for (std::size_t i = 0; i < xv.numel(); ++i) g[i] += self.grad[i] * df(xv[i], self.value[i]);
    });
}

} // namespace

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Tensor out = a.value();
    out.add_(b.value());
    return make_op(std::move(out), {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (wants(self, p)) gbuf(self, p).add_(self.grad);
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (wants(self, 0)) gbuf(self, 0).add_(self.grad);
        if (wants(self, 1)) {
            Tensor& g = gbuf(self, 1);
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (wants(self, 0)) {
            Tensor& g = gbuf(self, 0);
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (wants(self, 1)) {
            Tensor& g = gbuf(self, 1);
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

Var div(const Var& a, const Var& b) {
    require_same(a, b, "div");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] /= b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        const Tensor& bv = self.parents[1]->value;
        if (wants(self, 0)) {
            Tensor& g = gbuf(self, 0);
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] / bv[i];
        }
        if (wants(self, 1)) {
            Tensor& g = gbuf(self, 1);
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i] * self.value[i] / bv[i];
        }
    });
}

Var scale(const Var& x, double s) {
    return unary(x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& x, double s) {
    return unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var scale_per_sample(const Var& x, const std::vector<double>& s) {
    const Tensor& xv = x.value();
    if (xv.rank() < 1 || static_cast<std::size_t>(xv.dim(0)) != s.size()) {
        throw ShapeError("scale_per_sample: batch " + to_string(xv.shape()) + " vs " + std::to_string(s.size()));
    }
    const std::size_t inner = s.empty() ? 0 : xv.numel() / s.size();
    Tensor out = xv;
    for (std::size_t n = 0; n < s.size(); ++n) {
        for (std::size_t i = 0; i < inner; ++i) out[n * inner + i] *= s[n];
    }
    return make_op(std::move(out), {x}, [s, inner](Node& self) {
        Tensor& g = gbuf(self, 0);
        for (std::size_t n = 0; n < s.size(); ++n) {
            for (std::size_t i = 0; i < inner; ++i) g[n * inner + i] += self.grad[n * inner + i] * s[n];
        }
    });
}

Var add_channel_bias(const Var& x, const Var& b) {
    require_rank(x, 4, "add_channel_bias");
    const Tensor& xv = x.value();
    const int N = xv.dim(0), C = xv.dim(1);
    const std::size_t HW = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    if (b.value().numel() != static_cast<std::size_t>(C)) throw ShapeError("add_channel_bias: bias size");
    Tensor out = xv;
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            double* p = out.data() + (static_cast<std::size_t>(n) * C + c) * HW;
            const double bc = b.value()[c];
            for (std::size_t i = 0; i < HW; ++i) p[i] += bc;
        }
    }
    return make_op(std::move(out), {x, b}, [N, C, HW](Node& self) {
        if (wants(self, 0)) gbuf(self, 0).add_(self.grad);
        if (wants(self, 1)) {
            Tensor& g = gbuf(self, 1);
            for (int n = 0; n < N; ++n) {
                for (int c = 0; c < C; ++c) {
                    const double* p = self.grad.data() + (static_cast<std::size_t>(n) * C + c) * HW;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < HW; ++i) acc += p[i];
                    g[c] += acc;
                }
            }
        }
    });
}

Var add_sample_channel(const Var& x, const Var& v) {
    require_rank(x, 4, "add_sample_channel");
    const Tensor& xv = x.value();
    const int N = xv.dim(0), C = xv.dim(1);
    const std::size_t HW = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    if (v.shape() != Shape{N, C}) {
        throw ShapeError("add_sample_channel: " + to_string(v.shape()) + " vs " + to_string(xv.shape()));
    }
    Tensor out = xv;
    for (int nc = 0; nc < N * C; ++nc) {
        double* p = out.data() + static_cast<std::size_t>(nc) * HW;
        for (std::size_t i = 0; i < HW; ++i) p[i] += v.value()[nc];
    }
    return make_op(std::move(out), {x, v}, [N, C, HW](Node& self) {
        if (wants(self, 0)) gbuf(self, 0).add_(self.grad);
        if (wants(self, 1)) {
            Tensor& g = gbuf(self, 1);
            for (int nc = 0; nc < N * C; ++nc) {
                const double* p = self.grad.data() + static_cast<std::size_t>(nc) * HW;
                double acc = 0.0;
                for (std::size_t i = 0; i < HW; ++i) acc += p[i];
                g[nc] += acc;
            }
        }
    });
}

namespace {

void check_spatial(const Var& x, const Var& y, const char* op) {
    require_rank(x, 4, op);
    require_rank(y, 4, op);
    const auto& xs = x.shape();
    const auto& ys = y.shape();
    if (ys[0] != xs[0] || ys[1] != 1 || ys[2] != xs[2] || ys[3] != xs[3]) {
        throw ShapeError(std::string(op) + ": " + to_string(xs) + " vs " + to_string(ys));
    }
}

} // namespace

Var mul_spatial(const Var& x, const Var& y) {
    check_spatial(x, y, "mul_spatial");
    const Tensor& xv = x.value();
    const int N = xv.dim(0), C = xv.dim(1);
    const std::size_t HW = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    Tensor out = xv;
    for (int n = 0; n < N; ++n) {
        const double* yp = y.value().data() + n * HW;
        for (int c = 0; c < C; ++c) {
            double* p = out.data() + (static_cast<std::size_t>(n) * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) p[i] *= yp[i];
        }
    }
    return make_op(std::move(out), {x, y}, [N, C, HW](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        const Tensor& yv = self.parents[1]->value;
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < C; ++c) {
                const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
                if (wants(self, 0)) {
                    Tensor& g = gbuf(self, 0);
                    for (std::size_t i = 0; i < HW; ++i) g[base + i] += self.grad[base + i] * yv[n * HW + i];
                }
                if (wants(self, 1)) {
                    Tensor& g = gbuf(self, 1);
                    for (std::size_t i = 0; i < HW; ++i) g[n * HW + i] += self.grad[base + i] * xv[base + i];
                }
            }
        }
    });
}

Var div_spatial(const Var& x, const Var& y) {
    check_spatial(x, y, "div_spatial");
    const Tensor& xv = x.value();
    const int N = xv.dim(0), C = xv.dim(1);
    const std::size_t HW = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    Tensor out = xv;
    for (int n = 0; n < N; ++n) {
        const double* yp = y.value().data() + n * HW;
        for (int c = 0; c < C; ++c) {
            double* p = out.data() + (static_cast<std::size_t>(n) * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) p[i] /= yp[i];
        }
    }
    return make_op(std::move(out), {x, y}, [N, C, HW](Node& self) {
        const Tensor& yv = self.parents[1]->value;
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < C; ++c) {
                const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
                if (wants(self, 0)) {
                    Tensor& g = gbuf(self, 0);
                    for (std::size_t i = 0; i < HW; ++i) g[base + i] += self.grad[base + i] / yv[n * HW + i];
                }
                if (wants(self, 1)) {
                    Tensor& g = gbuf(self, 1);
                    for (std::size_t i = 0; i < HW; ++i) {
                        g[n * HW + i] -= self.grad[base + i] * self.value[base + i] / yv[n * HW + i];
                    }
                }
            }
        }
    });
}

Var silu(const Var& x) {
    return unary(
        x, [](double v) { return v / (1.0 + std::exp(-v)); },
        [](double v, double) {
            const double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 + v * (1.0 - s));
        });
}

Var relu(const Var& x) {
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& x) {
    return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
    return unary(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Var exp(const Var& x) {
    return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var expm1(const Var& x) {
    return unary(x, [](double v) { return std::expm1(v); }, [](double, double y) { return y + 1.0; });
}

Var log1p(const Var& x) {
    return unary(x, [](double v) { return std::log1p(v); }, [](double v, double) { return 1.0 / (1.0 + v); });
}

Var square(const Var& x) {
    return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var abs(const Var& x) {
    return unary(
        x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var clamp(const Var& x, double lo, double hi) {
    return unary(
        x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Var mu_law(const Var& x, double mu) {
    const double denom = std::log1p(mu);
    return unary(
        x, [mu, denom](double v) { return std::log1p(mu * v) / denom; },
        [mu, denom](double v, double) { return mu / ((1.0 + mu * v) * denom); });
}

Var sum(const Var& x) {
    double acc = 0.0;
    for (double v : x.value().values()) acc += v;
    return make_op(Tensor({1}, {acc}), {x}, [](Node& self) {
        Tensor& g = gbuf(self, 0);
        const double s = self.grad[0];
        for (double& v : g.values()) v += s;
    });
}

Var mean(const Var& x) {
    const double n = static_cast<double>(x.value().numel());
    double acc = 0.0;
    for (double v : x.value().values()) acc += v;
    return make_op(Tensor({1}, {acc / n}), {x}, [n](Node& self) {
        Tensor& g = gbuf(self, 0);
        const double s = self.grad[0] / n;
        for (double& v : g.values()) v += s;
    });
}

Var channel_weighted_sum(const Var& x, const std::vector<double>& weights) {
    require_rank(x, 4, "channel_weighted_sum");
    const Tensor& xv = x.value();
    const int N = xv.dim(0), C = xv.dim(1);
    if (weights.size() != static_cast<std::size_t>(C)) throw ShapeError("channel_weighted_sum: weight count");
    const std::size_t HW = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    Tensor out({N, 1, xv.dim(2), xv.dim(3)});
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const double* p = xv.data() + (static_cast<std::size_t>(n) * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) out[n * HW + i] += weights[c] * p[i];
        }
    }
    return make_op(std::move(out), {x}, [N, C, HW, weights](Node& self) {
        Tensor& g = gbuf(self, 0);
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < C; ++c) {
                double* p = g.data() + (static_cast<std::size_t>(n) * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) p[i] += weights[c] * self.grad[n * HW + i];
            }
        }
    });
}

Var spatial_mean(const Var& x) {
    require_rank(x, 4, "spatial_mean");
    const Tensor& xv = x.value();
    const int N = xv.dim(0), C = xv.dim(1);
    const std::size_t HW = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    Tensor out({N, C});
    for (int nc = 0; nc < N * C; ++nc) {
        double acc = 0.0;
        for (std::size_t i = 0; i < HW; ++i) acc += xv[nc * HW + i];
        out[nc] = acc / static_cast<double>(HW);
    }
    return make_op(std::move(out), {x}, [N, C, HW](Node& self) {
        Tensor& g = gbuf(self, 0);
        for (int nc = 0; nc < N * C; ++nc) {
            const double s = self.grad[nc] / static_cast<double>(HW);
            for (std::size_t i = 0; i < HW; ++i) g[nc * HW + i] += s;
        }
    });
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return make_op(std::move(out), {x}, [](Node& self) {
        Tensor& g = gbuf(self, 0);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    });
}

Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = parts[0].shape();
    const int rank = static_cast<int>(first.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError("concat: bad axis");
    std::size_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= first[d];
    std::size_t inner = 1;
    for (int d = axis + 1; d < rank; ++d) inner *= first[d];

    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (static_cast<int>(s.size()) != rank) throw ShapeError("concat: rank mismatch");
        for (int d = 0; d < rank; ++d) {
            if (d != axis && s[d] != first[d]) {
                throw ShapeError("concat: " + to_string(s) + " vs " + to_string(first) + " on axis " +
                                 std::to_string(axis));
            }
        }
        out_shape[axis] += s[axis];
        widths.push_back(static_cast<std::size_t>(s[axis]) * inner);
    }
    const std::size_t total = static_cast<std::size_t>(out_shape[axis]) * inner;
    Tensor out(out_shape);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& v = parts[k].value();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(v.data() + o * widths[k], widths[k], out.data() + o * total + offset);
        }
        offset += widths[k];
    }
    return make_op(std::move(out), parts, [outer, total, widths](Node& self) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (wants(self, k)) {
                Tensor& g = gbuf(self, k);
                for (std::size_t o = 0; o < outer; ++o) {
                    const double* src = self.grad.data() + o * total + offset;
                    double* dst = g.data() + o * widths[k];
                    for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
                }
            }
            offset += widths[k];
        }
    });
}

Var slice_channels(const Var& x, int c0, int c1) {
    require_rank(x, 4, "slice_channels");
    const Tensor& xv = x.value();
    const int N = xv.dim(0), C = xv.dim(1);
    if (c0 < 0 || c1 > C || c0 >= c1) throw ShapeError("slice_channels: bad range");
    const std::size_t HW = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    const int K = c1 - c0;
    Tensor out({N, K, xv.dim(2), xv.dim(3)});
    for (int n = 0; n < N; ++n) {
        std::copy_n(xv.data() + (static_cast<std::size_t>(n) * C + c0) * HW, K * HW,
                    out.data() + static_cast<std::size_t>(n) * K * HW);
    }
    return make_op(std::move(out), {x}, [N, C, K, c0, HW](Node& self) {
        Tensor& g = gbuf(self, 0);
        for (int n = 0; n < N; ++n) {
            double* dst = g.data() + (static_cast<std::size_t>(n) * C + c0) * HW;
            const double* src = self.grad.data() + static_cast<std::size_t>(n) * K * HW;
            for (std::size_t i = 0; i < K * HW; ++i) dst[i] += src[i];
        }
    });
}

namespace {

// [N, A, B] -> [N, B, A]
Tensor transpose_last2(const Tensor& t, int N, int A, int B, Shape out_shape) {
    Tensor out(std::move(out_shape));
    for (int n = 0; n < N; ++n) {
        ConstMatMap src(t.data() + static_cast<std::size_t>(n) * A * B, A, B);
        MatMap dst(out.data() + static_cast<std::size_t>(n) * A * B, B, A);
        dst = src.transpose();
    }
    return out;
}

} // namespace

Var to_tokens(const Var& x) {
    require_rank(x, 4, "to_tokens");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out = transpose_last2(x.value(), N, C, H * W, {N, H * W, C});
    return make_op(std::move(out), {x}, [N, C, H, W](Node& self) {
        gbuf(self, 0).add_(transpose_last2(self.grad, N, H * W, C, {N, C, H, W}));
    });
}

Var from_tokens(const Var& t, int height, int width) {
    require_rank(t, 3, "from_tokens");
    const int N = t.dim(0), L = t.dim(1), C = t.dim(2);
    if (L != height * width) throw ShapeError("from_tokens: token count does not match spatial dims");
    Tensor out = transpose_last2(t.value(), N, L, C, {N, C, height, width});
    return make_op(std::move(out), {t}, [N, L, C](Node& self) {
        gbuf(self, 0).add_(transpose_last2(self.grad, N, C, L, {N, L, C}));
    });
}

Var patchify(const Var& x, int patch) {
    require_rank(x, 4, "patchify");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (patch < 1 || H % patch != 0 || W % patch != 0) {
        throw ShapeError("patchify: " + to_string(x.shape()) + " not divisible by patch " + std::to_string(patch));
    }
    const int gh = H / patch, gw = W / patch;
    const int L = gh * gw, D = C * patch * patch;
    // Index map from output position to input position, shared by forward and backward.
    std::vector<std::size_t> src(static_cast<std::size_t>(N) * L * D);
    std::size_t k = 0;
    for (int n = 0; n < N; ++n) {
        for (int py = 0; py < gh; ++py) {
            for (int px = 0; px < gw; ++px) {
                for (int c = 0; c < C; ++c) {
                    for (int dy = 0; dy < patch; ++dy) {
                        for (int dx = 0; dx < patch; ++dx) {
                            src[k++] = ((static_cast<std::size_t>(n) * C + c) * H + py * patch + dy) * W + px * patch + dx;
                        }
                    }
                }
            }
        }
    }
    Tensor out({N, L, D});
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = x.value()[src[i]];
    return make_op(std::move(out), {x}, [src = std::move(src)](Node& self) {
        Tensor& g = gbuf(self, 0);
        for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
    });
}

Var upsample_nearest2x(const Var& x) {
    require_rank(x, 4, "upsample_nearest2x");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out({N, C, 2 * H, 2 * W});
    const Tensor& xv = x.value();
    for (int nc = 0; nc < N * C; ++nc) {
        for (int y = 0; y < 2 * H; ++y) {
            for (int xx = 0; xx < 2 * W; ++xx) {
                out[(static_cast<std::size_t>(nc) * 2 * H + y) * 2 * W + xx] =
                    xv[(static_cast<std::size_t>(nc) * H + y / 2) * W + xx / 2];
            }
        }
    }
    return make_op(std::move(out), {x}, [N, C, H, W](Node& self) {
        Tensor& g = gbuf(self, 0);
        for (int nc = 0; nc < N * C; ++nc) {
            for (int y = 0; y < 2 * H; ++y) {
                for (int xx = 0; xx < 2 * W; ++xx) {
                    g[(static_cast<std::size_t>(nc) * H + y / 2) * W + xx / 2] +=
                        self.grad[(static_cast<std::size_t>(nc) * 2 * H + y) * 2 * W + xx];
                }
            }
        }
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const Shape& xs = x.shape();
    if (xs.empty() || w.value().rank() != 2 || w.dim(0) != xs.back()) {
        throw ShapeError("linear: input " + to_string(xs) + " vs weight " + to_string(w.shape()));
    }
    const int Din = w.dim(0), Dout = w.dim(1);
    const int M = static_cast<int>(x.value().numel() / static_cast<std::size_t>(Din));
    const bool has_bias = b.defined();
    if (has_bias && b.value().numel() != static_cast<std::size_t>(Dout)) throw ShapeError("linear: bias size");
    Shape out_shape = xs;
    out_shape.back() = Dout;
    Tensor out(out_shape);
    MatMap o(out.data(), M, Dout);
    o.noalias() = ConstMatMap(x.value().data(), M, Din) * ConstMatMap(w.value().data(), Din, Dout);
    if (has_bias) o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), Dout);
    std::vector<Var> parents{x, w};
    if (has_bias) parents.push_back(b);
    return make_op(std::move(out), parents, [M, Din, Dout, has_bias](Node& self) {
        ConstMatMap go(self.grad.data(), M, Dout);
        if (wants(self, 0)) {
            MatMap gx(gbuf(self, 0).data(), M, Din);
            gx.noalias() += go * ConstMatMap(self.parents[1]->value.data(), Din, Dout).transpose();
        }
        if (wants(self, 1)) {
            MatMap gw(gbuf(self, 1).data(), Din, Dout);
            gw.noalias() += ConstMatMap(self.parents[0]->value.data(), M, Din).transpose() * go;
        }
        if (has_bias && wants(self, 2)) {
            double* gb = gbuf(self, 2).data();
            for (Eigen::Index r = 0; r < go.rows(); ++r)
                for (int j = 0; j < Dout; ++j) gb[j] += go(r, j);
        }
    });
}

Var bmm(const Var& a, const Var& b) {
    require_rank(a, 3, "bmm");
    require_rank(b, 3, "bmm");
    const int N = a.dim(0), M = a.dim(1), K = a.dim(2), P = b.dim(2);
    if (b.dim(0) != N || b.dim(1) != K) throw ShapeError("bmm: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    Tensor out({N, M, P});
    for (int n = 0; n < N; ++n) {
        MatMap(out.data() + static_cast<std::size_t>(n) * M * P, M, P).noalias() =
            ConstMatMap(a.value().data() + static_cast<std::size_t>(n) * M * K, M, K) *
            ConstMatMap(b.value().data() + static_cast<std::size_t>(n) * K * P, K, P);
    }
    return make_op(std::move(out), {a, b}, [N, M, K, P](Node& self) {
        for (int n = 0; n < N; ++n) {
            ConstMatMap go(self.grad.data() + static_cast<std::size_t>(n) * M * P, M, P);
            if (wants(self, 0)) {
                MatMap(gbuf(self, 0).data() + static_cast<std::size_t>(n) * M * K, M, K).noalias() +=
                    go * ConstMatMap(self.parents[1]->value.data() + static_cast<std::size_t>(n) * K * P, K, P).transpose();
            }
            if (wants(self, 1)) {
                MatMap(gbuf(self, 1).data() + static_cast<std::size_t>(n) * K * P, K, P).noalias() +=
                    ConstMatMap(self.parents[0]->value.data() + static_cast<std::size_t>(n) * M * K, M, K).transpose() * go;
            }
        }
    });
}

Var bmm_nt(const Var& a, const Var& b) {
    require_rank(a, 3, "bmm_nt");
    require_rank(b, 3, "bmm_nt");
    const int N = a.dim(0), M = a.dim(1), K = a.dim(2), P = b.dim(1);
    if (b.dim(0) != N || b.dim(2) != K) {
        throw ShapeError("bmm_nt: " + to_string(a.shape()) + " x " + to_string(b.shape()) + "^T");
    }
    Tensor out({N, M, P});
    for (int n = 0; n < N; ++n) {
        MatMap(out.data() + static_cast<std::size_t>(n) * M * P, M, P).noalias() =
            ConstMatMap(a.value().data() + static_cast<std::size_t>(n) * M * K, M, K) *
            ConstMatMap(b.value().data() + static_cast<std::size_t>(n) * P * K, P, K).transpose();
    }
    return make_op(std::move(out), {a, b}, [N, M, K, P](Node& self) {
        for (int n = 0; n < N; ++n) {
            ConstMatMap go(self.grad.data() + static_cast<std::size_t>(n) * M * P, M, P);
            if (wants(self, 0)) {
                MatMap(gbuf(self, 0).data() + static_cast<std::size_t>(n) * M * K, M, K).noalias() +=
                    go * ConstMatMap(self.parents[1]->value.data() + static_cast<std::size_t>(n) * P * K, P, K);
            }
            if (wants(self, 1)) {
                MatMap(gbuf(self, 1).data() + static_cast<std::size_t>(n) * P * K, P, K).noalias() +=
                    go.transpose() * ConstMatMap(self.parents[0]->value.data() + static_cast<std::size_t>(n) * M * K, M, K);
            }
        }
    });
}

Var softmax_last(const Var& x) {
    const Tensor& xv = x.value();
    const int D = xv.dim(-1);
    const std::size_t rows = xv.numel() / static_cast<std::size_t>(D);
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * D;
        double* o = out.data() + r * D;
        const double m = *std::max_element(in, in + D);
        double z = 0.0;
        for (int i = 0; i < D; ++i) z += (o[i] = std::exp(in[i] - m));
        for (int i = 0; i < D; ++i) o[i] /= z;
    }
    return make_op(std::move(out), {x}, [rows, D](Node& self) {
        Tensor& g = gbuf(self, 0);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * D;
            const double* gy = self.grad.data() + r * D;
            double dot = 0.0;
            for (int i = 0; i < D; ++i) dot += y[i] * gy[i];
            for (int i = 0; i < D; ++i) g[r * D + i] += y[i] * (gy[i] - dot);
        }
    });
}

namespace {

struct ConvGeom {
    int N, Ci, H, W, Co, k, stride, pad, Ho, Wo;
    int rows() const { return Ci * k * k; }
    int cols() const { return Ho * Wo; }
};

// Output columns [first, last) whose input column lies inside the image for kernel offset kx.
std::pair<int, int> valid_cols(const ConvGeom& g, int kx) {
    int first = 0;
    while (first < g.Wo && first * g.stride - g.pad + kx < 0) ++first;
    int last = g.Wo;
    while (last > first && (last - 1) * g.stride - g.pad + kx >= g.W) --last;
    return {first, last};
}

void im2col(const double* x, const ConvGeom& g, double* col) {
    for (int c = 0; c < g.Ci; ++c) {
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                double* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * g.cols();
                const auto [first, last] = valid_cols(g, kx);
                for (int oy = 0; oy < g.Ho; ++oy) {
                    double* r = row + static_cast<std::size_t>(oy) * g.Wo;
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.H || first >= last) {
                        std::fill(r, r + g.Wo, 0.0);
                        continue;
                    }
                    std::fill(r, r + first, 0.0);
                    std::fill(r + last, r + g.Wo, 0.0);
                    const double* src = x + (static_cast<std::size_t>(c) * g.H + iy) * g.W + first * g.stride - g.pad + kx;
                    if (g.stride == 1) {
                        std::copy(src, src + (last - first), r + first);
                    } else {
                        for (int ox = first; ox < last; ++ox) r[ox] = src[(ox - first) * g.stride];
                    }
                }
            }
        }
    }
}

void col2im(const double* col, const ConvGeom& g, double* x) {
    for (int c = 0; c < g.Ci; ++c) {
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                const double* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * g.cols();
                const auto [first, last] = valid_cols(g, kx);
                for (int oy = 0; oy < g.Ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.H) continue;
                    const double* r = row + static_cast<std::size_t>(oy) * g.Wo;
                    double* dst = x + (static_cast<std::size_t>(c) * g.H + iy) * g.W + first * g.stride - g.pad + kx;
                    for (int ox = first; ox < last; ++ox) dst[(ox - first) * g.stride] += r[ox];
                }
            }
        }
    }
}

} // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int padding) {
    require_rank(x, 4, "conv2d");
    require_rank(w, 4, "conv2d weight");
    ConvGeom g{};
    g.N = x.dim(0);
    g.Ci = x.dim(1);
    g.H = x.dim(2);
    g.W = x.dim(3);
    g.Co = w.dim(0);
    g.k = w.dim(2);
    g.stride = stride;
    g.pad = padding;
    if (w.dim(1) != g.Ci || w.dim(3) != g.k || stride < 1 || padding < 0) {
        throw ShapeError("conv2d: input " + to_string(x.shape()) + " vs weight " + to_string(w.shape()));
    }
    g.Ho = (g.H + 2 * padding - g.k) / stride + 1;
    g.Wo = (g.W + 2 * padding - g.k) / stride + 1;
    if (g.Ho < 1 || g.Wo < 1) throw ShapeError("conv2d: output would be empty for " + to_string(x.shape()));
    const bool has_bias = b.defined();
    if (has_bias && b.value().numel() != static_cast<std::size_t>(g.Co)) throw ShapeError("conv2d: bias size");
    const bool pointwise = g.k == 1 && stride == 1 && padding == 0;

    Tensor out({g.N, g.Co, g.Ho, g.Wo});
    std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(g.rows()) * g.cols());
    ConstMatMap wm(w.value().data(), g.Co, g.rows());
    for (int n = 0; n < g.N; ++n) {
        const double* xn = x.value().data() + static_cast<std::size_t>(n) * g.Ci * g.H * g.W;
        const double* cp = xn;
        if (!pointwise) {
            im2col(xn, g, col.data());
            cp = col.data();
        }
        MatMap on(out.data() + static_cast<std::size_t>(n) * g.Co * g.cols(), g.Co, g.cols());
        on.noalias() = wm * ConstMatMap(cp, g.rows(), g.cols());
        if (has_bias) on.colwise() += Eigen::Map<const Eigen::VectorXd>(b.value().data(), g.Co);
    }

    std::vector<Var> parents{x, w};
    if (has_bias) parents.push_back(b);
    return make_op(std::move(out), parents, [g, has_bias, pointwise](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        ConstMatMap wm(self.parents[1]->value.data(), g.Co, g.rows());
        std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(g.rows()) * g.cols());
        std::vector<double> dcol(col.size());
        for (int n = 0; n < g.N; ++n) {
            ConstMatMap go(self.grad.data() + static_cast<std::size_t>(n) * g.Co * g.cols(), g.Co, g.cols());
            if (wants(self, 1)) {
                const double* xn = xv.data() + static_cast<std::size_t>(n) * g.Ci * g.H * g.W;
                const double* cp = xn;
                if (!pointwise) {
                    im2col(xn, g, col.data());
                    cp = col.data();
                }
                MatMap(gbuf(self, 1).data(), g.Co, g.rows()).noalias() +=
                    go * ConstMatMap(cp, g.rows(), g.cols()).transpose();
            }
            if (wants(self, 0)) {
                double* gx = gbuf(self, 0).data() + static_cast<std::size_t>(n) * g.Ci * g.H * g.W;
                if (pointwise) {
                    MatMap(gx, g.rows(), g.cols()).noalias() += wm.transpose() * go;
                } else {
                    MatMap(dcol.data(), g.rows(), g.cols()).noalias() = wm.transpose() * go;
                    col2im(dcol.data(), g, gx);
                }
            }
            if (has_bias && wants(self, 2)) {
                // plain loop: Eigen's vectorized reduction order depends on buffer alignment
                double* gb = gbuf(self, 2).data();
                for (int c = 0; c < g.Co; ++c) {
                    const double* row = go.data() + static_cast<std::size_t>(c) * g.cols();
                    double acc = 0.0;
                    for (int i = 0; i < g.cols(); ++i) acc += row[i];
                    gb[c] += acc;
                }
            }
        }
    });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
    require_rank(x, 4, "group_norm");
    const int N = x.dim(0), C = x.dim(1);
    if (groups < 1 || C % groups != 0) throw ShapeError("group_norm: channels not divisible by groups");
    if (gamma.value().numel() != static_cast<std::size_t>(C) || beta.value().numel() != static_cast<std::size_t>(C)) {
        throw ShapeError("group_norm: affine size");
    }
    const std::size_t HW = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    const int cg = C / groups;
    const std::size_t gsize = static_cast<std::size_t>(cg) * HW;

    const Tensor& xv = x.value();
    Tensor xhat(xv.shape());
    std::vector<double> inv_std(static_cast<std::size_t>(N) * groups);
    for (int n = 0; n < N; ++n) {
        for (int gi = 0; gi < groups; ++gi) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + gi * cg) * HW;
            double m = 0.0;
            for (std::size_t i = 0; i < gsize; ++i) m += xv[base + i];
            m /= static_cast<double>(gsize);
            double var = 0.0;
            for (std::size_t i = 0; i < gsize; ++i) var += (xv[base + i] - m) * (xv[base + i] - m);
            var /= static_cast<double>(gsize);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[n * groups + gi] = is;
            for (std::size_t i = 0; i < gsize; ++i) xhat[base + i] = (xv[base + i] - m) * is;
        }
    }
    Tensor out(xv.shape());
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) out[base + i] = gamma.value()[c] * xhat[base + i] + beta.value()[c];
        }
    }
    return make_op(std::move(out), {x, gamma, beta},
                   [N, C, HW, groups, cg, gsize, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const Tensor& gam = self.parents[1]->value;
                       if (wants(self, 1) || wants(self, 2)) {
                           for (int n = 0; n < N; ++n) {
                               for (int c = 0; c < C; ++c) {
                                   const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
                                   double dg = 0.0, db = 0.0;
                                   for (std::size_t i = 0; i < HW; ++i) {
                                       dg += self.grad[base + i] * xhat[base + i];
                                       db += self.grad[base + i];
                                   }
                                   if (wants(self, 1)) gbuf(self, 1)[c] += dg;
                                   if (wants(self, 2)) gbuf(self, 2)[c] += db;
                               }
                           }
                       }
                       if (!wants(self, 0)) return;
                       Tensor& gx = gbuf(self, 0);
                       std::vector<double> dxhat(gsize);
                       for (int n = 0; n < N; ++n) {
                           for (int gi = 0; gi < groups; ++gi) {
                               const std::size_t base = (static_cast<std::size_t>(n) * C + gi * cg) * HW;
                               double sum_d = 0.0, sum_dx = 0.0;
                               for (std::size_t i = 0; i < gsize; ++i) {
                                   const int c = gi * cg + static_cast<int>(i / HW);
                                   dxhat[i] = self.grad[base + i] * gam[c];
                                   sum_d += dxhat[i];
                                   sum_dx += dxhat[i] * xhat[base + i];
                               }
                               const double inv_n = 1.0 / static_cast<double>(gsize);
                               const double is = inv_std[n * groups + gi];
                               for (std::size_t i = 0; i < gsize; ++i) {
                                   gx[base + i] += is * (dxhat[i] - inv_n * sum_d - xhat[base + i] * inv_n * sum_dx);
                               }
                           }
                       }
                   });
}

} // namespace physhdr::nn

namespace physhdr::nn {

Var forward_diff(const Var& x, int axis) {
    require_rank(x, 4, "forward_diff");
    if (axis != 2 && axis != 3) throw ShapeError("forward_diff: axis must be 2 or 3");
    const int NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t step = axis == 3 ? 1 : static_cast<std::size_t>(W);
    auto valid = [axis, H, W](int y, int xx) { return axis == 3 ? xx + 1 < W : y + 1 < H; };
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (int nc = 0; nc < NC; ++nc) {
        for (int y = 0; y < H; ++y) {
            for (int xx = 0; xx < W; ++xx) {
                const std::size_t i = (static_cast<std::size_t>(nc) * H + y) * W + xx;
                if (valid(y, xx)) out[i] = xv[i + step] - xv[i];
            }
        }
    }
    return make_op(std::move(out), {x}, [NC, H, W, step, valid](Node& self) {
        Tensor& g = gbuf(self, 0);
        for (int nc = 0; nc < NC; ++nc) {
            for (int y = 0; y < H; ++y) {
                for (int xx = 0; xx < W; ++xx) {
                    const std::size_t i = (static_cast<std::size_t>(nc) * H + y) * W + xx;
                    if (!valid(y, xx)) continue;
                    g[i + step] += self.grad[i];
                    g[i] -= self.grad[i];
                }
            }
        }
    });
}

} // namespace physhdr::nn
