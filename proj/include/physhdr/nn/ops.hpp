#pragma once

#include <vector>

#include "physhdr/nn/autograd.hpp"

/// Differentiable tensor operations. Image tensors are NCHW; token tensors
/// are [N, L, D].
namespace physhdr::nn {

// Elementwise, identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);
/// x[n, ...] * s[n] with constant per-sample factors.
Var scale_per_sample(const Var& x, const std::vector<double>& s);

// Broadcasting.
/// x[N, C, H, W] + b[C].
Var add_channel_bias(const Var& x, const Var& b);
/// x[N, C, H, W] + v[N, C].
Var add_sample_channel(const Var& x, const Var& v);
/// x[N, C, H, W] * y[N, 1, H, W].
Var mul_spatial(const Var& x, const Var& y);
/// x[N, C, H, W] / y[N, 1, H, W].
Var div_spatial(const Var& x, const Var& y);

// Unary.
Var silu(const Var& x);
Var relu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var exp(const Var& x);
Var expm1(const Var& x);
Var log1p(const Var& x);
Var square(const Var& x);
Var abs(const Var& x);  ///< subgradient 0 at 0
Var clamp(const Var& x, double lo, double hi);  ///< zero gradient outside (lo, hi)
/// log(1 + mu x) / log(1 + mu).
Var mu_law(const Var& x, double mu);

// Reductions.
Var sum(const Var& x);
Var mean(const Var& x);
/// Sum over channels: [N, C, H, W] -> [N, 1, H, W], each channel weighted.
Var channel_weighted_sum(const Var& x, const std::vector<double>& weights);
/// [N, C, H, W] -> [N, C].
Var spatial_mean(const Var& x);

// Layout.
Var reshape(const Var& x, Shape shape);
Var concat(const std::vector<Var>& parts, int axis);
/// Channels [c0, c1) of an NCHW tensor.
Var slice_channels(const Var& x, int c0, int c1);
/// [N, C, H, W] -> [N, H*W, C].
Var to_tokens(const Var& x);
/// [N, H*W, C] -> [N, C, H, W].
Var from_tokens(const Var& t, int height, int width);
/// Non-overlapping p x p patches: [N, C, H, W] -> [N, (H/p)(W/p), C*p*p].
Var patchify(const Var& x, int patch);
Var upsample_nearest2x(const Var& x);
/// Forward difference along W (axis 3) or H (axis 2); zero in the last column/row.
Var forward_diff(const Var& x, int axis);

// Linear algebra.
/// x[..., Din] * w[Din, Dout] + b[Dout] (b may be undefined).
Var linear(const Var& x, const Var& w, const Var& b);
/// a[N, M, K] * b[N, K, P].
Var bmm(const Var& a, const Var& b);
/// a[N, M, K] * b[N, P, K]^T.
Var bmm_nt(const Var& a, const Var& b);
Var softmax_last(const Var& x);

/// 2-D convolution; w[Co, Ci, k, k], b[Co] may be undefined.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int padding);

/// Group normalization over (C/groups, H, W) per sample with affine gamma/beta[C].
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);

} // namespace physhdr::nn
