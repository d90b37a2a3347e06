#include <cmath>
#include <string>

#include "physhdr/diffusion.hpp"
#include "physhdr/error.hpp"

namespace physhdr::diffusion {

using nn::Tensor;
using nn::Var;

void ScheduleConfig::validate() const {
    if (timesteps < 1) throw ConfigError("diffusion.timesteps must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ConfigError("diffusion betas must satisfy 0 < beta_start <= beta_end < 1");
}

NoiseSchedule::NoiseSchedule(ScheduleConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const int T = cfg_.timesteps;
    beta_.resize(T);
    alpha_bar_.resize(T + 1);
    alpha_bar_[0] = 1.0;
    for (int i = 0; i < T; ++i) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
        beta_[i] = cfg_.beta_start + (cfg_.beta_end - cfg_.beta_start) * frac;
        alpha_bar_[i + 1] = alpha_bar_[i] * (1.0 - beta_[i]);
    }
}

void NoiseSchedule::check_t(int t) const {
    if (t < 1 || t > cfg_.timesteps)
        throw RangeError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(cfg_.timesteps) + "]");
}

double NoiseSchedule::beta(int t) const {
    check_t(t);
    return beta_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t > cfg_.timesteps)
        throw RangeError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(cfg_.timesteps) + "]");
    return alpha_bar_[t];
}

namespace {

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + nn::to_string(a.shape()) + " vs " +
                         nn::to_string(b.shape()));
}

double checked_abar(const NoiseSchedule& s, int t) {
    s.check_t(t);
    const double ab = s.alpha_bar(t);
    if (!(ab > 0.0)) throw NumericError("predict_x0: alpha_bar(" + std::to_string(t) + ") is 0");
    return ab;
}

void check_batch(const Var& x, const std::vector<int>& t, const char* op) {
    if (x.value().rank() < 1 || static_cast<int>(t.size()) != x.dim(0))
        throw ShapeError(std::string(op) + ": need one timestep per sample");
}

} // namespace

Tensor forward_noise(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s) {
    s.check_t(t);
    same_shape(z0, eps, "forward_noise");
    const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1.0 - s.alpha_bar(t));
    Tensor out(z0.shape());
    for (std::size_t i = 0; i < z0.numel(); ++i) out[i] = a * z0[i] + b * eps[i];
    return out;
}

Var forward_noise(const Var& z0, const std::vector<int>& t, const Var& eps, const NoiseSchedule& s) {
    check_batch(z0, t, "forward_noise");
    same_shape(z0.value(), eps.value(), "forward_noise");
    std::vector<double> a, b;
    for (int ti : t) {
        s.check_t(ti);
        a.push_back(std::sqrt(s.alpha_bar(ti)));
        b.push_back(std::sqrt(1.0 - s.alpha_bar(ti)));
    }
    return nn::add(nn::scale_per_sample(z0, a), nn::scale_per_sample(eps, b));
}

Tensor predict_x0(const Tensor& zt, int t, const Tensor& eps_hat, const NoiseSchedule& s) {
    const double ab = checked_abar(s, t);
    same_shape(zt, eps_hat, "predict_x0");
    const double inv = 1.0 / std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Tensor out(zt.shape());
    for (std::size_t i = 0; i < zt.numel(); ++i) out[i] = (zt[i] - b * eps_hat[i]) * inv;
    return out;
}

Var predict_x0(const Var& zt, const std::vector<int>& t, const Var& eps_hat, const NoiseSchedule& s) {
    check_batch(zt, t, "predict_x0");
    same_shape(zt.value(), eps_hat.value(), "predict_x0");
    std::vector<double> inv, c;
    for (int ti : t) {
        const double ab = checked_abar(s, ti);
        inv.push_back(1.0 / std::sqrt(ab));
        c.push_back(-std::sqrt(1.0 - ab) / std::sqrt(ab));
    }
    return nn::add(nn::scale_per_sample(zt, inv), nn::scale_per_sample(eps_hat, c));
}

double diffusion_loss(const Tensor& eps, const Tensor& eps_hat) {
    same_shape(eps, eps_hat, "diffusion_loss");
    if (eps.empty()) throw ShapeError("diffusion_loss: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < eps.numel(); ++i) {
        const double d = eps[i] - eps_hat[i];
        acc += d * d;
    }
    return acc / static_cast<double>(eps.numel());
}

Var diffusion_loss(const Var& eps, const Var& eps_hat) {
    same_shape(eps.value(), eps_hat.value(), "diffusion_loss");
    return nn::mean(nn::square(nn::sub(eps, eps_hat)));
}

std::vector<int> sampling_timesteps(int T, int steps) {
    if (steps < 1 || steps > T)
        throw RangeError("sampling steps " + std::to_string(steps) + " outside [1, " + std::to_string(T) + "]");
    std::vector<int> ts;
    ts.reserve(steps);
    for (int i = 0; i < steps; ++i) {
        // evenly spaced over (0, T], rounded; strictly decreasing because steps <= T
        ts.push_back(static_cast<int>(std::llround(static_cast<double>(T) * (steps - i) / steps)));
    }
    return ts;
}

Tensor ancestral_step(const Tensor& zt, const Tensor& x0, int t, int s, const Tensor& noise,
                      const NoiseSchedule& sched) {
    sched.check_t(t);
    if (s < 0 || s >= t) throw RangeError("ancestral_step: previous timestep must lie in [0, t)");
    same_shape(zt, x0, "ancestral_step");
    same_shape(zt, noise, "ancestral_step");
    const double ab_t = sched.alpha_bar(t), ab_s = sched.alpha_bar(s);
    const double beta_ts = 1.0 - ab_t / ab_s;
    const double c0 = std::sqrt(ab_s) * beta_ts / (1.0 - ab_t);
    const double ct = std::sqrt(ab_t / ab_s) * (1.0 - ab_s) / (1.0 - ab_t);
    const double sigma = std::sqrt(std::max(0.0, (1.0 - ab_s) / (1.0 - ab_t) * beta_ts));
    Tensor out(zt.shape());
    for (std::size_t i = 0; i < zt.numel(); ++i) out[i] = c0 * x0[i] + ct * zt[i] + sigma * noise[i];
    return out;
}

Tensor timestep_embedding(const std::vector<int>& t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw ConfigError("timestep embedding width must be even and >= 2");
    const int half = dim / 2;
    Tensor out({static_cast<int>(t.size()), dim});
    for (std::size_t n = 0; n < t.size(); ++n) {
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * i / half);
            out[n * dim + i] = std::sin(t[n] * freq);
            out[n * dim + half + i] = std::cos(t[n] * freq);
        }
    }
    return out;
}

} // namespace physhdr::diffusion
