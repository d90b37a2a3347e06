#pragma once

#include <vector>

#include "physhdr/nn/ops.hpp"

/// Variance-preserving forward process and its closed-form inverse.
namespace physhdr::diffusion {

struct ScheduleConfig {
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;

    /// Throws ConfigError unless 0 < beta_start <= beta_end < 1 and timesteps >= 1.
    void validate() const;
};

/// Linear beta schedule. Timesteps are 1-based; alpha_bar(0) = 1.
class NoiseSchedule {
public:
    explicit NoiseSchedule(ScheduleConfig cfg = {});

    int timesteps() const { return cfg_.timesteps; }
    const ScheduleConfig& config() const { return cfg_; }

    double beta(int t) const;
    double alpha(int t) const { return 1.0 - beta(t); }
    /// Defined for t in [0, T].
    double alpha_bar(int t) const;

    /// Throws RangeError unless t is in [1, T].
    void check_t(int t) const;

private:
    ScheduleConfig cfg_;
    std::vector<double> beta_;       ///< index t - 1
    std::vector<double> alpha_bar_;  ///< index t, alpha_bar_[0] = 1
};

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
nn::Tensor forward_noise(const nn::Tensor& z0, int t, const nn::Tensor& eps, const NoiseSchedule& s);
/// Batched form with one timestep per sample.
nn::Var forward_noise(const nn::Var& z0, const std::vector<int>& t, const nn::Var& eps, const NoiseSchedule& s);

/// (z_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t). Throws NumericError when abar_t is 0.
nn::Tensor predict_x0(const nn::Tensor& zt, int t, const nn::Tensor& eps_hat, const NoiseSchedule& s);
nn::Var predict_x0(const nn::Var& zt, const std::vector<int>& t, const nn::Var& eps_hat, const NoiseSchedule& s);

/// Mean squared error over all elements.
double diffusion_loss(const nn::Tensor& eps, const nn::Tensor& eps_hat);
nn::Var diffusion_loss(const nn::Var& eps, const nn::Var& eps_hat);

/// `steps` timesteps from T down towards 1, evenly strided, strictly
/// decreasing, first = T. Throws RangeError unless steps is in [1, T].
std::vector<int> sampling_timesteps(int T, int steps);

/// One strided ancestral update from t to s < t given the clean estimate x0.
/// Adds sqrt(posterior variance) * noise; at s = 0 the result is x0.
nn::Tensor ancestral_step(const nn::Tensor& zt, const nn::Tensor& x0, int t, int s, const nn::Tensor& noise,
                          const NoiseSchedule& sched);

/// Sinusoidal timestep features, [N, dim] (sin half then cos half).
nn::Tensor timestep_embedding(const std::vector<int>& t, int dim);

} // namespace physhdr::diffusion
