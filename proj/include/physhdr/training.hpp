#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "physhdr/data.hpp"
#include "physhdr/material.hpp"
#include "physhdr/model.hpp"

namespace physhdr::training {

struct TrainConfig {
    double lr = 1e-5;
    double weight_decay = 1e-2;
    double lambda_mat = 0.2;
    /// Weight of the auxiliary D(E(h)) reconstruction term. It trains E and D
    /// alongside the diffusion objective and is not part of L_full.
    double rec_weight = 1.0;
    /// Prefixes of the trained modules; empty trains E, D, U-Net and conditioning.
    std::vector<std::string> modules;

    void validate() const;
};

/// One training batch with everything that does not depend on trainable
/// weights precomputed.
struct Batch {
    std::vector<std::string> ids;
    nn::Tensor hdr;        ///< [N, 3, S, S] radiance, unit peak per sample
    nn::Tensor ldr;        ///< [N, 3, S, S] display values in [0, 1]
    nn::Tensor vae_input;  ///< log(1 + hdr)
    nn::Tensor ldr_latent; ///< E-bar(ldr); valid once E-bar is frozen
    encoders::ConditionFeatures features;
    material::MaterialMaps gt_maps;
    std::vector<double> inv_peak;  ///< 1 / max(hdr_n)

    int size() const { return static_cast<int>(ids.size()); }
};

/// Builds a batch at the model resolution. Samples must already be sized to it.
Batch make_batch(const PhysHdrModel& model, const std::vector<data::Sample>& samples,
                 const material::DecompositionProvider& provider);
/// Recomputes the E-bar latents (after E-bar changes).
void refresh_ldr_latent(const PhysHdrModel& model, Batch& batch);

struct LossGraph {
    nn::Var l_d;
    nn::Var l_mat;
    nn::Var l_full;
    nn::Var l_rec;
    nn::Var objective;  ///< l_full + rec_weight * l_rec
    std::vector<int> t;
};

/// Forward pass of one step. Timesteps and noise come from `step_seed` only.
LossGraph compute_losses(const PhysHdrModel& model, const Batch& batch, const TrainConfig& cfg,
                         const material::DecompositionProvider& provider, std::uint64_t step_seed);

struct StepResult {
    double l_d = 0.0;
    double l_mat = 0.0;
    double l_full = 0.0;
    double l_rec = 0.0;
    double grad_norm = 0.0;
};

/// Forward, backward and one optimizer update. Throws NumericError (with the
/// sampled timesteps and norms) before touching weights if anything is non-finite.
StepResult training_step(PhysHdrModel& model, nn::AdamW& opt, const Batch& batch, const TrainConfig& cfg,
                         const material::DecompositionProvider& provider, std::uint64_t step_seed);

/// Plain reconstruction update of E and D: mean |D(E(x)) - x| in the log domain.
double vae_step(PhysHdrModel& model, nn::AdamW& opt, const Batch& batch);

} // namespace physhdr::training
