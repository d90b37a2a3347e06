#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "physhdr/image.hpp"
#include "physhdr/nn/ops.hpp"
#include "physhdr/tonemap.hpp"

namespace physhdr::material {

/// Albedo [N, 3, H, W], roughness and metallic [N, 1, H, W], all in [0, 1].
struct MaterialMaps {
    nn::Tensor albedo;
    nn::Tensor roughness;
    nn::Tensor metallic;

    int batch() const { return albedo.dim(0); }
    int height() const { return albedo.dim(2); }
    int width() const { return albedo.dim(3); }

    /// Throws ShapeError on inconsistent dims, RangeError on values outside [0, 1].
    void validate() const;
};

/// Graph-attached maps, used when the loss has to reach the decoder.
struct MaterialVars {
    nn::Var albedo;
    nn::Var roughness;
    nn::Var metallic;

    MaterialMaps values() const { return {albedo.value(), roughness.value(), metallic.value()}; }
    MaterialVars detach() const { return {albedo.detach(), roughness.detach(), metallic.detach()}; }
};

struct LossWeights {
    double lambda_mat = 0.2;

    /// Throws ConfigError when lambda_mat is negative or not finite.
    void validate() const;
};

class DecompositionProvider {
public:
    virtual ~DecompositionProvider() = default;
    virtual std::string name() const = 0;
    /// `radiance` is [N, 3, H, W] linear radiance normalized to a unit peak.
    virtual MaterialVars decompose(const nn::Var& radiance) const = 0;
};

/// Closed-form stand-in for a learned intrinsic decomposition:
///   albedo    = rgb / (r + g + b + eps)
///   roughness = e / (e + kappa), e = box-smoothed squared gradient of log luminance
///   metallic  = highlight(Y) * (1/4 + 3/4 saturation)
/// Every stage is smooth so the map can sit inside the training loss.
class ToyDecomposition final : public DecompositionProvider {
public:
    struct Params {
        double albedo_eps = 1e-4;
        double log_offset = 1e-3;       ///< luminance offset before the log
        double roughness_kappa = 0.05;
        double highlight_tau = 0.1;     ///< luminance at which the highlight score is 1/2
    };

    ToyDecomposition() = default;
    explicit ToyDecomposition(Params p) : params_(p) {}

    std::string name() const override { return "toy"; }
    MaterialVars decompose(const nn::Var& radiance) const override;

private:
    Params params_;
};

using ProviderFactory = std::function<std::unique_ptr<DecompositionProvider>()>;

/// Adds a provider id. Replacing "toy" is not allowed.
void register_provider(const std::string& id, ProviderFactory factory);
std::vector<std::string> provider_ids();
/// Throws ConfigError for ids with no registered provider.
std::unique_ptr<DecompositionProvider> make_provider(const std::string& id);

/// Normalizes `img` by its own peak and decomposes it.
MaterialMaps decompose(const HdrImage& img, const DecompositionProvider& provider);
MaterialMaps decompose(const HdrImage& img);

/// Sum over the three maps of the mean absolute difference of tone-mapped
/// values, averaged over the batch.
double material_loss(const MaterialMaps& gt, const MaterialMaps& pred, const ToneCurve& curve = ToneCurve::mu_law());
nn::Var material_loss(const MaterialVars& gt, const MaterialVars& pred, const ToneCurve& curve = ToneCurve::mu_law());

/// L_d + lambda * L_mat. Throws NumericError on non-finite or negative inputs.
double total_loss(double l_d, double l_mat, const LossWeights& w);
nn::Var total_loss(const nn::Var& l_d, const nn::Var& l_mat, const LossWeights& w);

} // namespace physhdr::material
