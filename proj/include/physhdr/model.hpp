#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "physhdr/diffusion.hpp"
#include "physhdr/encoders.hpp"
#include "physhdr/image.hpp"
#include "physhdr/networks.hpp"

namespace physhdr {

/// Everything needed to rebuild a model with identical parameter layout.
struct ModelConfig {
    int image_size = 64;
    networks::VaeConfig vae;
    networks::UNetConfig unet;  ///< in/out channels and context width are derived
    encoders::ConditionConfig cond;
    diffusion::ScheduleConfig schedule;
    bool clip_x0 = true;  ///< clamp x0 estimates to the latent range (-1, 1)

    /// 64x64 images, f = 8, c_lat = 3, 2 down/up U-Net levels of base width 32.
    static ModelConfig desk();
    /// 512x512 images, f = 8, c_lat = 3, T = 1000.
    static ModelConfig full();
    /// Under 1e4 parameters, for gradient checks.
    static ModelConfig tiny();

    int latent_size() const { return image_size / vae.downsample; }
    /// Fills derived fields and validates. Throws ConfigError.
    void finalize();
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Parameter name prefixes of the sub-networks.
namespace prefix {
inline const std::string hdr_encoder = "hdr_encoder.";
inline const std::string ldr_encoder = "ldr_encoder.";
inline const std::string decoder = "decoder.";
inline const std::string unet = "unet.";
inline const std::string cond = "cond.";
} // namespace prefix

/// mu-law domain (mu = kDefaultMu) used for the VAE's HDR input; the decoder output is mapped back.
nn::Tensor hdr_to_vae_input(const nn::Tensor& hdr);
/// Display values in [0, 1] -> linearized (gamma 2.2) -> mu-law.
nn::Tensor ldr_to_vae_input(const nn::Tensor& ldr);

/// Trainable encoder E, decoder D, frozen LDR encoder E-bar, conditioning
/// module and denoiser, all parameters in one store.
class PhysHdrModel {
public:
    PhysHdrModel(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }
    const diffusion::NoiseSchedule& schedule() const { return schedule_; }
    const encoders::ConditionModule& conditioning() const { return *cond_; }

    /// E on log-domain HDR input.
    nn::Var encode_hdr(const nn::Var& vae_input) const { return hdr_encoder_(vae_input); }
    /// E-bar on an LDR batch in [0, 1]; never records a graph.
    nn::Tensor encode_ldr(const nn::Tensor& ldr) const;
    /// D to log-domain values.
    nn::Var decode(const nn::Var& z) const { return decoder_(z); }
    /// D followed by exp(y) - 1 clamped at 0.
    nn::Var decode_radiance(const nn::Var& z) const;

    nn::Var predict_noise(const nn::Var& zt, const std::vector<int>& t, const nn::Tensor& ldr_latent,
                          const nn::Var& tokens) const;

    /// Copies E's weights into E-bar and freezes E-bar.
    void freeze_ldr_encoder();
    std::uint64_t ldr_encoder_checksum() const { return store_.checksum(prefix::ldr_encoder); }

    /// Parameters updated by the optimizer. `modules` holds prefixes from
    /// `prefix`; empty means E, D, U-Net and conditioning. E-bar is never included.
    std::vector<std::pair<std::string, nn::Var>> trainable(const std::vector<std::string>& modules = {}) const;

    /// Ancestral sampling over `steps` strided timesteps. `ldr` is
    /// [N, 3, S, S] in [0, 1] at the model resolution; returns radiance.
    nn::Tensor sample(const nn::Tensor& ldr, int steps, std::uint64_t seed) const;
    /// Resizes to the model resolution and back; output has the input's dims.
    HdrImage sample(const LdrImage& ldr, int steps, std::uint64_t seed) const;

    /// Encode-decode round trip of an HDR image at model resolution.
    nn::Tensor vae_encode(const HdrImage& img) const;
    HdrImage vae_decode(const nn::Tensor& z) const;

private:
    ModelConfig cfg_;
    nn::ParamStore store_;
    diffusion::NoiseSchedule schedule_;
    networks::LatentEncoder hdr_encoder_;
    networks::LatentEncoder ldr_encoder_;
    networks::LatentDecoder decoder_;
    std::unique_ptr<encoders::ConditionModule> cond_;
    networks::UNet unet_;
};

/// Deterministic 64-bit stream seed from a base seed and a counter.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t counter);

} // namespace physhdr
