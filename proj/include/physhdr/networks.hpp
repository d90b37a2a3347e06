#pragma once

#include <string>
#include <vector>

#include "physhdr/nn/layers.hpp"

/// VAE halves and the conditional denoising U-Net.
namespace physhdr::networks {

struct VaeConfig {
    int image_channels = 3;
    int latent_channels = 3;
    int downsample = 8;  ///< power of two
    int base = 16;       ///< first-stage width; later stages double once

    void validate() const;
    int levels() const;
};

/// image [N, 3, H, W] -> latent [N, c_lat, H/f, W/f] in (-1, 1).
class LatentEncoder {
public:
    LatentEncoder() = default;
    LatentEncoder(nn::Init init, const std::string& name, const VaeConfig& cfg);
    nn::Var operator()(const nn::Var& x) const;

private:
    VaeConfig cfg_;
    std::vector<nn::Conv2d> convs_;
    std::vector<bool> act_;
};

/// latent -> image-domain values (unbounded).
class LatentDecoder {
public:
    LatentDecoder() = default;
    LatentDecoder(nn::Init init, const std::string& name, const VaeConfig& cfg);
    nn::Var operator()(const nn::Var& z) const;

private:
    VaeConfig cfg_;
    nn::Conv2d in_;
    std::vector<std::pair<nn::Conv2d, nn::Conv2d>> stages_;
    nn::Conv2d out_;
};

struct UNetConfig {
    int in_channels = 6;
    int out_channels = 3;
    int base = 32;
    std::vector<int> mult = {1, 2, 2};  ///< one entry per resolution level
    int context_dim = 64;
    int time_dim = 32;                  ///< sinusoid width
    bool attention = true;

    void validate() const;
};

class ResBlock {
public:
    ResBlock() = default;
    ResBlock(nn::Init init, const std::string& name, int in_ch, int out_ch, int temb_dim);
    nn::Var operator()(const nn::Var& x, const nn::Var& temb) const;

private:
    nn::GroupNorm norm1_, norm2_;
    nn::Conv2d conv1_, conv2_;
    nn::Linear temb_proj_;
    nn::Conv2d skip_;
    bool has_skip_ = false;
};

/// Single-head attention from image tokens to a context sequence, residual.
class CrossAttention {
public:
    CrossAttention() = default;
    CrossAttention(nn::Init init, const std::string& name, int channels, int context_dim);
    nn::Var operator()(const nn::Var& x, const nn::Var& context) const;

private:
    nn::GroupNorm norm_;
    nn::Linear q_, k_, v_, out_;
    int channels_ = 0;
};

/// Noise predictor eps_theta(x, t, context). x is [N, in_channels, h, w]
/// with h, w divisible by 2^(levels - 1); context is [N, L, context_dim].
class UNet {
public:
    UNet() = default;
    UNet(nn::Init init, const std::string& name, const UNetConfig& cfg);
    nn::Var operator()(const nn::Var& x, const std::vector<int>& t, const nn::Var& context) const;
    const UNetConfig& config() const { return cfg_; }

private:
    struct Level {
        ResBlock res;
        CrossAttention attn;
        nn::Conv2d resample;  ///< stride-2 conv going down, conv after upsampling going up
    };

    UNetConfig cfg_;
    nn::Linear temb1_, temb2_;
    nn::Conv2d conv_in_;
    std::vector<Level> down_;
    ResBlock mid1_, mid2_;
    CrossAttention mid_attn_;
    std::vector<Level> up_;
    nn::GroupNorm norm_out_;
    nn::Conv2d conv_out_;
};

} // namespace physhdr::networks
