#include "physhdr/networks.hpp"

#include <cmath>

#include "physhdr/diffusion.hpp"
#include "physhdr/error.hpp"

namespace physhdr::networks {

using nn::Tensor;
using nn::Var;

// ---- VAE ------------------------------------------------------------------

void VaeConfig::validate() const {
    if (image_channels < 1 || latent_channels < 1 || base < 1) throw ConfigError("vae: channel counts must be >= 1");
    if (downsample < 1 || (downsample & (downsample - 1)) != 0)
        throw ConfigError("vae.downsample must be a power of two, got " + std::to_string(downsample));
}

int VaeConfig::levels() const {
    int n = 0;
    for (int f = downsample; f > 1; f /= 2) ++n;
    return n;
}

namespace {

int stage_width(const VaeConfig& cfg, int level) { return level == 0 ? cfg.base : 2 * cfg.base; }

void check_image(const Var& x, int channels, const char* who) {
    if (x.value().rank() != 4 || x.dim(1) != channels)
        throw ShapeError(std::string(who) + ": expected [N, " + std::to_string(channels) + ", H, W], got " +
                         nn::to_string(x.shape()));
}

} // namespace

LatentEncoder::LatentEncoder(nn::Init init, const std::string& name, const VaeConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    int ch = stage_width(cfg_, 0);
    convs_.emplace_back(init, name + ".in", cfg_.image_channels, ch, 3);
    act_.push_back(true);
    for (int l = 0; l < cfg_.levels(); ++l) {
        const int next = stage_width(cfg_, l + 1);
        convs_.emplace_back(init, name + ".down" + std::to_string(l), ch, next, 3, 2, 1);
        act_.push_back(true);
        convs_.emplace_back(init, name + ".conv" + std::to_string(l), next, next, 3);
        act_.push_back(true);
        ch = next;
    }
    convs_.emplace_back(init, name + ".out", ch, cfg_.latent_channels, 3);
    act_.push_back(false);
}

Var LatentEncoder::operator()(const Var& x) const {
    check_image(x, cfg_.image_channels, "vae_encode");
    if (x.dim(2) % cfg_.downsample != 0 || x.dim(3) % cfg_.downsample != 0)
        throw ShapeError("vae_encode: " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                         " is not divisible by the downsample factor " + std::to_string(cfg_.downsample));
    Var h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        h = convs_[i](h);
        if (act_[i]) h = nn::silu(h);
    }
    return nn::tanh(h);
}

LatentDecoder::LatentDecoder(nn::Init init, const std::string& name, const VaeConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int L = cfg_.levels();
    int ch = stage_width(cfg_, L);
    in_ = nn::Conv2d(init, name + ".in", cfg_.latent_channels, ch, 3);
    for (int l = L - 1; l >= 0; --l) {
        const int next = stage_width(cfg_, l);
        stages_.emplace_back(nn::Conv2d(init, name + ".up" + std::to_string(l), ch, next, 3),
                             nn::Conv2d(init, name + ".conv" + std::to_string(l), next, next, 3));
        ch = next;
    }
    out_ = nn::Conv2d(init, name + ".out", ch, cfg_.image_channels, 3);
}

Var LatentDecoder::operator()(const Var& z) const {
    check_image(z, cfg_.latent_channels, "vae_decode");
    Var h = nn::silu(in_(z));
    for (const auto& [up, conv] : stages_) {
        h = nn::silu(up(nn::upsample_nearest2x(h)));
        h = nn::silu(conv(h));
    }
    return out_(h);
}

// ---- U-Net ----------------------------------------------------------------

void UNetConfig::validate() const {
    if (in_channels < 1 || out_channels < 1 || base < 1 || context_dim < 1)
        throw ConfigError("unet: channel counts must be >= 1");
    if (mult.empty()) throw ConfigError("unet.mult needs at least one level");
    for (int m : mult)
        if (m < 1) throw ConfigError("unet.mult entries must be >= 1");
    if (time_dim < 2 || time_dim % 2 != 0) throw ConfigError("unet.time_dim must be even");
}

ResBlock::ResBlock(nn::Init init, const std::string& name, int in_ch, int out_ch, int temb_dim) {
    norm1_ = nn::GroupNorm(init, name + ".norm1", in_ch, nn::pick_groups(in_ch));
    conv1_ = nn::Conv2d(init, name + ".conv1", in_ch, out_ch, 3);
    temb_proj_ = nn::Linear(init, name + ".temb", temb_dim, out_ch);
    norm2_ = nn::GroupNorm(init, name + ".norm2", out_ch, nn::pick_groups(out_ch));
    conv2_ = nn::Conv2d(init, name + ".conv2", out_ch, out_ch, 3);
    has_skip_ = in_ch != out_ch;
    if (has_skip_) skip_ = nn::Conv2d(init, name + ".skip", in_ch, out_ch, 1);
}

Var ResBlock::operator()(const Var& x, const Var& temb) const {
    Var h = conv1_(nn::silu(norm1_(x)));
    h = nn::add_sample_channel(h, temb_proj_(nn::silu(temb)));
    h = conv2_(nn::silu(norm2_(h)));
    return nn::add(has_skip_ ? skip_(x) : x, h);
}

CrossAttention::CrossAttention(nn::Init init, const std::string& name, int channels, int context_dim)
    : channels_(channels) {
    norm_ = nn::GroupNorm(init, name + ".norm", channels, nn::pick_groups(channels));
    q_ = nn::Linear(init, name + ".q", channels, channels, false);
    k_ = nn::Linear(init, name + ".k", context_dim, channels, false);
    v_ = nn::Linear(init, name + ".v", context_dim, channels, false);
    out_ = nn::Linear(init, name + ".out", channels, channels);
}

Var CrossAttention::operator()(const Var& x, const Var& context) const {
    const int H = x.dim(2), W = x.dim(3);
    const Var q = q_(nn::to_tokens(norm_(x)));
    const Var k = k_(context), v = v_(context);
    const Var attn = nn::softmax_last(nn::scale(nn::bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(channels_))));
    return nn::add(x, nn::from_tokens(out_(nn::bmm(attn, v)), H, W));
}

UNet::UNet(nn::Init init, const std::string& name, const UNetConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int temb_dim = 4 * cfg_.base;
    temb1_ = nn::Linear(init, name + ".temb1", cfg_.time_dim, temb_dim);
    temb2_ = nn::Linear(init, name + ".temb2", temb_dim, temb_dim);
    conv_in_ = nn::Conv2d(init, name + ".conv_in", cfg_.in_channels, cfg_.base, 3);

    const int L = static_cast<int>(cfg_.mult.size());
    auto width = [&](int level) { return cfg_.base * cfg_.mult[level]; };
    int ch = cfg_.base;
    for (int l = 0; l < L; ++l) {
        const std::string p = name + ".down" + std::to_string(l);
        Level level;
        level.res = ResBlock(init, p + ".res", ch, width(l), temb_dim);
        if (cfg_.attention) level.attn = CrossAttention(init, p + ".attn", width(l), cfg_.context_dim);
        if (l + 1 < L) level.resample = nn::Conv2d(init, p + ".resample", width(l), width(l), 3, 2, 1);
        down_.push_back(std::move(level));
        ch = width(l);
    }
    mid1_ = ResBlock(init, name + ".mid1", ch, ch, temb_dim);
    if (cfg_.attention) mid_attn_ = CrossAttention(init, name + ".mid_attn", ch, cfg_.context_dim);
    mid2_ = ResBlock(init, name + ".mid2", ch, ch, temb_dim);
    up_.resize(L);
    for (int l = L - 1; l >= 0; --l) {
        const std::string p = name + ".up" + std::to_string(l);
        Level& level = up_[l];
        level.res = ResBlock(init, p + ".res", ch + width(l), width(l), temb_dim);
        if (cfg_.attention) level.attn = CrossAttention(init, p + ".attn", width(l), cfg_.context_dim);
        if (l > 0) level.resample = nn::Conv2d(init, p + ".resample", width(l), width(l), 3);
        ch = width(l);
    }
    norm_out_ = nn::GroupNorm(init, name + ".norm_out", ch, nn::pick_groups(ch));
    conv_out_ = nn::Conv2d(init, name + ".conv_out", ch, cfg_.out_channels, 3, 1, -1, 0.0);
}

Var UNet::operator()(const Var& x, const std::vector<int>& t, const Var& context) const {
    check_image(x, cfg_.in_channels, "unet");
    const int N = x.dim(0), L = static_cast<int>(cfg_.mult.size());
    const int div = 1 << (L - 1);
    if (x.dim(2) % div != 0 || x.dim(3) % div != 0)
        throw ShapeError("unet: latent size must be divisible by " + std::to_string(div));
    if (static_cast<int>(t.size()) != N) throw ShapeError("unet: need one timestep per sample");
    if (context.value().rank() != 3 || context.dim(0) != N || context.dim(2) != cfg_.context_dim)
        throw ShapeError("unet: context must be [" + std::to_string(N) + ", L, " + std::to_string(cfg_.context_dim) +
                         "], got " + nn::to_string(context.shape()));

    const Var temb = temb2_(nn::silu(temb1_(Var(diffusion::timestep_embedding(t, cfg_.time_dim)))));
    Var h = conv_in_(x);
    std::vector<Var> skips;
    for (int l = 0; l < L; ++l) {
        h = down_[l].res(h, temb);
        if (cfg_.attention) h = down_[l].attn(h, context);
        skips.push_back(h);
        if (l + 1 < L) h = down_[l].resample(h);
    }
    h = mid1_(h, temb);
    if (cfg_.attention) h = mid_attn_(h, context);
    h = mid2_(h, temb);
    for (int l = L - 1; l >= 0; --l) {
        h = up_[l].res(nn::concat({h, skips[l]}, 1), temb);
        if (cfg_.attention) h = up_[l].attn(h, context);
        if (l > 0) h = up_[l].resample(nn::upsample_nearest2x(h));
    }
    return conv_out_(nn::silu(norm_out_(h)));
}

} // namespace physhdr::networks
