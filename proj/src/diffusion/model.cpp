#include "physhdr/model.hpp"

#include <cmath>

#include "physhdr/data.hpp"
#include "physhdr/error.hpp"
#include "physhdr/nn/image_tensor.hpp"
#include "physhdr/tonemap.hpp"

namespace physhdr {

using nn::Tensor;
using nn::Var;

ModelConfig ModelConfig::desk() {
    ModelConfig c;
    c.finalize();
    return c;
}

ModelConfig ModelConfig::full() {
    ModelConfig c;
    c.image_size = 512;
    c.vae.base = 64;
    c.unet.base = 128;
    c.unet.mult = {1, 2, 4, 4};
    c.unet.time_dim = 128;
    c.cond.grid = 64;
    c.cond.patch = 8;
    c.cond.d_embed = 768;
    c.finalize();
    return c;
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.image_size = 16;
    c.vae.base = 2;
    c.unet.base = 4;
    c.unet.mult = {1, 1};
    c.unet.time_dim = 4;
    c.cond.grid = 2;
    c.cond.k = 2;
    c.cond.patch = 1;
    c.cond.d_embed = 4;
    c.finalize();
    return c;
}

void ModelConfig::finalize() {
    vae.validate();
    if (image_size < 1 || image_size % vae.downsample != 0)
        throw ConfigError("model.image_size " + std::to_string(image_size) + " is not divisible by vae.downsample " +
                          std::to_string(vae.downsample));
    unet.in_channels = 2 * vae.latent_channels;
    unet.out_channels = vae.latent_channels;
    unet.context_dim = cond.d_embed;
    unet.validate();
    const int div = 1 << (unet.mult.size() - 1);
    if (latent_size() % div != 0)
        throw ConfigError("latent size " + std::to_string(latent_size()) + " does not support " +
                          std::to_string(unet.mult.size()) + " U-Net levels");
    cond.validate();
    if (cond.grid > image_size) throw ConfigError("encoders.grid exceeds the image size");
    schedule.validate();
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    const auto& f = c.cond.flags;
    j = {
        {"image_size", c.image_size},
        {"vae", {{"image_channels", c.vae.image_channels},
                 {"latent_channels", c.vae.latent_channels},
                 {"downsample", c.vae.downsample},
                 {"base", c.vae.base}}},
        {"unet", {{"base", c.unet.base}, {"mult", c.unet.mult}, {"time_dim", c.unet.time_dim}, {"attention", c.unet.attention}}},
        {"cond", {{"illumination", c.cond.illumination},
                  {"depth", c.cond.depth},
                  {"embedding", c.cond.embedding},
                  {"grid", c.cond.grid},
                  {"k", c.cond.k},
                  {"patch", c.cond.patch},
                  {"d_embed", c.cond.d_embed},
                  {"flags", {{"use_clip_of_ldr", f.use_clip_of_ldr},
                             {"use_depth", f.use_depth},
                             {"use_illum", f.use_illum},
                             {"use_fusion", f.use_fusion},
                             {"use_emb", f.use_emb}}}}},
        {"schedule", {{"timesteps", c.schedule.timesteps},
                      {"beta_start", c.schedule.beta_start},
                      {"beta_end", c.schedule.beta_end}}},
        {"clip_x0", c.clip_x0},
    };
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    try {
        c.image_size = j.at("image_size");
        const auto& v = j.at("vae");
        c.vae.image_channels = v.at("image_channels");
        c.vae.latent_channels = v.at("latent_channels");
        c.vae.downsample = v.at("downsample");
        c.vae.base = v.at("base");
        const auto& u = j.at("unet");
        c.unet.base = u.at("base");
        c.unet.mult = u.at("mult").get<std::vector<int>>();
        c.unet.time_dim = u.at("time_dim");
        c.unet.attention = u.at("attention");
        const auto& k = j.at("cond");
        c.cond.illumination = k.at("illumination");
        c.cond.depth = k.at("depth");
        c.cond.embedding = k.at("embedding");
        c.cond.grid = k.at("grid");
        c.cond.k = k.at("k");
        c.cond.patch = k.at("patch");
        c.cond.d_embed = k.at("d_embed");
        const auto& f = k.at("flags");
        c.cond.flags.use_clip_of_ldr = f.at("use_clip_of_ldr");
        c.cond.flags.use_depth = f.at("use_depth");
        c.cond.flags.use_illum = f.at("use_illum");
        c.cond.flags.use_fusion = f.at("use_fusion");
        c.cond.flags.use_emb = f.at("use_emb");
        const auto& s = j.at("schedule");
        c.schedule.timesteps = s.at("timesteps");
        c.schedule.beta_start = s.at("beta_start");
        c.schedule.beta_end = s.at("beta_end");
        c.clip_x0 = j.at("clip_x0");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    c.finalize();
}

namespace {

const double kVaeLogMu = std::log1p(kDefaultMu);

double to_vae(double x) { return std::log1p(kDefaultMu * std::max(0.0, x)) / kVaeLogMu; }

} // namespace

Tensor hdr_to_vae_input(const Tensor& hdr) {
    Tensor out(hdr.shape());
    for (std::size_t i = 0; i < hdr.numel(); ++i) out[i] = to_vae(hdr[i]);
    return out;
}

Tensor ldr_to_vae_input(const Tensor& ldr) {
    Tensor out(ldr.shape());
    for (std::size_t i = 0; i < ldr.numel(); ++i) out[i] = to_vae(std::pow(std::clamp(ldr[i], 0.0, 1.0), 2.2));
    return out;
}

PhysHdrModel::PhysHdrModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), schedule_(cfg_.schedule) {
    cfg_.finalize();
    std::mt19937_64 rng(seed);
    nn::Init init{store_, rng};
    hdr_encoder_ = networks::LatentEncoder(init, "hdr_encoder", cfg_.vae);
    ldr_encoder_ = networks::LatentEncoder(init, "ldr_encoder", cfg_.vae);
    decoder_ = networks::LatentDecoder(init, "decoder", cfg_.vae);
    auto registry = std::make_shared<encoders::EncoderRegistry>(cfg_.cond.illumination, cfg_.cond.depth,
                                                                  cfg_.cond.embedding);
    cond_ = std::make_unique<encoders::ConditionModule>(init, "cond", cfg_.cond, registry);
    unet_ = networks::UNet(init, "unet", cfg_.unet);
    store_.set_trainable(prefix::ldr_encoder, false);
}

Tensor PhysHdrModel::encode_ldr(const Tensor& ldr) const {
    nn::NoGradGuard no_grad;
    return ldr_encoder_(Var(ldr_to_vae_input(ldr))).value();
}

// inverse of the mu-law input map
Var PhysHdrModel::decode_radiance(const Var& z) const {
    return nn::scale(nn::expm1(nn::scale(nn::relu(decoder_(z)), kVaeLogMu)), 1.0 / kDefaultMu);
}

Var PhysHdrModel::predict_noise(const Var& zt, const std::vector<int>& t, const Tensor& ldr_latent,
                                const Var& tokens) const {
    if (zt.value().rank() != 4 || !zt.value().same_shape(ldr_latent))
        throw ShapeError("predict_noise: z_t " + nn::to_string(zt.shape()) + " and LDR latent " +
                         nn::to_string(ldr_latent.shape()) + " differ");
    for (int ti : t) schedule_.check_t(ti);
    return unet_(nn::concat({zt, Var(ldr_latent)}, 1), t, tokens);
}

void PhysHdrModel::freeze_ldr_encoder() {
    for (const auto& [name, v] : store_.select({prefix::hdr_encoder})) {
        Var dst = store_.get(prefix::ldr_encoder + name.substr(prefix::hdr_encoder.size()));
        dst.node()->value = v.value();
    }
    store_.set_trainable(prefix::ldr_encoder, false);
}

std::vector<std::pair<std::string, Var>> PhysHdrModel::trainable(const std::vector<std::string>& modules) const {
    std::vector<std::string> prefixes = modules;
    if (prefixes.empty()) prefixes = {prefix::hdr_encoder, prefix::decoder, prefix::unet, prefix::cond};
    for (const auto& p : prefixes) {
        if (p == prefix::ldr_encoder) throw ConfigError("the LDR encoder is frozen and cannot be trained");
        if (p != prefix::hdr_encoder && p != prefix::decoder && p != prefix::unet && p != prefix::cond)
            throw ConfigError("unknown trainable module '" + p + "'");
    }
    return store_.select(prefixes);
}

Tensor PhysHdrModel::sample(const Tensor& ldr, int steps, std::uint64_t seed) const {
    const int S = cfg_.image_size;
    if (ldr.rank() != 4 || ldr.dim(1) != 3 || ldr.dim(2) != S || ldr.dim(3) != S)
        throw ShapeError("sample: expected [N, 3, " + std::to_string(S) + ", " + std::to_string(S) + "], got " +
                         nn::to_string(ldr.shape()));
    const std::vector<int> ts = diffusion::sampling_timesteps(schedule_.timesteps(), steps);
    nn::NoGradGuard no_grad;
    const int N = ldr.dim(0), s = cfg_.latent_size();
    const Tensor ldr_latent = encode_ldr(ldr);
    const Var tokens = cond_->tokens(cond_->extract(ldr));

    std::mt19937_64 rng(seed);
    const nn::Shape lat{N, cfg_.vae.latent_channels, s, s};
    Tensor z = Tensor::randn(lat, rng);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i], prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        const std::vector<int> tv(N, t);
        const Tensor eps_hat = predict_noise(Var(z), tv, ldr_latent, tokens).value();
        Tensor x0 = diffusion::predict_x0(z, t, eps_hat, schedule_);
        if (cfg_.clip_x0)
            for (double& v : x0.values()) v = std::clamp(v, -1.0, 1.0);
        z = diffusion::ancestral_step(z, x0, t, prev, Tensor::randn(lat, rng), schedule_);
    }
    return decode_radiance(Var(z)).value();
}

HdrImage PhysHdrModel::sample(const LdrImage& ldr, int steps, std::uint64_t seed) const {
    const int S = cfg_.image_size;
    const LdrImage small = data::resize_image(ldr, S, S);
    const HdrImage out = nn::to_image(sample(nn::to_tensor(small), steps, seed));
    return data::resize_image(out, ldr.height(), ldr.width());
}

Tensor PhysHdrModel::vae_encode(const HdrImage& img) const {
    validate(img);
    nn::NoGradGuard no_grad;
    return hdr_encoder_(Var(hdr_to_vae_input(nn::to_tensor(img)))).value();
}

HdrImage PhysHdrModel::vae_decode(const Tensor& z) const {
    nn::NoGradGuard no_grad;
    return nn::to_image(decode_radiance(Var(z)).value());
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t counter) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (counter + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace physhdr
