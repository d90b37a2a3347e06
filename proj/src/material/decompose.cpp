#include <map>
#include <mutex>

#include "physhdr/error.hpp"
#include "physhdr/material.hpp"
#include "physhdr/nn/image_tensor.hpp"

namespace physhdr::material {

using nn::Tensor;
using nn::Var;

MaterialVars ToyDecomposition::decompose(const Var& x) const {
    if (x.value().rank() != 4 || x.dim(1) != 3)
        throw ShapeError("decompose: expected [N, 3, H, W], got " + nn::to_string(x.shape()));
    const Params& p = params_;

    const Var lum = nn::channel_weighted_sum(x, {0.2126, 0.7152, 0.0722});
    const Var total = nn::add_scalar(nn::channel_weighted_sum(x, {1.0, 1.0, 1.0}), p.albedo_eps);
    const Var chroma = nn::div_spatial(x, total);

    // log1p(Y / d) equals log(Y + d) up to a constant, which the differences drop.
    const Var log_lum = nn::log1p(nn::scale(lum, 1.0 / p.log_offset));
    const Var energy = nn::add(nn::square(nn::forward_diff(log_lum, 3)), nn::square(nn::forward_diff(log_lum, 2)));
    const Var box(Tensor({1, 1, 3, 3}, 1.0 / 9.0));
    const Var smoothed = nn::conv2d(energy, box, Var(), 1, 1);
    const Var roughness = nn::div(smoothed, nn::add_scalar(smoothed, p.roughness_kappa));

    const Var y2 = nn::square(lum);
    const Var highlight = nn::div(y2, nn::add_scalar(y2, p.highlight_tau * p.highlight_tau));
    const Var centered = nn::add_channel_bias(chroma, Var(Tensor({3}, -1.0 / 3.0)));
    // 1.5 maps the largest squared distance from grey (a pure primary) to 1.
    const Var saturation = nn::scale(nn::channel_weighted_sum(nn::square(centered), {1.0, 1.0, 1.0}), 1.5);
    const Var metallic = nn::mul(highlight, nn::add_scalar(nn::scale(saturation, 0.75), 0.25));

    return {nn::clamp(chroma, 0.0, 1.0), nn::clamp(roughness, 0.0, 1.0), nn::clamp(metallic, 0.0, 1.0)};
}

namespace {

struct Registry {
    std::mutex mutex;
    std::map<std::string, ProviderFactory> factories;
};

Registry& registry() {
    static Registry r;
    return r;
}

} // namespace

void register_provider(const std::string& id, ProviderFactory factory) {
    if (id.empty() || id == "toy") throw ConfigError("material provider id '" + id + "' is reserved");
    if (!factory) throw ConfigError("material provider '" + id + "' has no factory");
    Registry& r = registry();
    std::lock_guard lock(r.mutex);
    r.factories[id] = std::move(factory);
}

std::vector<std::string> provider_ids() {
    Registry& r = registry();
    std::lock_guard lock(r.mutex);
    std::vector<std::string> ids{"toy"};
    for (const auto& [id, f] : r.factories) ids.push_back(id);
    return ids;
}

std::unique_ptr<DecompositionProvider> make_provider(const std::string& id) {
    if (id == "toy") return std::make_unique<ToyDecomposition>();
    Registry& r = registry();
    std::lock_guard lock(r.mutex);
    auto it = r.factories.find(id);
    if (it == r.factories.end())
        throw ConfigError("material.provider: no provider named '" + id + "' is available in this build");
    return it->second();
}

MaterialMaps decompose(const HdrImage& img, const DecompositionProvider& provider) {
    validate(img);
    const NormalizedRadiance norm = normalize_radiance(img);
    nn::NoGradGuard no_grad;
    MaterialMaps maps = provider.decompose(Var(nn::to_tensor(norm.image))).values();
    maps.validate();
    return maps;
}

MaterialMaps decompose(const HdrImage& img) { return decompose(img, ToyDecomposition{}); }

} // namespace physhdr::material
