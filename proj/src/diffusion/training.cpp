#include "physhdr/training.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "physhdr/error.hpp"
#include "physhdr/nn/image_tensor.hpp"

namespace physhdr::training {

using nn::Tensor;
using nn::Var;

void TrainConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning_rate must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(rec_weight >= 0.0)) throw ConfigError("rec_weight must be >= 0");
    material::LossWeights{lambda_mat}.validate();
}

Batch make_batch(const PhysHdrModel& model, const std::vector<data::Sample>& samples,
                 const material::DecompositionProvider& provider) {
    if (samples.empty()) throw ShapeError("make_batch: empty batch");
    const int S = model.config().image_size;
    std::vector<HdrImage> hdr;
    std::vector<LdrImage> ldr;
    Batch b;
    for (const auto& s : samples) {
        if (s.hdr.height() != S || s.hdr.width() != S || s.ldr.height() != S || s.ldr.width() != S)
            throw ShapeError("make_batch: sample " + s.id + " is not " + std::to_string(S) + "x" + std::to_string(S));
        b.ids.push_back(s.id);
        hdr.push_back(s.hdr);
        ldr.push_back(s.ldr);
        const float peak = max_value(s.hdr);
        b.inv_peak.push_back(peak > 0.0f ? 1.0 / peak : 1.0);
    }
    b.hdr = nn::to_tensor(hdr);
    b.ldr = nn::to_tensor(ldr);
    b.vae_input = hdr_to_vae_input(b.hdr);
    b.features = model.conditioning().extract(b.ldr);
    {
        nn::NoGradGuard no_grad;
        b.gt_maps = provider.decompose(nn::scale_per_sample(Var(b.hdr), b.inv_peak)).values();
    }
    refresh_ldr_latent(model, b);
    return b;
}

void refresh_ldr_latent(const PhysHdrModel& model, Batch& batch) { batch.ldr_latent = model.encode_ldr(batch.ldr); }

namespace {

std::string describe(const std::vector<int>& t) {
    std::ostringstream os;
    os << "t=[";
    for (std::size_t i = 0; i < t.size(); ++i) os << (i ? "," : "") << t[i];
    os << "]";
    return os.str();
}

void build_losses(const PhysHdrModel& model, const Batch& batch, const TrainConfig& cfg,
                  const material::DecompositionProvider& provider, std::mt19937_64& rng, LossGraph& g);

} // namespace

LossGraph compute_losses(const PhysHdrModel& model, const Batch& batch, const TrainConfig& cfg,
                         const material::DecompositionProvider& provider, std::uint64_t step_seed) {
    const auto& sched = model.schedule();
    const int N = batch.size();
    std::mt19937_64 rng(step_seed);
    std::uniform_int_distribution<int> pick_t(1, sched.timesteps());
    LossGraph g;
    for (int n = 0; n < N; ++n) g.t.push_back(pick_t(rng));
    try {
        build_losses(model, batch, cfg, provider, rng, g);
    } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + ", " + describe(g.t));
    }
    return g;
}

namespace {

void build_losses(const PhysHdrModel& model, const Batch& batch, const TrainConfig& cfg,
                  const material::DecompositionProvider& provider, std::mt19937_64& rng, LossGraph& g) {
    const auto& sched = model.schedule();

    const Var x(batch.vae_input);
    const Var z0 = model.encode_hdr(x);
    const Var eps(Tensor::randn(z0.shape(), rng));
    // The diffusion target is a fixed latent; E learns through the reconstruction term.
    const Var zt = diffusion::forward_noise(z0.detach(), g.t, eps, sched);
    const Var tokens = model.conditioning().tokens(batch.features);
    const Var eps_hat = model.predict_noise(zt, g.t, batch.ldr_latent, tokens);
    g.l_d = diffusion::diffusion_loss(eps, eps_hat);

    auto material_term = [&] {
        Var x0 = diffusion::predict_x0(zt, g.t, eps_hat, sched);
        if (model.config().clip_x0) x0 = nn::clamp(x0, -1.0, 1.0);
        const Var radiance = nn::scale_per_sample(model.decode_radiance(x0), batch.inv_peak);
        const material::MaterialMaps& gt = batch.gt_maps;
        const material::MaterialVars gt_vars{Var(gt.albedo), Var(gt.roughness), Var(gt.metallic)};
        return material::material_loss(gt_vars, provider.decompose(radiance));
    };
    if (cfg.lambda_mat > 0.0) {
        g.l_mat = material_term();
    } else {
        // still logged, but kept out of the graph
        nn::NoGradGuard no_grad;
        g.l_mat = material_term();
    }
    g.l_full = material::total_loss(g.l_d, g.l_mat, material::LossWeights{cfg.lambda_mat});

    g.objective = g.l_full;
    if (cfg.rec_weight > 0.0) {
        g.l_rec = nn::mean(nn::abs(nn::sub(model.decode(z0), x)));
        g.objective = nn::add(g.l_full, nn::scale(g.l_rec, cfg.rec_weight));
    } else {
        g.l_rec = Var(Tensor({1}));
    }
}

} // namespace

namespace {

double grad_norm(const std::vector<std::pair<std::string, Var>>& params) {
    double acc = 0.0;
    for (const auto& [name, v] : params) {
        if (!v.has_grad()) continue;
        for (double g : v.node()->grad.values()) acc += g * g;
    }
    return std::sqrt(acc);
}

} // namespace

StepResult training_step(PhysHdrModel& model, nn::AdamW& opt, const Batch& batch, const TrainConfig& cfg,
                         const material::DecompositionProvider& provider, std::uint64_t step_seed) {
    model.params().zero_grad();
    LossGraph g;
    try {
        g = compute_losses(model, batch, cfg, provider, step_seed);
    } catch (const NumericError& e) {
        throw NumericError(std::string("training step aborted: ") + e.what());
    }
    StepResult r{g.l_d.item(), g.l_mat.item(), g.l_full.item(), g.l_rec.item(), 0.0};
    if (!std::isfinite(g.objective.item()))
        throw NumericError("training step aborted: non-finite objective, " + describe(g.t));
    nn::backward(g.objective);
    r.grad_norm = grad_norm(opt.params());
    if (!std::isfinite(r.grad_norm))
        throw NumericError("training step aborted: non-finite gradient, " + describe(g.t) +
                           ", L_full=" + std::to_string(r.l_full));
    opt.step();
    return r;
}

double vae_step(PhysHdrModel& model, nn::AdamW& opt, const Batch& batch) {
    model.params().zero_grad();
    const Var x(batch.vae_input);
    const Var loss = nn::mean(nn::abs(nn::sub(model.decode(model.encode_hdr(x)), x)));
    const double v = loss.item();
    if (!std::isfinite(v)) throw NumericError("VAE step aborted: non-finite reconstruction loss");
    nn::backward(loss);
    opt.step();
    return v;
}

} // namespace physhdr::training
