#include "physhdr/nn/layers.hpp"

#include <cmath>
#include <cstring>

#include "physhdr/error.hpp"

namespace physhdr::nn {

Var ParamStore::add(const std::string& name, Tensor init, bool trainable) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
    Var v(std::move(init), trainable);
    index_[name] = entries_.size();
    entries_.emplace_back(name, v);
    return v;
}

Var ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return entries_[it->second].second;
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : entries_) n += v.value().numel();
    return n;
}

std::vector<std::pair<std::string, Var>> ParamStore::select(const std::vector<std::string>& prefixes) const {
    std::vector<std::pair<std::string, Var>> out;
    for (const auto& e : entries_) {
        bool match = prefixes.empty();
        for (const auto& p : prefixes) match = match || e.first.rfind(p, 0) == 0;
        if (match) out.push_back(e);
    }
    return out;
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
    for (auto& [name, v] : entries_)
        if (name.rfind(prefix, 0) == 0) v.node()->requires_grad = trainable;
}

void ParamStore::zero_grad() {
    for (auto& [name, v] : entries_) v.zero_grad();
}

std::uint64_t ParamStore::checksum(const std::string& prefix) const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, v] : entries_) {
        if (name.rfind(prefix, 0) != 0) continue;
        mix(name.data(), name.size());
        mix(v.value().data(), v.value().numel() * sizeof(double));
    }
    return h;
}

Conv2d::Conv2d(Init init, const std::string& name, int in_ch, int out_ch, int kernel, int stride, int padding,
               double gain)
    : out_ch_(out_ch), stride_(stride), padding_(padding < 0 ? kernel / 2 : padding) {
    const double bound = gain * std::sqrt(3.0 / (in_ch * kernel * kernel));
    weight_ = init.store.add(name + ".weight", Tensor::uniform({out_ch, in_ch, kernel, kernel}, init.rng, -bound, bound));
    bias_ = init.store.add(name + ".bias", Tensor({out_ch}));
}

Var Conv2d::operator()(const Var& x) const { return conv2d(x, weight_, bias_, stride_, padding_); }

Linear::Linear(Init init, const std::string& name, int in_dim, int out_dim, bool bias, double gain) {
    const double bound = gain * std::sqrt(3.0 / in_dim);
    weight_ = init.store.add(name + ".weight", Tensor::uniform({in_dim, out_dim}, init.rng, -bound, bound));
    if (bias) bias_ = init.store.add(name + ".bias", Tensor({out_dim}));
}

Var Linear::operator()(const Var& x) const { return linear(x, weight_, bias_); }

GroupNorm::GroupNorm(Init init, const std::string& name, int channels, int groups) : groups_(groups) {
    gamma_ = init.store.add(name + ".gamma", Tensor({channels}, 1.0));
    beta_ = init.store.add(name + ".beta", Tensor({channels}));
}

Var GroupNorm::operator()(const Var& x) const { return group_norm(x, gamma_, beta_, groups_); }

int pick_groups(int channels, int preferred) {
    if (channels <= 1) return 1;
    for (int g = std::min(preferred, channels / 2); g > 1; --g) {
        if (channels % g == 0) return g;
    }
    return 1;
}

AdamW::AdamW(std::vector<std::pair<std::string, Var>> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
    for (const auto& [name, v] : params_) {
        state_[name] = {Tensor::zeros_like(v.value()), Tensor::zeros_like(v.value())};
    }
}

void AdamW::zero_grad() {
    for (auto& [name, v] : params_) v.zero_grad();
}

void AdamW::step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (auto& [name, v] : params_) {
        if (!v.has_grad()) continue;
        const Tensor& g = v.node()->grad;
        Tensor& p = v.mutable_value();
        auto& st = state_.at(name);
        for (std::size_t i = 0; i < p.numel(); ++i) {
            st.m[i] = config_.beta1 * st.m[i] + (1.0 - config_.beta1) * g[i];
            st.v[i] = config_.beta2 * st.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            p[i] -= config_.lr * config_.weight_decay * p[i];
            p[i] -= config_.lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + config_.eps);
        }
    }
}

void AdamW::load_state(std::map<std::string, Moments> state, std::int64_t steps) {
    for (const auto& [name, v] : params_) {
        auto it = state.find(name);
        if (it == state.end() || !it->second.m.same_shape(v.value()) || !it->second.v.same_shape(v.value())) {
            throw CheckpointError("optimizer state missing or mis-shaped for " + name);
        }
    }
    state_ = std::move(state);
    step_ = steps;
}

} // namespace physhdr::nn
