#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "physhdr/nn/ops.hpp"

namespace physhdr::nn {

/// Named, ordered collection of trainable tensors.
class ParamStore {
public:
    /// Registers a leaf. Throws on duplicate names.
    Var add(const std::string& name, Tensor init, bool trainable = true);

    const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
    Var get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t parameter_count() const;

    /// Vars whose name starts with any of the prefixes (all when empty).
    std::vector<std::pair<std::string, Var>> select(const std::vector<std::string>& prefixes) const;

    /// Switches gradient tracking for every param under `prefix`.
    void set_trainable(const std::string& prefix, bool trainable);
    void zero_grad();
    /// FNV-1a over names and raw value bytes of params matching `prefix`.
    std::uint64_t checksum(const std::string& prefix = "") const;

private:
    std::vector<std::pair<std::string, Var>> entries_;
    std::map<std::string, std::size_t> index_;
};

/// Weight initialization context shared by the modules of one model.
struct Init {
    ParamStore& store;
    std::mt19937_64& rng;
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(Init init, const std::string& name, int in_ch, int out_ch, int kernel, int stride = 1, int padding = -1,
           double gain = 1.0);
    Var operator()(const Var& x) const;
    int out_channels() const { return out_ch_; }

private:
    Var weight_;
    Var bias_;
    int out_ch_ = 0;
    int stride_ = 1;
    int padding_ = 0;
};

class Linear {
public:
    Linear() = default;
    Linear(Init init, const std::string& name, int in_dim, int out_dim, bool bias = true, double gain = 1.0);
    Var operator()(const Var& x) const;

private:
    Var weight_;
    Var bias_;
};

class GroupNorm {
public:
    GroupNorm() = default;
    GroupNorm(Init init, const std::string& name, int channels, int groups);
    Var operator()(const Var& x) const;

private:
    Var gamma_;
    Var beta_;
    int groups_ = 1;
};

/// Largest group count <= `preferred` that divides `channels` with at least
/// two channels per group (one when channels == 1).
int pick_groups(int channels, int preferred = 8);

struct AdamWConfig {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

/// Decoupled weight decay Adam.
class AdamW {
public:
    AdamW(std::vector<std::pair<std::string, Var>> params, AdamWConfig config);

    void step();
    void zero_grad();

    const AdamWConfig& config() const { return config_; }
    void set_lr(double lr) { config_.lr = lr; }
    std::int64_t steps() const { return step_; }

    struct Moments {
        Tensor m;
        Tensor v;
    };
    const std::map<std::string, Moments>& state() const { return state_; }
    void load_state(std::map<std::string, Moments> state, std::int64_t steps);
    const std::vector<std::pair<std::string, Var>>& params() const { return params_; }

private:
    std::vector<std::pair<std::string, Var>> params_;
    AdamWConfig config_;
    std::map<std::string, Moments> state_;
    std::int64_t step_ = 0;
};

} // namespace physhdr::nn
