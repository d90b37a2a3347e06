#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "physhdr/nn/layers.hpp"

/// Conditioning signals derived from the LDR input: illumination features,
/// pseudo-depth, their fusion, and the token sequence fed to cross-attention.
namespace physhdr::encoders {

/// Frozen illumination feature extractor. Input is [N, 3, H, W] display
/// values in [0, 1]; output is [N, channels(), grid, grid].
class IlluminationEncoder {
public:
    virtual ~IlluminationEncoder() = default;
    virtual std::string name() const = 0;
    virtual int channels() const = 0;
    virtual nn::Tensor encode(const nn::Tensor& ldr, int grid) const = 0;
};

/// Frozen depth estimator. Output is [N, channels(), grid, grid] in [0, 1].
class DepthEncoder {
public:
    virtual ~DepthEncoder() = default;
    virtual std::string name() const = 0;
    virtual int channels() const = 0;
    virtual nn::Tensor encode(const nn::Tensor& ldr, int grid) const = 0;
};

/// Per-cell statistics of log luminance: mean, variance and the fraction of
/// pixels more than `highlight_ratio` times brighter than the image's
/// geometric mean. Variance and highlight fraction ignore global scaling.
class ToyIllumination final : public IlluminationEncoder {
public:
    explicit ToyIllumination(double highlight_ratio = 4.0) : log_threshold_(std::log(highlight_ratio)) {}
    std::string name() const override { return "toy"; }
    int channels() const override { return 3; }
    nn::Tensor encode(const nn::Tensor& ldr, int grid) const override;

private:
    double log_threshold_;
};

/// Box-smoothed inverse luminance, area-averaged to the grid and min-max
/// normalized per sample. A stand-in with the right interface, not a depth
/// estimate. Flat inputs map to 0.
class ToyDepth final : public DepthEncoder {
public:
    std::string name() const override { return "toy"; }
    int channels() const override { return 1; }
    nn::Tensor encode(const nn::Tensor& ldr, int grid) const override;
};

/// Learned map -> token sequence.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::string name() const = 0;
    /// [N, C, H, W] -> [N, tokens(H, W), dim()].
    virtual nn::Var embed(const nn::Var& map) const = 0;
    virtual int tokens(int height, int width) const = 0;
    virtual int dim() const = 0;
};

/// Non-overlapping p x p patches, a linear projection and a zero-initialized
/// learned position table.
class PatchEmbedding final : public EmbeddingProvider {
public:
    PatchEmbedding(nn::Init init, const std::string& name, int in_channels, int map_size, int patch, int d_embed);
    std::string name() const override { return "toy"; }
    nn::Var embed(const nn::Var& map) const override;
    int tokens(int height, int width) const override;
    int dim() const override { return d_embed_; }

private:
    nn::Linear proj_;
    nn::Var position_;
    int in_channels_;
    int map_size_;
    int patch_;
    int d_embed_;
};

using IlluminationFactory = std::function<std::unique_ptr<IlluminationEncoder>()>;
using DepthFactory = std::function<std::unique_ptr<DepthEncoder>()>;
using EmbeddingFactory = std::function<std::unique_ptr<EmbeddingProvider>(
    nn::Init init, const std::string& name, int in_channels, int map_size, int patch, int d_embed)>;

/// Provider ids for the three condition slots. Every id resolves or throws
/// ConfigError when the registry is built, before any training work starts.
class EncoderRegistry {
public:
    EncoderRegistry(const std::string& illumination, const std::string& depth, const std::string& embedding);

    static void register_illumination(const std::string& id, IlluminationFactory f);
    static void register_depth(const std::string& id, DepthFactory f);
    static void register_embedding(const std::string& id, EmbeddingFactory f);

    const IlluminationEncoder& illumination() const { return *illumination_; }
    const DepthEncoder& depth() const { return *depth_; }
    std::unique_ptr<EmbeddingProvider> make_embedding(nn::Init init, const std::string& name, int in_channels,
                                                      int map_size, int patch, int d_embed) const;
    const std::string& embedding_id() const { return embedding_id_; }

private:
    std::shared_ptr<const IlluminationEncoder> illumination_;
    std::shared_ptr<const DepthEncoder> depth_;
    std::string embedding_id_;
    EmbeddingFactory embedding_;
};

/// Separate 1x1 projections of the two maps, concatenated: [N, 2k, h, w].
class ConditionFusion {
public:
    ConditionFusion() = default;
    ConditionFusion(nn::Init init, const std::string& name, int ill_channels, int dep_channels, int k);
    nn::Var operator()(const nn::Var& ill, const nn::Var& dep) const;
    nn::Var project_illumination(const nn::Var& ill) const { return ill_proj_(ill); }
    nn::Var project_depth(const nn::Var& dep) const { return dep_proj_(dep); }
    int channels() const { return 2 * k_; }

private:
    nn::Conv2d ill_proj_;
    nn::Conv2d dep_proj_;
    int k_ = 0;
};

/// Which conditioning branches are active.
struct ConditionFlags {
    bool use_clip_of_ldr = false;
    bool use_depth = false;
    bool use_illum = false;
    bool use_fusion = false;
    bool use_emb = false;

    bool operator==(const ConditionFlags&) const = default;

    /// Label of the matching ablation ladder row, or "custom".
    std::string label() const;
    /// Throws ConfigError for combinations that cannot be built
    /// (fusion without both maps, embedding with no map to embed).
    void validate() const;
};

/// The ablation ladder, in order: baseline, +CLIP, +l_dep, +l_ill,
/// +l_dep⊕l_ill, +l_emb.
const std::vector<std::pair<std::string, ConditionFlags>>& ladder();
std::optional<ConditionFlags> flags_for_label(const std::string& label);

struct ConditionConfig {
    std::string illumination = "toy";
    std::string depth = "toy";
    std::string embedding = "toy";
    int grid = 8;     ///< h' = w' of the condition maps
    int k = 8;        ///< fusion projection width
    int patch = 2;
    int d_embed = 64;
    ConditionFlags flags = ladder().back().second;

    void validate() const;
};

/// Output of the frozen extractors for a batch; cheap to cache per sample.
struct ConditionFeatures {
    nn::Tensor ldr;           ///< [N, 3, grid, grid] area-resampled input
    nn::Tensor illumination;  ///< [N, c_ill, grid, grid]
    nn::Tensor depth;         ///< [N, c_dep, grid, grid]

    int batch() const { return ldr.dim(0); }
    /// Samples [i0, i1) of every tensor.
    ConditionFeatures slice(int i0, int i1) const;
    static ConditionFeatures concat(const std::vector<ConditionFeatures>& parts);
};

/// Builds the cross-attention token sequence for the active branches.
/// Branch tokens are concatenated in the order clip, fused/depth/illumination.
/// Maps that skip the embedding provider enter as one pooled token. With no
/// branch active the sequence is a single zero token.
class ConditionModule {
public:
    ConditionModule(nn::Init init, const std::string& name, const ConditionConfig& cfg,
                    std::shared_ptr<const EncoderRegistry> registry);

    /// `ldr` is [N, 3, H, W] in [0, 1] with H, W >= grid.
    ConditionFeatures extract(const nn::Tensor& ldr) const;
    nn::Var tokens(const ConditionFeatures& features) const;

    int n_tokens() const { return n_tokens_; }
    int d_embed() const { return cfg_.d_embed; }
    const ConditionConfig& config() const { return cfg_; }

private:
    nn::Var map_tokens(const nn::Var& map, const EmbeddingProvider* emb, const nn::Linear& pool) const;

    ConditionConfig cfg_;
    std::shared_ptr<const EncoderRegistry> registry_;
    ConditionFusion fusion_;
    std::unique_ptr<EmbeddingProvider> clip_embed_;
    std::unique_ptr<EmbeddingProvider> map_embed_;   ///< fused map, or single projected map
    std::unique_ptr<EmbeddingProvider> map_embed2_;  ///< second map when both enter unfused
    nn::Linear pool_;
    nn::Linear pool2_;
    int n_tokens_ = 0;
};

/// Area average of [N, C, H, W] down to [N, C, grid, grid] (cell edges at
/// floor(i H / grid)). Throws ShapeError when H or W < grid.
nn::Tensor area_resample(const nn::Tensor& x, int grid);

} // namespace physhdr::encoders
