#include <algorithm>
#include <map>
#include <mutex>

#include "physhdr/encoders.hpp"
#include "physhdr/error.hpp"

namespace physhdr::encoders {

using nn::Tensor;
using nn::Var;
using nn::Shape;

// ---- patch embedding ------------------------------------------------------

PatchEmbedding::PatchEmbedding(nn::Init init, const std::string& name, int in_channels, int map_size, int patch,
                               int d_embed)
    : in_channels_(in_channels), map_size_(map_size), patch_(patch), d_embed_(d_embed) {
    if (patch < 1 || map_size < 1 || map_size % patch != 0)
        throw ConfigError("embedding: patch " + std::to_string(patch) + " does not tile a " +
                          std::to_string(map_size) + "x" + std::to_string(map_size) + " map");
    if (d_embed < 1 || in_channels < 1) throw ConfigError("embedding: dims must be >= 1");
    proj_ = nn::Linear(init, name + ".proj", in_channels * patch * patch, d_embed);
    const int L = tokens(map_size, map_size);
    position_ = init.store.add(name + ".position", Tensor({L * d_embed}));
}

int PatchEmbedding::tokens(int height, int width) const { return (height / patch_) * (width / patch_); }

Var PatchEmbedding::embed(const Var& map) const {
    if (map.value().rank() != 4 || map.dim(1) != in_channels_ || map.dim(2) != map_size_ || map.dim(3) != map_size_)
        throw ShapeError("embedding: expected [N, " + std::to_string(in_channels_) + ", " + std::to_string(map_size_) +
                         ", " + std::to_string(map_size_) + "], got " + nn::to_string(map.shape()));
    const int N = map.dim(0), L = tokens(map_size_, map_size_);
    const Var t = proj_(nn::patchify(map, patch_));
    const Var flat = nn::reshape(t, {N, L * d_embed_, 1, 1});
    return nn::reshape(nn::add_channel_bias(flat, position_), {N, L, d_embed_});
}

// ---- registry -------------------------------------------------------------

namespace {

struct Factories {
    std::mutex mutex;
    std::map<std::string, IlluminationFactory> illumination;
    std::map<std::string, DepthFactory> depth;
    std::map<std::string, EmbeddingFactory> embedding;
};

Factories& factories() {
    static Factories f;
    return f;
}

template <typename Map, typename F>
void add_factory(Map& map, const std::string& slot, const std::string& id, F f) {
    if (id.empty() || id == "toy") throw ConfigError("encoders." + slot + ": id '" + id + "' is reserved");
    if (!f) throw ConfigError("encoders." + slot + ": provider '" + id + "' has no factory");
    std::lock_guard lock(factories().mutex);
    map[id] = std::move(f);
}

template <typename Map>
typename Map::mapped_type find_factory(const Map& map, const std::string& slot, const std::string& id) {
    std::lock_guard lock(factories().mutex);
    auto it = map.find(id);
    if (it == map.end())
        throw ConfigError("encoders." + slot + ": no provider named '" + id + "' is available in this build");
    return it->second;
}

std::unique_ptr<EmbeddingProvider> make_patch_embedding(nn::Init init, const std::string& name, int in_channels,
                                                        int map_size, int patch, int d_embed) {
    return std::make_unique<PatchEmbedding>(init, name, in_channels, map_size, patch, d_embed);
}

} // namespace

void EncoderRegistry::register_illumination(const std::string& id, IlluminationFactory f) {
    add_factory(factories().illumination, "illumination", id, std::move(f));
}
void EncoderRegistry::register_depth(const std::string& id, DepthFactory f) {
    add_factory(factories().depth, "depth", id, std::move(f));
}
void EncoderRegistry::register_embedding(const std::string& id, EmbeddingFactory f) {
    add_factory(factories().embedding, "embedding", id, std::move(f));
}

EncoderRegistry::EncoderRegistry(const std::string& illumination, const std::string& depth,
                                 const std::string& embedding)
    : embedding_id_(embedding) {
    if (illumination == "toy")
        illumination_ = std::make_shared<ToyIllumination>();
    else
        illumination_ = find_factory(factories().illumination, "illumination", illumination)();
    if (depth == "toy")
        depth_ = std::make_shared<ToyDepth>();
    else
        depth_ = find_factory(factories().depth, "depth", depth)();
    embedding_ = embedding == "toy" ? EmbeddingFactory(make_patch_embedding)
                                    : find_factory(factories().embedding, "embedding", embedding);
}

std::unique_ptr<EmbeddingProvider> EncoderRegistry::make_embedding(nn::Init init, const std::string& name,
                                                                   int in_channels, int map_size, int patch,
                                                                   int d_embed) const {
    auto p = embedding_(init, name, in_channels, map_size, patch, d_embed);
    if (p->dim() != d_embed || p->tokens(map_size, map_size) < 1)
        throw ConfigError("encoders.embedding: provider '" + embedding_id_ + "' does not produce " +
                          std::to_string(d_embed) + "-dim tokens");
    return p;
}

// ---- fusion ---------------------------------------------------------------

ConditionFusion::ConditionFusion(nn::Init init, const std::string& name, int ill_channels, int dep_channels, int k)
    : k_(k) {
    if (k < 1) throw ConfigError("fusion width k must be >= 1");
    ill_proj_ = nn::Conv2d(init, name + ".ill", ill_channels, k, 1);
    dep_proj_ = nn::Conv2d(init, name + ".dep", dep_channels, k, 1);
}

Var ConditionFusion::operator()(const Var& ill, const Var& dep) const {
    if (ill.value().rank() != 4 || dep.value().rank() != 4 || ill.dim(0) != dep.dim(0) || ill.dim(2) != dep.dim(2) ||
        ill.dim(3) != dep.dim(3))
        throw ShapeError("fuse_conditions: illumination " + nn::to_string(ill.shape()) + " and depth " +
                         nn::to_string(dep.shape()) + " do not share a grid");
    return nn::concat({ill_proj_(ill), dep_proj_(dep)}, 1);
}

// ---- flags ----------------------------------------------------------------

const std::vector<std::pair<std::string, ConditionFlags>>& ladder() {
    static const std::vector<std::pair<std::string, ConditionFlags>> rows = {
        {"baseline", {}},
        {"+CLIP", {.use_clip_of_ldr = true}},
        {"+l_dep", {.use_clip_of_ldr = true, .use_depth = true}},
        {"+l_ill", {.use_clip_of_ldr = true, .use_illum = true}},
        {"+l_dep⊕l_ill", {.use_clip_of_ldr = true, .use_depth = true, .use_illum = true, .use_fusion = true}},
        {"+l_emb", {.use_depth = true, .use_illum = true, .use_fusion = true, .use_emb = true}},
    };
    return rows;
}

std::optional<ConditionFlags> flags_for_label(const std::string& label) {
    for (const auto& [name, flags] : ladder())
        if (name == label) return flags;
    return std::nullopt;
}

std::string ConditionFlags::label() const {
    for (const auto& [name, flags] : ladder())
        if (flags == *this) return name;
    return "custom";
}

void ConditionFlags::validate() const {
    if (use_fusion && !(use_depth && use_illum))
        throw ConfigError("ablation.use_fusion requires both ablation.use_depth and ablation.use_illum");
    if (use_emb && !(use_depth || use_illum))
        throw ConfigError("ablation.use_emb needs a depth or illumination map to embed");
}

void ConditionConfig::validate() const {
    if (grid < 1) throw ConfigError("encoders.grid must be >= 1");
    if (k < 1) throw ConfigError("encoders.k must be >= 1");
    if (d_embed < 1) throw ConfigError("encoders.d_embed must be >= 1");
    if (patch < 1 || grid % patch != 0)
        throw ConfigError("encoders.patch must divide encoders.grid (" + std::to_string(grid) + ")");
    flags.validate();
}

// ---- features -------------------------------------------------------------

namespace {

Tensor slice_batch(const Tensor& t, int i0, int i1) {
    Shape s = t.shape();
    const std::size_t per = t.numel() / s[0];
    s[0] = i1 - i0;
    std::vector<double> v(t.data() + i0 * per, t.data() + i1 * per);
    return Tensor(std::move(s), std::move(v));
}

Tensor concat_batch(const std::vector<const Tensor*>& parts) {
    Shape s = parts.front()->shape();
    std::vector<double> v;
    s[0] = 0;
    for (const Tensor* p : parts) {
        if (p->rank() != static_cast<int>(s.size()) || !std::equal(s.begin() + 1, s.end(), p->shape().begin() + 1))
            throw ShapeError("condition features: mismatched shapes in batch concat");
        s[0] += p->dim(0);
        v.insert(v.end(), p->data(), p->data() + p->numel());
    }
    return Tensor(std::move(s), std::move(v));
}

} // namespace

ConditionFeatures ConditionFeatures::slice(int i0, int i1) const {
    if (i0 < 0 || i1 > batch() || i0 >= i1) throw ShapeError("condition features: bad slice");
    return {slice_batch(ldr, i0, i1), slice_batch(illumination, i0, i1), slice_batch(depth, i0, i1)};
}

ConditionFeatures ConditionFeatures::concat(const std::vector<ConditionFeatures>& parts) {
    if (parts.empty()) throw ShapeError("condition features: empty concat");
    std::vector<const Tensor*> a, b, c;
    for (const auto& p : parts) {
        a.push_back(&p.ldr);
        b.push_back(&p.illumination);
        c.push_back(&p.depth);
    }
    return {concat_batch(a), concat_batch(b), concat_batch(c)};
}

// ---- module ---------------------------------------------------------------

ConditionModule::ConditionModule(nn::Init init, const std::string& name, const ConditionConfig& cfg,
                                 std::shared_ptr<const EncoderRegistry> registry)
    : cfg_(cfg), registry_(std::move(registry)) {
    cfg_.validate();
    const ConditionFlags& f = cfg_.flags;
    const int g = cfg_.grid, d = cfg_.d_embed;
    const int c_ill = registry_->illumination().channels(), c_dep = registry_->depth().channels();

    if (f.use_clip_of_ldr) {
        clip_embed_ = registry_->make_embedding(init, name + ".clip", 3, g, cfg_.patch, d);
        n_tokens_ += clip_embed_->tokens(g, g);
    }
    if (f.use_depth || f.use_illum) fusion_ = ConditionFusion(init, name + ".fuse", c_ill, c_dep, cfg_.k);

    auto add_map = [&](const std::string& suffix, int channels, std::unique_ptr<EmbeddingProvider>& emb,
                       nn::Linear& pool) {
        if (f.use_emb) {
            emb = registry_->make_embedding(init, name + suffix, channels, g, cfg_.patch, d);
            n_tokens_ += emb->tokens(g, g);
        } else {
            pool = nn::Linear(init, name + suffix + ".pool", channels, d);
            n_tokens_ += 1;
        }
    };
    if (f.use_fusion) {
        add_map(".emb", fusion_.channels(), map_embed_, pool_);
    } else {
        if (f.use_depth) add_map(".emb", cfg_.k, map_embed_, pool_);
        if (f.use_illum) add_map(f.use_depth ? ".emb2" : ".emb", cfg_.k, f.use_depth ? map_embed2_ : map_embed_,
                                 f.use_depth ? pool2_ : pool_);
    }
    if (n_tokens_ == 0) n_tokens_ = 1;
}

ConditionFeatures ConditionModule::extract(const Tensor& ldr) const {
    const int g = cfg_.grid;
    ConditionFeatures out;
    out.ldr = area_resample(ldr, g);
    const int N = ldr.dim(0);
    out.illumination = cfg_.flags.use_illum ? registry_->illumination().encode(ldr, g)
                                            : Tensor({N, registry_->illumination().channels(), g, g});
    out.depth = cfg_.flags.use_depth ? registry_->depth().encode(ldr, g)
                                     : Tensor({N, registry_->depth().channels(), g, g});
    return out;
}

Var ConditionModule::map_tokens(const Var& map, const EmbeddingProvider* emb, const nn::Linear& pool) const {
    if (emb) return emb->embed(map);
    const int N = map.dim(0);
    return nn::reshape(pool(nn::spatial_mean(map)), {N, 1, cfg_.d_embed});
}

Var ConditionModule::tokens(const ConditionFeatures& features) const {
    const ConditionFlags& f = cfg_.flags;
    const int N = features.batch();
    std::vector<Var> parts;
    if (f.use_clip_of_ldr) parts.push_back(clip_embed_->embed(Var(features.ldr)));
    const Var ill(features.illumination), dep(features.depth);
    if (f.use_fusion) {
        parts.push_back(map_tokens(fusion_(ill, dep), map_embed_.get(), pool_));
    } else {
        if (f.use_depth) parts.push_back(map_tokens(fusion_.project_depth(dep), map_embed_.get(), pool_));
        if (f.use_illum) {
            const Var proj = fusion_.project_illumination(ill);
            parts.push_back(f.use_depth ? map_tokens(proj, map_embed2_.get(), pool2_)
                                        : map_tokens(proj, map_embed_.get(), pool_));
        }
    }
    if (parts.empty()) return Var(Tensor({N, 1, cfg_.d_embed}));
    return parts.size() == 1 ? parts.front() : nn::concat(parts, 1);
}

} // namespace physhdr::encoders
