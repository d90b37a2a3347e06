#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "physhdr/app.hpp"
#include "physhdr/error.hpp"

namespace physhdr::app {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw ConfigError("config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& value, const char* expected) {
    T out{};
    const char* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) bad_value(key, value, expected);
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
    if (value == "false" || value == "0" || value == "no" || value == "off") return false;
    bad_value(key, value, "a boolean");
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

struct Field {
    std::string name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field number(const std::string& name, T RunConfig::*m, const char* expected) {
    return {name, [=](RunConfig& c, const std::string& v) { c.*m = parse_number<T>(name, v, expected); },
            [=](const RunConfig& c) {
                if constexpr (std::is_floating_point_v<T>) return fmt(c.*m);
                else return std::to_string(c.*m);
            }};
}

Field text(const std::string& name, std::string RunConfig::*m) {
    return {name, [=](RunConfig& c, const std::string& v) { c.*m = v; }, [=](const RunConfig& c) { return c.*m; }};
}

Field flag(const std::string& name, bool RunConfig::*m) {
    return {name, [=](RunConfig& c, const std::string& v) { c.*m = parse_bool(name, v); },
            [=](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> f = [] {
        std::vector<Field> v{
            {"preset", [](RunConfig& c, const std::string& s) { c.preset = s; },
             [](const RunConfig& c) { return c.preset; }},
            text("train_manifest", &RunConfig::train_manifest),
            text("test_manifest", &RunConfig::test_manifest),
            number("train_fraction", &RunConfig::train_fraction, "a number"),
            number("synthetic_count", &RunConfig::synthetic_count, "an integer"),
            number("exposure", &RunConfig::exposure, "a number"),
            text("eval_split", &RunConfig::eval_split),
            number("epochs", &RunConfig::epochs, "an integer"),
            number("ladder_epochs", &RunConfig::ladder_epochs, "an integer"),
            number("batch_size", &RunConfig::batch_size, "an integer"),
            number("learning_rate", &RunConfig::learning_rate, "a number"),
            number("weight_decay", &RunConfig::weight_decay, "a number"),
            number("lambda_mat", &RunConfig::lambda_mat, "a number"),
            number("rec_weight", &RunConfig::rec_weight, "a number"),
            number("vae_steps", &RunConfig::vae_steps, "an integer"),
            number("vae_learning_rate", &RunConfig::vae_learning_rate, "a number"),
            number("checkpoint_every", &RunConfig::checkpoint_every, "an integer"),
            number("seed", &RunConfig::seed, "an unsigned integer"),
            text("resume", &RunConfig::resume),
            number("image_size", &RunConfig::image_size, "an integer"),
            number("timesteps", &RunConfig::timesteps, "an integer"),
            number("vae_base", &RunConfig::vae_base, "an integer"),
            number("unet_base", &RunConfig::unet_base, "an integer"),
            text("unet_mult", &RunConfig::unet_mult),
            number("cond_grid", &RunConfig::cond_grid, "an integer"),
            number("cond_k", &RunConfig::cond_k, "an integer"),
            number("cond_patch", &RunConfig::cond_patch, "an integer"),
            number("d_embed", &RunConfig::d_embed, "an integer"),
            text("illumination", &RunConfig::illumination),
            text("depth", &RunConfig::depth),
            text("embedding", &RunConfig::embedding),
            text("material", &RunConfig::material),
            text("perceptual", &RunConfig::perceptual),
            text("vdp", &RunConfig::vdp),
            number("mu", &RunConfig::mu, "a number"),
            text("trainable", &RunConfig::trainable),
            {"ablation_row",
             [](RunConfig& c, const std::string& s) {
                 c.ablation_row = s;
                 if (s == "custom") return;
                 const auto f = encoders::flags_for_label(s);
                 if (!f) throw ConfigError("config key 'ablation_row': unknown ladder row '" + s + "'");
                 c.use_clip_of_ldr = f->use_clip_of_ldr;
                 c.use_depth = f->use_depth;
                 c.use_illum = f->use_illum;
                 c.use_fusion = f->use_fusion;
                 c.use_emb = f->use_emb;
             },
             [](const RunConfig& c) { return c.ablation_row; }},
            flag("use_clip_of_ldr", &RunConfig::use_clip_of_ldr),
            flag("use_depth", &RunConfig::use_depth),
            flag("use_illum", &RunConfig::use_illum),
            flag("use_fusion", &RunConfig::use_fusion),
            flag("use_emb", &RunConfig::use_emb),
            number("sample_steps", &RunConfig::sample_steps, "an integer"),
            number("sample_seed", &RunConfig::sample_seed, "an unsigned integer"),
        };
        return v;
    }();
    return f;
}

const Field* find_field(const std::string& key) {
    for (const auto& f : fields())
        if (f.name == key) return &f;
    return nullptr;
}

} // namespace

RunConfig RunConfig::full() {
    RunConfig c;
    c.preset = "full";
    c.checkpoint_every = 10;
    return c;
}

RunConfig RunConfig::desk() {
    RunConfig c;
    c.preset = "desk";
    c.epochs = 2000;
    c.batch_size = 8;
    c.learning_rate = 1e-3;
    c.vae_steps = 500;
    c.checkpoint_every = 500;
    c.image_size = 64;
    c.vae_base = 16;
    c.unet_base = 32;
    c.unet_mult = "1,2,2";
    c.cond_grid = 8;
    c.cond_k = 8;
    c.cond_patch = 2;
    c.d_embed = 64;
    return c;
}

RunConfig RunConfig::preset_named(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "full") return full();
    throw ConfigError("config key 'preset': unknown preset '" + name + "' (expected desk or full)");
}

const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> k = [] {
        std::vector<std::string> out;
        for (const auto& f : fields()) out.push_back(f.name);
        return out;
    }();
    return k;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const Field* f = find_field(key);
    if (!f) throw ConfigError("unknown config key '" + key + "'");
    f->set(*this, trim(value));
}

std::vector<std::pair<std::string, std::string>> RunConfig::items() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& f : fields()) out.emplace_back(f.name, f.get(*this));
    return out;
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : items()) os << k << " = " << v << '\n';
    return os.str();
}

encoders::ConditionFlags RunConfig::flags() const {
    return {use_clip_of_ldr, use_depth, use_illum, use_fusion, use_emb};
}

std::vector<std::string> RunConfig::trainable_modules() const {
    std::vector<std::string> out;
    for (auto m : split_list(trainable)) {
        if (m.back() != '.') m += '.';
        out.push_back(m);
    }
    return out;
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.image_size = image_size;
    m.vae.base = vae_base;
    m.unet.base = unet_base;
    m.unet.mult.clear();
    for (const auto& s : split_list(unet_mult)) m.unet.mult.push_back(parse_number<int>("unet_mult", s, "integers"));
    // the time embedding width follows the base width
    m.unet.time_dim = unet_base;
    m.cond.illumination = illumination;
    m.cond.depth = depth;
    m.cond.embedding = embedding;
    m.cond.grid = cond_grid;
    m.cond.k = cond_k;
    m.cond.patch = cond_patch;
    m.cond.d_embed = d_embed;
    m.cond.flags = flags();
    m.schedule.timesteps = timesteps;
    m.finalize();
    return m;
}

metrics::MetricConfig RunConfig::metric_config() const {
    metrics::MetricConfig m;
    m.curve = ToneCurve::mu_law(mu);
    m.perceptual = perceptual;
    m.vdp = vdp;
    return m;
}

void RunConfig::validate() const {
    auto need = [](bool ok, const std::string& key, const std::string& what) {
        if (!ok) throw ConfigError("config key '" + key + "': " + what);
    };
    need(preset == "desk" || preset == "full", "preset", "must be desk or full");
    need(epochs >= 1, "epochs", "must be >= 1");
    need(ladder_epochs >= 0, "ladder_epochs", "must be >= 0");
    need(batch_size >= 1, "batch_size", "must be >= 1");
    need(learning_rate > 0.0, "learning_rate", "must be > 0");
    need(weight_decay >= 0.0, "weight_decay", "must be >= 0");
    need(lambda_mat >= 0.0, "lambda_mat", "must be >= 0");
    need(rec_weight >= 0.0, "rec_weight", "must be >= 0");
    need(vae_steps >= 0, "vae_steps", "must be >= 0");
    need(vae_learning_rate > 0.0, "vae_learning_rate", "must be > 0");
    need(checkpoint_every >= 0, "checkpoint_every", "must be >= 0");
    need(train_fraction > 0.0 && train_fraction < 1.0, "train_fraction", "must lie in (0, 1)");
    need(synthetic_count >= 1, "synthetic_count", "must be >= 1");
    need(exposure > 0.0, "exposure", "must be > 0");
    need(eval_split == "test" || eval_split == "train", "eval_split", "must be test or train");
    need(timesteps >= 1, "timesteps", "must be >= 1");
    need(sample_steps >= 1 && sample_steps <= timesteps, "sample_steps", "must lie in [1, timesteps]");
    need(mu > 0.0, "mu", "must be > 0");
    need(!test_manifest.empty() ? !train_manifest.empty() : true, "test_manifest", "requires train_manifest");

    if (ablation_row != "custom") {
        const auto f = encoders::flags_for_label(ablation_row);
        need(f.has_value(), "ablation_row", "unknown ladder row '" + ablation_row + "'");
        need(f->use_clip_of_ldr == use_clip_of_ldr && f->use_depth == use_depth && f->use_illum == use_illum &&
                 f->use_fusion == use_fusion && f->use_emb == use_emb,
             "ablation_row", "use_* flags differ from row '" + ablation_row + "'; set ablation_row = custom");
    }
    try {
        flags().validate();
        model_config();
        metrics::make_vdp(vdp);
        metrics::make_perceptual(perceptual);
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("invalid configuration: ") + e.what());
    }
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        if (!find_field(key))
            throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        if (!seen.insert(key).second)
            throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        out.emplace_back(key, trim(line.substr(eq + 1)));
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config_text(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
    using Items = std::vector<std::pair<std::string, std::string>>;
    Items from_file;
    if (file) from_file = read_config_file(*file);
    std::string preset = "desk";
    for (const Items* list : std::initializer_list<const Items*>{&from_file, &overrides})
        for (const auto& [k, v] : *list)
            if (k == "preset") preset = trim(v);
    RunConfig c = RunConfig::preset_named(preset);
    for (const Items* list : std::initializer_list<const Items*>{&from_file, &overrides})
        for (const auto& [k, v] : *list) c.set(k, v);
    c.validate();
    return c;
}

} // namespace physhdr::app
