#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "physhdr/data.hpp"
#include "physhdr/metrics.hpp"
#include "physhdr/model.hpp"

/// Run configuration and the train / infer / eval / ablate / synth-data commands.
namespace physhdr::app {

/// Flat run configuration. Every field has a key of the same name, accepted in
/// config files (`key = value`, `#` comments) and as `--key value` flags.
struct RunConfig {
    std::string preset = "desk";

    // data
    std::string train_manifest;  ///< empty: procedural scenes
    std::string test_manifest;   ///< empty: split train_manifest with train_fraction
    double train_fraction = 0.8;
    int synthetic_count = 8;     ///< procedural scenes when no manifest is given
    double exposure = 4.0;       ///< LDR simulation exposure for procedural scenes
    std::string eval_split = "test";  ///< test | train

    // schedule of the run
    int epochs = 200;
    int ladder_epochs = 0;  ///< epochs of the six ladder rows in ablate; 0 = epochs
    int batch_size = 10;
    double learning_rate = 1e-5;
    double weight_decay = 1e-2;
    double lambda_mat = 0.2;
    double rec_weight = 1.0;
    int vae_steps = 0;
    double vae_learning_rate = 2e-3;
    int checkpoint_every = 0;  ///< epochs; 0 checkpoints only at the end
    std::uint64_t seed = 0;
    std::string resume;        ///< checkpoint to continue from

    // model
    int image_size = 512;
    int timesteps = 1000;
    int vae_base = 64;
    int unet_base = 128;
    std::string unet_mult = "1,2,4,4";
    int cond_grid = 64;
    int cond_k = 8;
    int cond_patch = 8;
    int d_embed = 768;

    // providers
    std::string illumination = "toy";
    std::string depth = "toy";
    std::string embedding = "toy";
    std::string material = "toy";
    std::string perceptual = "toy";
    std::string vdp = "stub";
    double mu = kDefaultMu;
    std::string trainable;  ///< comma separated module prefixes; empty = all but E-bar

    // conditioning
    std::string ablation_row = "+l_emb";  ///< ladder label, or "custom"
    bool use_clip_of_ldr = false;
    bool use_depth = true;
    bool use_illum = true;
    bool use_fusion = true;
    bool use_emb = true;

    // sampling
    int sample_steps = 50;
    std::uint64_t sample_seed = 0;

    /// 200 epochs, batch 10, lr 1e-5, lambda 0.2, T = 1000, 512x512, 80/20 split.
    static RunConfig full();
    /// 64x64, small networks, 8 procedural scenes, toy providers.
    static RunConfig desk();
    /// Throws ConfigError for an unknown preset.
    static RunConfig preset_named(const std::string& name);

    /// Sets one key from text. Throws ConfigError naming the key on unknown
    /// keys or unparsable values.
    void set(const std::string& key, const std::string& value);
    /// All keys with their current values, in a stable order.
    std::vector<std::pair<std::string, std::string>> items() const;
    static const std::vector<std::string>& keys();

    /// Throws ConfigError naming the offending key.
    void validate() const;

    ModelConfig model_config() const;
    encoders::ConditionFlags flags() const;
    metrics::MetricConfig metric_config() const;
    std::vector<std::string> trainable_modules() const;

    /// `key = value` lines, parsable by `parse_config_text`.
    std::string to_text() const;
};

/// Key/value pairs of a config file. Throws ConfigError (with line number)
/// on malformed lines or duplicate keys.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

/// Preset, then file, then flag overrides. The preset comes from the flags
/// when given there, else from the file, else desk.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::pair<std::string, std::string>>& overrides);

/// Append-only list of files a command produced, kept as run_manifest.json in the run directory.
class RunManifest {
public:
    explicit RunManifest(std::filesystem::path run_dir);
    void add(const std::filesystem::path& file, const std::string& kind);
    const std::filesystem::path& dir() const { return dir_; }

private:
    void flush() const;
    std::filesystem::path dir_;
    nlohmann::json files_;
};

struct Datasets {
    std::vector<data::Sample> train;
    std::vector<data::Sample> test;
    std::vector<data::EntryError> errors;
};

/// Loads or generates the train and evaluation samples at the model resolution.
Datasets load_datasets(const RunConfig& cfg);

struct TrainSummary {
    std::filesystem::path checkpoint;
    std::int64_t steps = 0;
    int epochs = 0;
    double first_l_full = 0.0;
    double last_l_full = 0.0;
};

/// Trains into `run_dir`: vae_log.jsonl, train_log.jsonl, config.txt,
/// checkpoints/epoch_<e>.phck and model.phck.
TrainSummary train(const RunConfig& cfg, const std::filesystem::path& run_dir);

/// Writes `out` (RGBE) and the Reinhard display PNG next to it.
void infer(const std::filesystem::path& checkpoint, const std::filesystem::path& ldr_path,
           const std::filesystem::path& out, int steps, std::uint64_t seed);

/// Samples every pair and evaluates against its ground truth at the model resolution.
metrics::MetricReport evaluate_model(const PhysHdrModel& model, const std::vector<data::Sample>& samples,
                                     int steps, std::uint64_t seed, const metrics::MetricConfig& mcfg,
                                     int batch_size = 8);

/// Loads `checkpoint`, evaluates the samples listed in `manifest` and writes
/// metrics.csv and metrics.json to `report_dir`.
metrics::MetricReport eval(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                           const std::filesystem::path& report_dir, const RunConfig& cfg);

struct AblationRow {
    std::string label;
    std::string group;  ///< "ladder" or "loss"
    std::optional<metrics::MetricReport> report;
    std::string error;
};

/// The six ladder rows and the lambda_mat = 0 / 0.2 pair, each trained and
/// evaluated under `out_dir/rows/<n>_<slug>` with its config snapshot.
/// Writes ablation.csv and ablation.json. Row failures are recorded.
std::vector<AblationRow> ablate(const RunConfig& cfg, const std::filesystem::path& out_dir);

/// Labels of the loss pair rows.
inline const std::string kLossRowLd = "L_d";
inline const std::string kLossRowFull = "L_d + L_mat";

struct SynthOptions {
    double base_exposure = 4.0;                  ///< camera exposure of the simulated LDR
    std::vector<data::ExposureParams> exposures;  ///< extra scale-and-saturate variants
    int generate = 0;                            ///< procedural scenes written to hdr_dir first
    int size = 64;                               ///< their resolution
    std::uint64_t seed = 0;
};

/// Simulated LDRs (plus exposure variants) for every .hdr under `hdr_dir`,
/// written next to `out_manifest` under ldr/, and the manifest itself.
data::DatasetManifest synth_data(const std::filesystem::path& hdr_dir, const std::filesystem::path& out_manifest,
                                 const SynthOptions& options);

} // namespace physhdr::app
