#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <future>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "physhdr/image.hpp"

namespace physhdr::data {

/// Gain/offset of a scale-and-saturate exposure conversion.
struct ExposureParams {
    double alpha = 1.0;
    double beta = 0.0;

    /// Parses "alpha" or "alpha:beta". Throws ConfigError on malformed input.
    static ExposureParams parse(const std::string& text);
    std::string to_string() const;
};

/// clamp(round(alpha * x + beta), 0, 255), rounding half away from zero.
LdrImage synth_exposure(const LdrImage& ldr, const ExposureParams& params);

/// Camera model: exposure scaling, clipping at 1, gamma CRF, 8-bit quantization.
LdrImage simulate_ldr(const HdrImage& hdr, double exposure, double gamma = 2.2);

/// Bilinear resampling with half-pixel centers.
HdrImage resize_image(const HdrImage& img, int target_h, int target_w);
LdrImage resize_image(const LdrImage& img, int target_h, int target_w);

struct ManifestEntry {
    std::string ldr;  ///< relative to the manifest root
    std::string hdr;
    std::optional<std::string> exposure_tag;

    bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
    std::string name;
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;

    std::size_t size() const { return entries.size(); }
};

/// One entry per line: `<ldr_relpath>\t<hdr_relpath>[\t<exposure_tag>]`.
/// Blank lines and lines starting with '#' are ignored. The root is the
/// manifest's directory. Missing files or duplicate pairs throw.
DatasetManifest load_manifest(const std::filesystem::path& path, bool check_files = true);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
std::string format_manifest(const DatasetManifest& manifest);

struct SplitConfig {
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
};

struct Split {
    DatasetManifest train;
    DatasetManifest test;
};

/// Seeded Fisher-Yates shuffle of entry order; the first round(f * n)
/// shuffled entries go to train. Both halves keep manifest order.
Split split_dataset(const DatasetManifest& manifest, const SplitConfig& config);

/// Which LDR of a multi-exposure group is given to a single-exposure model.
enum class ExposurePick { Middle, First, Last };

struct PairOptions {
    int height = 64;
    int width = 64;
    /// Peak the ground-truth radiance is normalized to.
    double hdr_peak = 1.0;
    /// When non-empty, every single-exposure entry yields one pair per element.
    std::vector<ExposureParams> exposures;
    ExposurePick pick = ExposurePick::Middle;
    bool shuffle = true;
    std::uint64_t seed = 0;
    int workers = 1;
};

struct Sample {
    std::string id;
    LdrImage ldr;
    HdrImage hdr;
    float hdr_scale = 1.0f;  ///< factor the source radiance was divided by
};

struct EntryError {
    std::string path;
    std::string message;
};

/// Groups manifest entries by HDR target and keeps one LDR per group.
std::vector<ManifestEntry> select_single_exposure(const DatasetManifest& manifest, ExposurePick pick);

/// One epoch of LDR/HDR pairs. Workers decode ahead of the consumer; the
/// delivered order is the same for any worker count.
class PairStream {
public:
    PairStream(DatasetManifest manifest, PairOptions options, int epoch = 0);
    ~PairStream();
    PairStream(const PairStream&) = delete;
    PairStream& operator=(const PairStream&) = delete;

    /// Next successfully decoded pair, or nullopt at end of epoch.
    std::optional<Sample> next();

    const std::vector<EntryError>& errors() const { return errors_; }
    std::size_t planned() const { return jobs_.size(); }

private:
    struct Job {
        ManifestEntry entry;
        std::optional<ExposureParams> exposure;
        std::string id;
    };
    struct Result {
        std::optional<Sample> sample;
        EntryError error;
    };

    Result run(const Job& job) const;
    void refill();

    DatasetManifest manifest_;
    PairOptions options_;
    std::vector<Job> jobs_;
    std::size_t next_job_ = 0;
    std::deque<std::future<Result>> inflight_;
    std::vector<EntryError> errors_;
};

/// Drains a stream into memory.
std::vector<Sample> load_pairs(const DatasetManifest& manifest, const PairOptions& options, int epoch = 0,
                               std::vector<EntryError>* errors = nullptr);

/// Deterministic procedural HDR scene: sky gradient, colored panels, a
/// shaded sphere and a few small emitters well above the LDR clip level.
HdrImage synthetic_scene(std::uint64_t seed, int height, int width);

/// Index permutation produced by the seeded Fisher-Yates shuffle.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

} // namespace physhdr::data
