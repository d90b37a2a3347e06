#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "physhdr/image.hpp"
#include "physhdr/tonemap.hpp"

namespace physhdr::metrics {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / mse), capped at kPsnrCap (mse = 0 included).
double psnr_from_mse(double mse);

/// Both images are divided by the ground-truth max, the prediction clamped
/// to [0, 1], then tone mapped and compared over all channels.
/// Throws ShapeError on a dims mismatch.
double psnr_mu(const HdrImage& gt, const HdrImage& pred, const ToneCurve& curve = ToneCurve::mu_law());

/// Single-scale SSIM on Rec.709 luminance of linear radiance: 11x11 Gaussian
/// window (sigma 1.5), K1 = 0.01, K2 = 0.03, mean over valid windows. The
/// dynamic range is the larger of the two luminance peaks. Images smaller
/// than the window use the largest odd window that fits.
double ssim_linear(const HdrImage& gt, const HdrImage& pred);

/// Perceptual distance backend. Implementations must return 0 for identical inputs.
class PerceptualProvider {
public:
    virtual ~PerceptualProvider() = default;
    virtual std::string name() const = 0;
    /// Human-readable description recorded in reports.
    virtual std::string label() const = 0;
    virtual double distance(const HdrImage& gt, const HdrImage& pred) const = 0;
};

/// Learned-metric stand-in: gradients of mu-law luminance at three box-filtered
/// scales plus the coarsest luminance itself, compared as
/// |fa - fb| / (|fa| + |fb|). Both images share the scale max(peak a, peak b),
/// which keeps the distance symmetric. Values lie in [0, 1].
class ToyPerceptual : public PerceptualProvider {
public:
    explicit ToyPerceptual(int scales = 3) : scales_(scales) {}
    std::string name() const override { return "toy"; }
    std::string label() const override { return "toy multi-scale gradient distance (LPIPS stand-in)"; }
    double distance(const HdrImage& gt, const HdrImage& pred) const override;

private:
    int scales_;
};

using PerceptualFactory = std::function<std::unique_ptr<PerceptualProvider>()>;
/// Throws ConfigError for the reserved id "toy".
void register_perceptual(const std::string& id, PerceptualFactory factory);
/// Throws ConfigError for an unknown id.
std::unique_ptr<PerceptualProvider> make_perceptual(const std::string& id);

/// HDR-VDP style quality backend; higher is better.
class VdpProvider {
public:
    virtual ~VdpProvider() = default;
    virtual std::string label() const = 0;
    virtual bool is_vdp() const = 0;
    /// Throws EvaluationError naming `id` on failure.
    virtual double quality(const std::string& id, const HdrImage& gt, const HdrImage& pred) const = 0;
};

/// 10 - clamp(log10(1 + 1e4 mse), 0, 10), with mse taken over linear radiance
/// divided by the ground-truth max. Equals 10 for identical images and never
/// increases with mse. Not a visual-difference model.
double vdp_stub_quality(const HdrImage& gt, const HdrImage& pred);

class VdpStub : public VdpProvider {
public:
    std::string label() const override { return "stub (log-MSE surrogate, not HDR-VDP)"; }
    bool is_vdp() const override { return false; }
    double quality(const std::string& id, const HdrImage& gt, const HdrImage& pred) const override;
};

/// Runs `command <gt.hdr> <pred.hdr>` per pair with both images written as
/// RGBE, and reads one decimal number from its standard output.
class ExternalVdp : public VdpProvider {
public:
    explicit ExternalVdp(std::string command);
    std::string label() const override { return "external: " + command_; }
    bool is_vdp() const override { return true; }
    double quality(const std::string& id, const HdrImage& gt, const HdrImage& pred) const override;

private:
    std::string command_;
};

/// "stub" or "external:<command>". Throws ConfigError otherwise.
std::unique_ptr<VdpProvider> make_vdp(const std::string& spec);

struct MetricConfig {
    ToneCurve curve = ToneCurve::mu_law();
    std::string perceptual = "toy";
    std::string vdp = "stub";
};

struct Pair {
    std::string id;
    HdrImage gt;
    HdrImage pred;
};

struct Row {
    std::string id;
    double psnr_db = 0.0;
    double ssim = 0.0;
    double perceptual = 0.0;
    double vdp_q = 0.0;
    std::optional<std::string> error;

    bool ok() const { return !error.has_value(); }
};

struct Stat {
    double mean = 0.0;
    double std = 0.0;  ///< population standard deviation
};

struct MetricReport {
    std::vector<Row> rows;  ///< sorted by id
    Stat psnr_db, ssim, perceptual, vdp_q;
    int ok_count = 0;
    int failed_count = 0;
    std::string perceptual_label;
    std::string vdp_label;
    bool vdp_is_real = false;

    /// Header `id,psnr_db,ssim,perceptual,vdp_q`; failed rows have empty metric fields.
    std::string to_csv() const;
    nlohmann::json to_json() const;
    void write_csv(const std::filesystem::path& path) const;
    void write_json(const std::filesystem::path& path) const;
};

/// Mean and population std over the successful rows.
void aggregate(MetricReport& report);

/// Evaluates every pair; per-pair failures land in the row and are skipped by
/// the aggregates. Throws EvaluationError when `pairs` is empty and
/// ConfigError for unknown providers.
MetricReport evaluate(std::vector<Pair> pairs, const MetricConfig& config = {});
MetricReport evaluate(std::vector<Pair> pairs, const MetricConfig& config, const PerceptualProvider& perceptual,
                      const VdpProvider& vdp);

} // namespace physhdr::metrics
