#include <sys/wait.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "physhdr/error.hpp"
#include "physhdr/hdr_io.hpp"
#include "physhdr/metrics.hpp"

namespace physhdr::metrics {

namespace fs = std::filesystem;

namespace {

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    return out + "'";
}

fs::path scratch_dir() {
    static std::atomic<unsigned> counter{0};
    std::random_device rd;
    fs::path p = fs::temp_directory_path() /
                 ("physhdr_vdp_" + std::to_string(rd()) + "_" + std::to_string(counter.fetch_add(1)));
    fs::create_directories(p);
    return p;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

} // namespace

ExternalVdp::ExternalVdp(std::string command) : command_(std::move(command)) {
    if (trim(command_).empty()) throw ConfigError("external VDP command is empty");
}

double ExternalVdp::quality(const std::string& id, const HdrImage& gt, const HdrImage& pred) const {
    const fs::path dir = scratch_dir();
    struct Cleanup {
        fs::path p;
        ~Cleanup() {
            std::error_code ec;
            fs::remove_all(p, ec);
        }
    } cleanup{dir};
    const fs::path a = dir / "gt.hdr", b = dir / "pred.hdr";
    write_rgbe_file(gt, a);
    write_rgbe_file(pred, b);

    const std::string cmd = command_ + " " + shell_quote(a.string()) + " " + shell_quote(b.string()) + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) throw EvaluationError("VDP adapter for pair " + id + ": cannot start '" + command_ + "'");
    std::string out;
    char buf[256];
    while (std::fgets(buf, sizeof buf, pipe)) out += buf;
    const int status = pclose(pipe);
    if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0)
        throw EvaluationError("VDP adapter for pair " + id + ": '" + command_ + "' failed (status " +
                              std::to_string(status) + ")");
    const std::string text = trim(out);
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (text.empty() || used != text.size() || !std::isfinite(v))
        throw EvaluationError("VDP adapter for pair " + id + ": expected one number, got '" + text + "'");
    return v;
}

std::unique_ptr<VdpProvider> make_vdp(const std::string& spec) {
    if (spec == "stub") return std::make_unique<VdpStub>();
    const std::string tag = "external:";
    if (spec.rfind(tag, 0) == 0) return std::make_unique<ExternalVdp>(spec.substr(tag.size()));
    throw ConfigError("unknown VDP provider '" + spec + "' (expected 'stub' or 'external:<command>')");
}

void aggregate(MetricReport& r) {
    std::vector<const Row*> ok;
    for (const auto& row : r.rows)
        if (row.ok()) ok.push_back(&row);
    r.ok_count = static_cast<int>(ok.size());
    r.failed_count = static_cast<int>(r.rows.size() - ok.size());
    auto stat = [&](double Row::*field) {
        Stat s;
        if (ok.empty()) return Stat{std::nan(""), std::nan("")};
        for (const Row* row : ok) s.mean += row->*field;
        s.mean /= static_cast<double>(ok.size());
        double var = 0.0;
        for (const Row* row : ok) var += (row->*field - s.mean) * (row->*field - s.mean);
        s.std = std::sqrt(var / static_cast<double>(ok.size()));
        return s;
    };
    r.psnr_db = stat(&Row::psnr_db);
    r.ssim = stat(&Row::ssim);
    r.perceptual = stat(&Row::perceptual);
    r.vdp_q = stat(&Row::vdp_q);
}

MetricReport evaluate(std::vector<Pair> pairs, const MetricConfig& config) {
    const auto perceptual = make_perceptual(config.perceptual);
    const auto vdp = make_vdp(config.vdp);
    return evaluate(std::move(pairs), config, *perceptual, *vdp);
}

MetricReport evaluate(std::vector<Pair> pairs, const MetricConfig& config, const PerceptualProvider& perceptual,
                      const VdpProvider& vdp) {
    if (pairs.empty()) throw EvaluationError("evaluate: no image pairs");
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.id < b.id; });
    MetricReport report;
    report.perceptual_label = perceptual.label();
    report.vdp_label = vdp.label();
    report.vdp_is_real = vdp.is_vdp();
    for (const auto& p : pairs) {
        Row row;
        row.id = p.id;
        try {
            row.psnr_db = psnr_mu(p.gt, p.pred, config.curve);
            row.ssim = ssim_linear(p.gt, p.pred);
            row.perceptual = perceptual.distance(p.gt, p.pred);
            row.vdp_q = vdp.quality(p.id, p.gt, p.pred);
        } catch (const Error& e) {
            row.error = e.what();
        }
        report.rows.push_back(std::move(row));
    }
    aggregate(report);
    return report;
}

std::string MetricReport::to_csv() const {
    std::ostringstream os;
    os << "id,psnr_db,ssim,perceptual,vdp_q\n";
    for (const auto& r : rows) {
        os << r.id;
        if (r.ok()) os << ',' << fmt(r.psnr_db) << ',' << fmt(r.ssim) << ',' << fmt(r.perceptual) << ',' << fmt(r.vdp_q);
        else os << ",,,,";
        os << '\n';
    }
    return os.str();
}

nlohmann::json MetricReport::to_json() const {
    using nlohmann::json;
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    json rs = json::array();
    for (const auto& r : rows) {
        json j = {{"id", r.id}};
        if (r.ok()) {
            j["psnr_db"] = r.psnr_db;
            j["ssim"] = r.ssim;
            j["perceptual"] = r.perceptual;
            j["vdp_q"] = r.vdp_q;
        } else {
            j["error"] = *r.error;
        }
        rs.push_back(j);
    }
    auto stat = [&](const Stat& s) { return json{{"mean", num(s.mean)}, {"std", num(s.std)}}; };
    return {
        {"rows", rs},
        {"aggregates", {{"psnr_db", stat(psnr_db)}, {"ssim", stat(ssim)}, {"perceptual", stat(perceptual)},
                        {"vdp_q", stat(vdp_q)}}},
        {"counts", {{"ok", ok_count}, {"failed", failed_count}}},
        {"providers", {{"perceptual", perceptual_label}, {"vdp", vdp_label}, {"vdp_is_hdr_vdp", vdp_is_real}}},
    };
}

void MetricReport::write_csv(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_csv();
}

void MetricReport::write_json(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_json().dump(2) << '\n';
}

} // namespace physhdr::metrics
