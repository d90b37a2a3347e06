#include <algorithm>
#include <cmath>
#include <map>

#include "physhdr/data.hpp"
#include "physhdr/error.hpp"
#include "physhdr/hdr_io.hpp"
#include "physhdr/tonemap.hpp"

namespace physhdr::data {

namespace {

double tag_value(const ManifestEntry& e, std::size_t fallback) {
    if (!e.exposure_tag) return static_cast<double>(fallback);
    try {
        std::size_t used = 0;
        const double v = std::stod(*e.exposure_tag, &used);
        if (used == e.exposure_tag->size()) return v;
    } catch (const std::exception&) {
    }
    return static_cast<double>(fallback);
}

} // namespace

std::vector<ManifestEntry> select_single_exposure(const DatasetManifest& manifest, ExposurePick pick) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        auto& g = groups[manifest.entries[i].hdr];
        if (g.empty()) order.push_back(manifest.entries[i].hdr);
        g.push_back(i);
    }
    std::vector<ManifestEntry> out;
    out.reserve(order.size());
    for (const auto& hdr : order) {
        auto g = groups[hdr];
        std::stable_sort(g.begin(), g.end(), [&](std::size_t a, std::size_t b) {
            return tag_value(manifest.entries[a], a) < tag_value(manifest.entries[b], b);
        });
        std::size_t k = 0;
        switch (pick) {
        case ExposurePick::Middle: k = g.size() / 2; break;
        case ExposurePick::First: k = 0; break;
        case ExposurePick::Last: k = g.size() - 1; break;
        }
        out.push_back(manifest.entries[g[k]]);
    }
    return out;
}

PairStream::PairStream(DatasetManifest manifest, PairOptions options, int epoch)
    : manifest_(std::move(manifest)), options_(std::move(options)) {
    if (options_.height < 1 || options_.width < 1) throw ConfigError("pair resolution must be >= 1");
    if (!(options_.hdr_peak > 0.0)) throw ConfigError("hdr_peak must be positive");

    const auto entries = select_single_exposure(manifest_, options_.pick);
    std::vector<Job> jobs;
    for (const auto& e : entries) {
        if (options_.exposures.empty()) {
            jobs.push_back({e, std::nullopt, e.ldr});
        } else {
            for (const auto& p : options_.exposures) jobs.push_back({e, p, e.ldr + "@" + p.to_string()});
        }
    }
    if (options_.shuffle) {
        const auto idx = shuffled_indices(jobs.size(), options_.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
        jobs_.reserve(jobs.size());
        for (auto i : idx) jobs_.push_back(jobs[i]);
    } else {
        jobs_ = std::move(jobs);
    }
}

PairStream::~PairStream() {
    for (auto& f : inflight_) {
        if (f.valid()) f.wait();
    }
}

PairStream::Result PairStream::run(const Job& job) const {
    Result r;
    const auto ldr_path = manifest_.root / job.entry.ldr;
    const auto hdr_path = manifest_.root / job.entry.hdr;
    std::string current = ldr_path.string();
    try {
        LdrImage ldr = read_png(ldr_path);
        current = hdr_path.string();
        HdrImage hdr = read_hdr_file(hdr_path);
        validate(hdr);
        if (job.exposure) ldr = synth_exposure(ldr, *job.exposure);
        ldr = resize_image(ldr, options_.height, options_.width);
        hdr = resize_image(hdr, options_.height, options_.width);
        const float peak = max_value(hdr);
        float scale = 1.0f;
        if (peak > 0.0f) {
            scale = static_cast<float>(peak / options_.hdr_peak);
            hdr = normalize_by(hdr, scale);
        }
        r.sample = Sample{job.id, std::move(ldr), std::move(hdr), scale};
    } catch (const std::exception& e) {
        r.error = {current, e.what()};
    }
    return r;
}

void PairStream::refill() {
    const std::size_t depth = static_cast<std::size_t>(std::max(options_.workers, 1)) * 2;
    while (inflight_.size() < depth && next_job_ < jobs_.size()) {
        const Job* job = &jobs_[next_job_++];
        if (options_.workers <= 1) {
            std::promise<Result> p;
            p.set_value(run(*job));
            inflight_.push_back(p.get_future());
        } else {
            inflight_.push_back(std::async(std::launch::async, [this, job] { return run(*job); }));
        }
    }
}

std::optional<Sample> PairStream::next() {
    for (;;) {
        refill();
        if (inflight_.empty()) return std::nullopt;
        Result r = inflight_.front().get();
        inflight_.pop_front();
        if (r.sample) return std::move(r.sample);
        errors_.push_back(std::move(r.error));
    }
}

std::vector<Sample> load_pairs(const DatasetManifest& manifest, const PairOptions& options, int epoch,
                               std::vector<EntryError>* errors) {
    PairStream stream(manifest, options, epoch);
    std::vector<Sample> out;
    while (auto s = stream.next()) out.push_back(std::move(*s));
    if (errors) *errors = stream.errors();
    return out;
}

} // namespace physhdr::data
