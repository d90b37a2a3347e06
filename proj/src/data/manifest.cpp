#include <algorithm>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "physhdr/data.hpp"
#include "physhdr/error.hpp"

namespace physhdr::data {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
        const auto tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return fields;
}

} // namespace

DatasetManifest load_manifest(const std::filesystem::path& path, bool check_files) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());

    DatasetManifest m;
    m.name = path.stem().string();
    m.root = path.parent_path();
    std::set<std::pair<std::string, std::string>> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto fields = split_tabs(line);
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (fields.size() < 2 || fields.size() > 3 || fields[0].empty() || fields[1].empty()) {
            throw ConfigError(where + ": expected <ldr>\\t<hdr>[\\t<tag>]");
        }
        ManifestEntry e{fields[0], fields[1], std::nullopt};
        if (fields.size() == 3 && !fields[2].empty()) e.exposure_tag = fields[2];
        if (!seen.insert({e.ldr, e.hdr}).second) {
            throw ConfigError(where + ": duplicate pair " + e.ldr + " / " + e.hdr);
        }
        if (check_files) {
            for (const auto& rel : {e.ldr, e.hdr}) {
                if (!std::filesystem::exists(m.root / rel)) throw IoError(where + ": missing file " + rel);
            }
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

std::string format_manifest(const DatasetManifest& manifest) {
    std::ostringstream out;
    for (const auto& e : manifest.entries) {
        out << e.ldr << '\t' << e.hdr;
        if (e.exposure_tag) out << '\t' << *e.exposure_tag;
        out << '\n';
    }
    return out.str();
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << format_manifest(manifest);
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        // unbiased draw in [0, i)
        const std::uint64_t bound = i;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t r = 0;
        do {
            r = rng();
        } while (r >= limit);
        std::swap(idx[i - 1], idx[r % bound]);
    }
    return idx;
}

Split split_dataset(const DatasetManifest& manifest, const SplitConfig& config) {
    if (!(config.train_fraction > 0.0 && config.train_fraction < 1.0)) {
        throw ConfigError("train_fraction must lie in (0, 1)");
    }
    const std::size_t n = manifest.size();
    if (n < 2) throw ConfigError("cannot split a manifest with fewer than 2 entries");

    const auto order = shuffled_indices(n, config.seed);
    const auto n_train = static_cast<std::size_t>(std::llround(config.train_fraction * static_cast<double>(n)));
    std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> test_idx(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());

    Split s{{manifest.name + "_train", manifest.root, {}}, {manifest.name + "_test", manifest.root, {}}};
    for (auto i : train_idx) s.train.entries.push_back(manifest.entries[i]);
    for (auto i : test_idx) s.test.entries.push_back(manifest.entries[i]);
    return s;
}

} // namespace physhdr::data
