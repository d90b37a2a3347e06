#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "physhdr/image.hpp"

namespace physhdr::testing {

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("physhdr_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline HdrImage random_hdr(int h, int w, std::mt19937_64& rng, float lo = 0.0f, float hi = 10.0f) {
    std::uniform_real_distribution<float> dist(lo, hi);
    HdrImage img(h, w);
    for (float& v : img.data()) v = dist(rng);
    return img;
}

inline LdrImage random_ldr(int h, int w, std::mt19937_64& rng, int lo = 0, int hi = 255) {
    std::uniform_int_distribution<int> dist(lo, hi);
    LdrImage img(h, w);
    for (auto& v : img.data()) v = static_cast<std::uint8_t>(dist(rng));
    return img;
}

} // namespace physhdr::testing
