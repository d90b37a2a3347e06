#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "physhdr/error.hpp"
#include "physhdr/image.hpp"

namespace physhdr {

/// Parse failure while reading a Radiance RGBE stream.
class RgbeError : public Error {
public:
    enum class Kind { MalformedHeader, TruncatedData, ResolutionMismatch };

    RgbeError(Kind kind, const std::string& what) : Error(ErrorCategory::Format, what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

using RgbePixel = std::array<std::uint8_t, 4>;

/// Shared-exponent encoding: e = exponent of the max channel (as returned by
/// frexp), mantissa = floor(c * 256 / 2^e), exponent byte = e + 128.
RgbePixel encode_rgbe(float r, float g, float b);

/// Radiance decoding convention: (mantissa + 0.5) * 2^(e - 136).
std::array<float, 3> decode_rgbe(const RgbePixel& p);

/// Writes the header and flat (non-RLE) scanlines.
void write_rgbe(const HdrImage& image, std::ostream& out);

/// Reads flat or new-style RLE scanlines.
HdrImage read_rgbe(std::istream& in);

void write_rgbe_file(const HdrImage& image, const std::filesystem::path& path);
HdrImage read_rgbe_file(const std::filesystem::path& path);

/// Lossless fixture format: 16-byte little-endian header (magic, height,
/// width, channels as uint32) followed by planar float32 data, channel-major.
inline constexpr std::uint32_t kRawFloatMagic = 0x46524850;  // "PHRF"

void write_raw_float(const HdrImage& image, std::ostream& out);
HdrImage read_raw_float(std::istream& in);
void write_raw_float_file(const HdrImage& image, const std::filesystem::path& path);
HdrImage read_raw_float_file(const std::filesystem::path& path);

/// Dispatches on extension: .hdr/.rgbe/.pic -> RGBE, .phrf/.raw -> raw float.
HdrImage read_hdr_file(const std::filesystem::path& path);
void write_hdr_file(const HdrImage& image, const std::filesystem::path& path);

/// 8-bit RGB PNG via libpng.
LdrImage read_png(const std::filesystem::path& path);
void write_png(const LdrImage& image, const std::filesystem::path& path);

} // namespace physhdr
