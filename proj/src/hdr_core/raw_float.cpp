#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

#include "physhdr/hdr_io.hpp"

namespace physhdr {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char bytes[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
        throw RgbeError(RgbeError::Kind::TruncatedData, "raw float: truncated header");
    }
    return static_cast<std::uint32_t>(bytes[0]) | static_cast<std::uint32_t>(bytes[1]) << 8 |
           static_cast<std::uint32_t>(bytes[2]) << 16 | static_cast<std::uint32_t>(bytes[3]) << 24;
}

} // namespace

void write_raw_float(const HdrImage& image, std::ostream& out) {
    validate(image);
    put_u32(out, kRawFloatMagic);
    put_u32(out, static_cast<std::uint32_t>(image.height()));
    put_u32(out, static_cast<std::uint32_t>(image.width()));
    put_u32(out, 3);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < image.height(); ++y) {
            for (int x = 0; x < image.width(); ++x) {
                put_u32(out, std::bit_cast<std::uint32_t>(image.at(y, x, c)));
            }
        }
    }
    if (!out) throw IoError("raw float: write failed");
}

HdrImage read_raw_float(std::istream& in) {
    if (get_u32(in) != kRawFloatMagic) {
        throw RgbeError(RgbeError::Kind::MalformedHeader, "raw float: bad magic");
    }
    const std::uint32_t height = get_u32(in);
    const std::uint32_t width = get_u32(in);
    const std::uint32_t channels = get_u32(in);
    if (channels != 3 || height < 1 || width < 1 || height > 1u << 16 || width > 1u << 16) {
        throw RgbeError(RgbeError::Kind::ResolutionMismatch, "raw float: unsupported dims");
    }
    HdrImage image(static_cast<int>(height), static_cast<int>(width));
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    std::vector<unsigned char> bytes(plane * 4);
    for (int c = 0; c < 3; ++c) {
        if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
            throw RgbeError(RgbeError::Kind::TruncatedData, "raw float: truncated pixel data");
        }
        for (std::size_t i = 0; i < plane; ++i) {
            const std::uint32_t u = static_cast<std::uint32_t>(bytes[4 * i]) |
                                    static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8 |
                                    static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16 |
                                    static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24;
            image.data()[i * 3 + c] = std::bit_cast<float>(u);
        }
    }
    return image;
}

void write_raw_float_file(const HdrImage& image, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write_raw_float(image, out);
}

HdrImage read_raw_float_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read_raw_float(in);
}

namespace {

std::string lower_extension(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

} // namespace

HdrImage read_hdr_file(const std::filesystem::path& path) {
    const std::string ext = lower_extension(path);
    if (ext == ".hdr" || ext == ".rgbe" || ext == ".pic") return read_rgbe_file(path);
    if (ext == ".phrf" || ext == ".raw") return read_raw_float_file(path);
    throw IoError("unrecognized HDR extension: " + path.string());
}

void write_hdr_file(const HdrImage& image, const std::filesystem::path& path) {
    const std::string ext = lower_extension(path);
    if (ext == ".hdr" || ext == ".rgbe" || ext == ".pic") return write_rgbe_file(image, path);
    if (ext == ".phrf" || ext == ".raw") return write_raw_float_file(image, path);
    throw IoError("unrecognized HDR extension: " + path.string());
}

} // namespace physhdr
