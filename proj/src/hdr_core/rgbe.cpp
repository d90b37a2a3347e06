#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

#include "physhdr/hdr_io.hpp"

namespace physhdr {

namespace {

constexpr int kMinRleWidth = 8;
constexpr int kMaxRleWidth = 0x7fff;

bool read_line(std::istream& in, std::string& line) {
    line.clear();
    char c = 0;
    while (in.get(c)) {
        if (c == '\n') return true;
        line.push_back(c);
        if (line.size() > 4096) return false;
    }
    return false;
}

void read_rle_scanline(std::istream& in, int width, std::vector<RgbePixel>& row) {
    // Caller already consumed the 4-byte scanline marker.
    for (int c = 0; c < 4; ++c) {
        int x = 0;
        while (x < width) {
            unsigned char count = 0;
            if (!in.read(reinterpret_cast<char*>(&count), 1)) {
                throw RgbeError(RgbeError::Kind::TruncatedData, "RGBE: truncated RLE scanline");
            }
            if (count > 128) {
                const int run = count - 128;
                unsigned char value = 0;
                if (!in.read(reinterpret_cast<char*>(&value), 1)) {
                    throw RgbeError(RgbeError::Kind::TruncatedData, "RGBE: truncated RLE run");
                }
                if (run == 0 || x + run > width) {
                    throw RgbeError(RgbeError::Kind::ResolutionMismatch, "RGBE: RLE run overflows scanline");
                }
                for (int i = 0; i < run; ++i) row[x++][c] = value;
            } else {
                const int run = count;
                if (run == 0 || x + run > width) {
                    throw RgbeError(RgbeError::Kind::ResolutionMismatch, "RGBE: RLE dump overflows scanline");
                }
                for (int i = 0; i < run; ++i) {
                    unsigned char value = 0;
                    if (!in.read(reinterpret_cast<char*>(&value), 1)) {
                        throw RgbeError(RgbeError::Kind::TruncatedData, "RGBE: truncated RLE dump");
                    }
                    row[x++][c] = value;
                }
            }
        }
    }
}

} // namespace

RgbePixel encode_rgbe(float r, float g, float b) {
    const float v = std::max({r, g, b});
    if (!(v > 1e-32f)) return {0, 0, 0, 0};
    int e = 0;
    std::frexp(v, &e);
    const double scale = std::ldexp(1.0, 8 - e);  // 256 / 2^e
    auto mantissa = [&](float c) {
        const double m = std::floor(std::max(c, 0.0f) * scale);
        return static_cast<std::uint8_t>(std::min(m, 255.0));
    };
    return {mantissa(r), mantissa(g), mantissa(b), static_cast<std::uint8_t>(e + 128)};
}

std::array<float, 3> decode_rgbe(const RgbePixel& p) {
    if (p[3] == 0) return {0.0f, 0.0f, 0.0f};
    const double f = std::ldexp(1.0, static_cast<int>(p[3]) - (128 + 8));
    return {static_cast<float>((p[0] + 0.5) * f), static_cast<float>((p[1] + 0.5) * f),
            static_cast<float>((p[2] + 0.5) * f)};
}

void write_rgbe(const HdrImage& image, std::ostream& out) {
    validate(image);
    out << "#?RADIANCE\n";
    out << "FORMAT=32-bit_rle_rgbe\n\n";
    out << "-Y " << image.height() << " +X " << image.width() << "\n";
    std::vector<RgbePixel> row(image.width());
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            row[x] = encode_rgbe(image.at(y, x, 0), image.at(y, x, 1), image.at(y, x, 2));
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * 4));
    }
    if (!out) throw IoError("RGBE: write failed");
}

HdrImage read_rgbe(std::istream& in) {
    std::string line;
    if (!read_line(in, line) || line.rfind("#?", 0) != 0) {
        throw RgbeError(RgbeError::Kind::MalformedHeader, "RGBE: missing #? magic line");
    }
    if (line != "#?RADIANCE" && line != "#?RGBE") {
        throw RgbeError(RgbeError::Kind::MalformedHeader, "RGBE: unknown program type '" + line + "'");
    }
    bool have_format = false;
    for (;;) {
        if (!read_line(in, line)) {
            throw RgbeError(RgbeError::Kind::MalformedHeader, "RGBE: header not terminated");
        }
        if (line.empty()) break;
        if (line.rfind("FORMAT=", 0) == 0) {
            if (line != "FORMAT=32-bit_rle_rgbe") {
                throw RgbeError(RgbeError::Kind::MalformedHeader, "RGBE: unsupported " + line);
            }
            have_format = true;
        }
    }
    if (!have_format) throw RgbeError(RgbeError::Kind::MalformedHeader, "RGBE: FORMAT line missing");

    if (!read_line(in, line)) {
        throw RgbeError(RgbeError::Kind::MalformedHeader, "RGBE: resolution line missing");
    }
    std::istringstream res(line);
    std::string ytag;
    std::string xtag;
    long height = 0;
    long width = 0;
    if (!(res >> ytag >> height >> xtag >> width) || ytag != "-Y" || xtag != "+X") {
        throw RgbeError(RgbeError::Kind::MalformedHeader, "RGBE: unsupported resolution line '" + line + "'");
    }
    std::string trailing;
    if (res >> trailing) {
        throw RgbeError(RgbeError::Kind::MalformedHeader, "RGBE: trailing tokens in resolution line");
    }
    if (height < 1 || width < 1 || height > 1 << 16 || width > 1 << 16) {
        throw RgbeError(RgbeError::Kind::ResolutionMismatch, "RGBE: invalid resolution " + line);
    }

    HdrImage image(static_cast<int>(height), static_cast<int>(width));
    std::vector<RgbePixel> row(width);
    for (int y = 0; y < height; ++y) {
        RgbePixel first{};
        if (!in.read(reinterpret_cast<char*>(first.data()), 4)) {
            throw RgbeError(RgbeError::Kind::TruncatedData,
                            "RGBE: truncated pixel data at row " + std::to_string(y));
        }
        const bool rle = width >= kMinRleWidth && width <= kMaxRleWidth && first[0] == 2 && first[1] == 2 &&
                         (first[2] & 0x80) == 0;
        if (rle) {
            const int encoded_width = (first[2] << 8) | first[3];
            if (encoded_width != width) {
                throw RgbeError(RgbeError::Kind::ResolutionMismatch,
                                "RGBE: scanline width " + std::to_string(encoded_width) +
                                    " does not match header width " + std::to_string(width));
            }
            read_rle_scanline(in, static_cast<int>(width), row);
        } else {
            row[0] = first;
            if (width > 1 &&
                !in.read(reinterpret_cast<char*>(row[1].data()), static_cast<std::streamsize>((width - 1) * 4))) {
                throw RgbeError(RgbeError::Kind::TruncatedData,
                                "RGBE: truncated pixel data at row " + std::to_string(y));
            }
        }
        for (int x = 0; x < width; ++x) {
            const auto rgb = decode_rgbe(row[x]);
            for (int c = 0; c < 3; ++c) image.at(y, x, c) = rgb[c];
        }
    }
    return image;
}

void write_rgbe_file(const HdrImage& image, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write_rgbe(image, out);
}

HdrImage read_rgbe_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read_rgbe(in);
}

} // namespace physhdr
