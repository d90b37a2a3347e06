#include <png.h>

#include <cstring>

#include "physhdr/hdr_io.hpp"

namespace physhdr {

LdrImage read_png(const std::filesystem::path& path) {
    png_image png;
    std::memset(&png, 0, sizeof png);
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) {
        throw IoError("cannot read PNG " + path.string() + ": " + png.message);
    }
    png.format = PNG_FORMAT_RGB;
    if (png.height < 1 || png.width < 1) {
        png_image_free(&png);
        throw IoError("PNG has zero size: " + path.string());
    }
    LdrImage image(static_cast<int>(png.height), static_cast<int>(png.width));
    if (!png_image_finish_read(&png, nullptr, image.data().data(), 0, nullptr)) {
        const std::string message = png.message;
        png_image_free(&png);
        throw IoError("cannot decode PNG " + path.string() + ": " + message);
    }
    return image;
}

void write_png(const LdrImage& image, const std::filesystem::path& path) {
    png_image png;
    std::memset(&png, 0, sizeof png);
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width());
    png.height = static_cast<png_uint_32>(image.height());
    png.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png, path.c_str(), 0, image.data().data(), 0, nullptr)) {
        throw IoError("cannot write PNG " + path.string() + ": " + png.message);
    }
}

} // namespace physhdr
