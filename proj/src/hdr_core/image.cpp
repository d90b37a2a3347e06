#include "physhdr/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "physhdr/error.hpp"

namespace physhdr {

template <typename T>
Image<T>::Image(int height, int width, T fill) : height_(height), width_(width) {
    if (height < 1 || width < 1) {
        throw ShapeError("image dims must be >= 1, got " + std::to_string(height) + "x" +
                         std::to_string(width));
    }
    data_.assign(static_cast<std::size_t>(height) * width * kChannels, fill);
}

template class Image<float>;
template class Image<std::uint8_t>;

void validate(const HdrImage& image) {
    if (image.height() < 1 || image.width() < 1) {
        throw ShapeError("HDR image is empty");
    }
    for (float v : image.data()) {
        if (!std::isfinite(v) || v < 0.0f) {
            throw RangeError("HDR image contains a non-finite or negative value");
        }
    }
}

float max_value(const HdrImage& image) {
    float m = 0.0f;
    for (float v : image.data()) m = std::max(m, v);
    return m;
}

double luminance(const HdrImage& image, int y, int x) {
    return 0.2126 * image.at(y, x, 0) + 0.7152 * image.at(y, x, 1) + 0.0722 * image.at(y, x, 2);
}

HdrImage to_float(const LdrImage& image, double scale) {
    HdrImage out(image.height(), image.width());
    auto src = image.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i] * scale);
    return out;
}

} // namespace physhdr
