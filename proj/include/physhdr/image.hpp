#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace physhdr {

/// Three-channel image with interleaved RGB storage, row-major.
template <typename T>
class Image {
public:
    static constexpr int kChannels = 3;

    Image() = default;
    Image(int height, int width, T fill = T{});

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    int channels() const noexcept { return kChannels; }
    std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(height_) * width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& at(int y, int x, int c) { return data_[index(y, x, c)]; }
    const T& at(int y, int x, int c) const { return data_[index(y, x, c)]; }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }

    bool same_dims(const Image<T>& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_;
    }

    bool operator==(const Image<T>& other) const = default;

private:
    std::size_t index(int y, int x, int c) const noexcept {
        return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

/// Linear scene radiance; finite and non-negative, unbounded above.
using HdrImage = Image<float>;

/// Display-referred 8-bit image.
using LdrImage = Image<std::uint8_t>;

/// Throws RangeError unless every value is finite and >= 0 and dims are >= 1.
void validate(const HdrImage& image);

float max_value(const HdrImage& image);

/// Rec.709 luminance of pixel (y, x).
double luminance(const HdrImage& image, int y, int x);

HdrImage to_float(const LdrImage& image, double scale = 1.0 / 255.0);

extern template class Image<float>;
extern template class Image<std::uint8_t>;

} // namespace physhdr
