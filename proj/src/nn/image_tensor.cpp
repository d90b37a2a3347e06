#include "physhdr/nn/image_tensor.hpp"

#include "physhdr/error.hpp"

namespace physhdr::nn {

namespace {

template <typename T>
Tensor batch_tensor(const std::vector<Image<T>>& batch, double scale) {
    if (batch.empty()) throw ShapeError("to_tensor: empty batch");
    const int H = batch.front().height(), W = batch.front().width();
    Tensor out({static_cast<int>(batch.size()), 3, H, W});
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const auto& img = batch[n];
        if (!img.same_dims(batch.front())) throw ShapeError("to_tensor: images differ in size");
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < 3; ++c)
                    out.at(static_cast<int>(n), c, y, x) = static_cast<double>(img.at(y, x, c)) * scale;
    }
    return out;
}

} // namespace

Tensor to_tensor(const HdrImage& img) { return batch_tensor(std::vector<HdrImage>{img}, 1.0); }
Tensor to_tensor(const std::vector<HdrImage>& batch) { return batch_tensor(batch, 1.0); }
Tensor to_tensor(const LdrImage& img) { return batch_tensor(std::vector<LdrImage>{img}, 1.0 / 255.0); }
Tensor to_tensor(const std::vector<LdrImage>& batch) { return batch_tensor(batch, 1.0 / 255.0); }

HdrImage to_image(const Tensor& t, int n) {
    if (t.rank() != 4 || t.dim(1) != 3) throw ShapeError("to_image: expected [N, 3, H, W], got " + to_string(t.shape()));
    if (n < 0 || n >= t.dim(0)) throw ShapeError("to_image: sample index out of range");
    HdrImage img(t.dim(2), t.dim(3));
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(t.at(n, c, y, x));
    return img;
}

} // namespace physhdr::nn
