#pragma once

#include "sketch3d/common.hpp"

#include <span>
#include <sstream>
#include <vector>

namespace sketch3d {

/// Row-major single-channel float image. Rendered sketches use white = 1.0;
/// the same type carries gradient images, which are unbounded.
class ImageBuffer {
public:
    ImageBuffer() = default;
    ImageBuffer(int width, int height, double fill = 0.0)
        : width_(width), height_(height), data_(checked_size(width, height), fill) {}

    static ImageBuffer white(int width, int height) { return ImageBuffer(width, height, 1.0); }

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double &operator()(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    double operator()(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    double &operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> pixels() { return data_; }
    std::span<const double> pixels() const { return data_; }

    bool same_shape(const ImageBuffer &other) const {
        return width_ == other.width_ && height_ == other.height_;
    }

    friend bool operator==(const ImageBuffer &, const ImageBuffer &) = default;

private:
    static std::size_t checked_size(int width, int height) {
        if (width < 0 || height < 0) throw DomainError("image dimensions must be non-negative");
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

inline void require_same_shape(const ImageBuffer &a, const ImageBuffer &b, const char *what) {
    if (!a.same_shape(b)) {
        std::ostringstream os;
        os << what << ": dimension mismatch " << a.width() << "x" << a.height() << " vs " << b.width() << "x"
           << b.height();
        throw DomainError(os.str());
    }
}

} // namespace sketch3d
