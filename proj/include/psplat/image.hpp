#pragma once

#include <cstddef>
#include <vector>

namespace psplat {

// Row-major RGB image, channels interleaved. Values live in [0,1] for
// rendered or dataset images; gradient-shaped images may hold any value.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

    static constexpr int channels = 3;

    std::size_t size() const { return data.size(); }
    bool same_shape(const Image& other) const {
        return width == other.width && height == other.height;
    }

    double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    friend bool operator==(const Image&, const Image&) = default;
};

} // namespace psplat
