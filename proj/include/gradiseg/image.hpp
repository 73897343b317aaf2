#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace gradiseg {

/// Row-major RGB image with float channels, nominally in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;  // (y * width + x) * 3 + channel

    Image() = default;
    Image(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0.0) {}

    std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
    double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
};

/// One 8-bit class id per pixel.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}

    std::size_t pixels() const { return data.size(); }
    std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    bool operator==(const Mask&) const = default;
};

/// Clamp to [0,1], scale by 255, round half to even.
std::uint8_t quantize_channel(double v);

/// Binary P6, maxval 255.
void write_ppm(const Image& img, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

/// Binary P5, maxval 255.
void write_pgm(const Mask& mask, const std::filesystem::path& path);
Mask read_pgm(const std::filesystem::path& path);

}  // namespace gradiseg
