#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace vlmkit::util {

// In-memory raster, row-major, interleaved channels, 8 bits per channel.
// On disk: binary PGM (P5, 1 channel) / PPM (P6, 3 channels).
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<uint8_t> pixels;

    uint8_t at(int y, int x, int c = 0) const {
        return pixels[static_cast<size_t>((y * width + x) * channels + c)];
    }
    uint8_t& at(int y, int x, int c = 0) {
        return pixels[static_cast<size_t>((y * width + x) * channels + c)];
    }
};

Image load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const Image& img);

// Luma in [0, 1], one value per pixel.
std::vector<double> to_gray(const Image& img);

}  // namespace vlmkit::util
