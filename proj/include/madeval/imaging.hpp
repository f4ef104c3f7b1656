#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace madeval {

/// Decoded 8-bit image, row-major, channels interleaved. Channels is 1 or 3.
class RasterImage {
public:
    RasterImage(int width, int height, int channels, std::vector<std::uint8_t> samples);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    int channels() const noexcept { return channels_; }
    std::span<const std::uint8_t> samples() const noexcept { return samples_; }

    std::uint8_t at(int x, int y, int c) const {
        return samples_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
    }

    friend bool operator==(const RasterImage&, const RasterImage&) = default;

private:
    int width_;
    int height_;
    int channels_;
    std::vector<std::uint8_t> samples_;
};

/// Luminance plane with samples in [0, 1].
class LumaImage {
public:
    LumaImage(int width, int height, std::vector<double> samples);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::span<const double> samples() const noexcept { return samples_; }
    double at(int x, int y) const { return samples_[static_cast<std::size_t>(y) * width_ + x]; }

    friend bool operator==(const LumaImage&, const LumaImage&) = default;

private:
    int width_;
    int height_;
    std::vector<double> samples_;
};

struct FeatureVector {
    std::vector<double> values;
    std::string descriptor_id;

    friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

inline constexpr const char* kThumbnailDescriptor = "builtin-thumb16-hist8";

/// Decodes PNG or JPEG by content sniffing. Grayscale stays single-channel,
/// alpha is discarded, 16-bit PNG is reduced to 8 bits.
RasterImage load_image(const std::filesystem::path& path);

/// Rec. 601 luma: (0.299 R + 0.587 G + 0.114 B) / 255.
LumaImage to_luma(const RasterImage& img);

/// Bilinear resampling with half-pixel-centre sampling and clamped edges.
LumaImage resize_bilinear(const LumaImage& img, int width, int height);

/// Crops to the centred `width` x `height` window.
LumaImage center_crop(const LumaImage& img, int width, int height);

/// 16x16 bilinear luma thumbnail (256 values) followed by an 8-bin
/// histogram per RGB channel, each normalised to sum 1 (24 values).
FeatureVector thumbnail_feature(const RasterImage& img);

}  // namespace madeval
