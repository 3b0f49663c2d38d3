#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace jepa {

/// 8-bit image, row-major HWC.
struct RawImage {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  RawImage() = default;
  RawImage(int h, int w, int c = 3);

  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  /// Throws ContractViolation when dimensions and buffer disagree.
  void validate() const;

  friend bool operator==(const RawImage&, const RawImage&) = default;
};

/// Bilinear resampling with half-pixel centers and edge clamping.
RawImage resize_bilinear(const RawImage& img, int out_h, int out_w);

/// Largest centered square crop.
RawImage center_crop_square(const RawImage& img);

/// h wraps around [0, 1); s and v in [0, 1]. Returns RGB in [0, 1].
std::array<double, 3> hsv_to_rgb(double h, double s, double v);

/// PNG, JPEG or tensor image, chosen by file signature. Output is always
/// 3-channel RGB.
RawImage read_image(const std::filesystem::path& path);
/// Tensor file holding an "image" entry of shape [H, W, 3] with integer
/// values in [0, 255].
RawImage read_tensor_image(const std::filesystem::path& path);
void write_tensor_image(const std::filesystem::path& path, const RawImage& img);

/// Writes an 8-bit RGB or grayscale PNG. Output bytes are deterministic.
void write_png(const std::filesystem::path& path, const RawImage& img);

}  // namespace jepa
