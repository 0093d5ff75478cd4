#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace nbslam {

/// Row-major single channel raster with real-valued intensities.
class Image {
 public:
  Image() = default;
  Image(int width, int height, float fill = 0.0f)
      : width_(width), height_(height), data_(static_cast<size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  float& at(int x, int y) { return data_[static_cast<size_t>(y) * width_ + x]; }
  float at(int x, int y) const { return data_[static_cast<size_t>(y) * width_ + x]; }

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  bool contains(double x, double y, double margin = 0.0) const {
    return x >= margin && y >= margin && x <= width_ - 1 - margin && y <= height_ - 1 - margin;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

/// Bilinear sample together with the exact derivative of the bilinear surface.
struct Sample {
  double value = 0.0;
  double dx = 0.0;
  double dy = 0.0;
};

/// Bilinear interpolation. The caller guarantees 0 <= x <= w-1, 0 <= y <= h-1.
double interpolate(const Image& img, double x, double y);
Sample interpolate_with_gradient(const Image& img, double x, double y);

/// Central-difference gradient at an interior integer pixel.
void central_gradient(const Image& img, int x, int y, double& gx, double& gy);

/// Half resolution by 2x2 averaging.
Image downsample(const Image& img);

/// Level 0 is the input; each further level halves the resolution.
std::vector<Image> build_pyramid(const Image& img, int levels);

/// Reads an 8-bit grayscale PGM (P5/P2) or PNG. Colour PNGs are converted to gray.
Image read_image(const std::filesystem::path& path);
/// Reads only the raster dimensions.
void read_image_size(const std::filesystem::path& path, int& width, int& height);

/// Writes a binary PGM; values are rounded and clamped to [0, 255].
void write_pgm(const std::filesystem::path& path, const Image& img);

}  // namespace nbslam
