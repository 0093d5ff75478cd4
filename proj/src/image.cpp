#include "nbslam/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <png.h>

namespace nbslam {

namespace {

inline void cell(const Image& img, double x, double y, int& x0, int& y0, double& fx, double& fy) {
  x0 = std::min(static_cast<int>(std::floor(x)), img.width() - 2);
  y0 = std::min(static_cast<int>(std::floor(y)), img.height() - 2);
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  fx = x - x0;
  fy = y - y0;
}

}  // namespace

double interpolate(const Image& img, double x, double y) {
  int x0, y0;
  double fx, fy;
  cell(img, x, y, x0, y0, fx, fy);
  const double v00 = img.at(x0, y0);
  const double v10 = img.at(x0 + 1, y0);
  const double v01 = img.at(x0, y0 + 1);
  const double v11 = img.at(x0 + 1, y0 + 1);
  return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
}

Sample interpolate_with_gradient(const Image& img, double x, double y) {
  int x0, y0;
  double fx, fy;
  cell(img, x, y, x0, y0, fx, fy);
  const double v00 = img.at(x0, y0);
  const double v10 = img.at(x0 + 1, y0);
  const double v01 = img.at(x0, y0 + 1);
  const double v11 = img.at(x0 + 1, y0 + 1);
  Sample s;
  s.value = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
  s.dx = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
  s.dy = (1.0 - fx) * (v01 - v00) + fx * (v11 - v10);
  return s;
}

void central_gradient(const Image& img, int x, int y, double& gx, double& gy) {
  const int xm = std::max(x - 1, 0), xp = std::min(x + 1, img.width() - 1);
  const int ym = std::max(y - 1, 0), yp = std::min(y + 1, img.height() - 1);
  gx = (static_cast<double>(img.at(xp, y)) - img.at(xm, y)) / std::max(xp - xm, 1);
  gy = (static_cast<double>(img.at(x, yp)) - img.at(x, ym)) / std::max(yp - ym, 1);
}

Image downsample(const Image& img) {
  Image out(img.width() / 2, img.height() / 2);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      out.at(x, y) = 0.25f * (img.at(2 * x, 2 * y) + img.at(2 * x + 1, 2 * y) + img.at(2 * x, 2 * y + 1) +
                              img.at(2 * x + 1, 2 * y + 1));
    }
  }
  return out;
}

std::vector<Image> build_pyramid(const Image& img, int levels) {
  std::vector<Image> pyr;
  pyr.reserve(levels);
  pyr.push_back(img);
  for (int l = 1; l < levels; ++l) pyr.push_back(downsample(pyr.back()));
  return pyr;
}

namespace {

bool has_png_signature(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  return in.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

// Reads the next header token of a PNM file, skipping comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

struct PnmHeader {
  std::string magic;
  int width = 0;
  int height = 0;
  int maxval = 0;
};

PnmHeader read_pnm_header(std::istream& in, const std::filesystem::path& path) {
  PnmHeader h;
  h.magic = pnm_token(in);
  if (h.magic != "P5" && h.magic != "P2") {
    throw std::runtime_error("unsupported image format (expected grayscale PGM or PNG): " + path.string());
  }
  try {
    h.width = std::stoi(pnm_token(in));
    h.height = std::stoi(pnm_token(in));
    h.maxval = std::stoi(pnm_token(in));
  } catch (const std::exception&) {
    throw std::runtime_error("malformed PGM header: " + path.string());
  }
  if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 255) {
    throw std::runtime_error("unsupported PGM (8-bit grayscale only): " + path.string());
  }
  return h;
}

Image read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + msg);
  }
  Image out(static_cast<int>(image.width), static_cast<int>(image.height));
  std::transform(buffer.begin(), buffer.end(), out.data().begin(), [](png_byte v) { return static_cast<float>(v); });
  return out;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("image not found: " + path.string());
  if (has_png_signature(path)) return read_png(path);

  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path.string());
  const PnmHeader h = read_pnm_header(in, path);
  Image out(h.width, h.height);
  const float scale = 255.0f / static_cast<float>(h.maxval);
  if (h.magic == "P5") {
    std::vector<unsigned char> buf(static_cast<size_t>(h.width) * h.height);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
      throw std::runtime_error("truncated PGM: " + path.string());
    }
    for (size_t i = 0; i < buf.size(); ++i) out.data()[i] = buf[i] * scale;
  } else {
    for (auto& v : out.data()) {
      int value;
      if (!(in >> value)) throw std::runtime_error("truncated PGM: " + path.string());
      v = value * scale;
    }
  }
  return out;
}

void read_image_size(const std::filesystem::path& path, int& width, int& height) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("image not found: " + path.string());
  if (has_png_signature(path)) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
      throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
    }
    width = static_cast<int>(image.width);
    height = static_cast<int>(image.height);
    png_image_free(&image);
    return;
  }
  std::ifstream in(path, std::ios::binary);
  const PnmHeader h = read_pnm_header(in, path);
  width = h.width;
  height = h.height;
}

void write_pgm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path.string());
  out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::vector<unsigned char> buf(img.data().size());
  for (size_t i = 0; i < buf.size(); ++i) {
    const float v = std::clamp(std::round(img.data()[i]), 0.0f, 255.0f);
    buf[i] = static_cast<unsigned char>(v);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

}  // namespace nbslam
