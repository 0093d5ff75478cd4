#include "nbslam/local_view.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace nbslam::local_view {

void LocalViewConfig::validate() const {
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("local_view: descriptor size must be positive");
  if (max_shift < 0 || max_shift >= cols) throw std::invalid_argument("local_view: max_shift must lie in [0, cols)");
  if (!(threshold > 0.0)) throw std::invalid_argument("local_view: threshold must be positive");
  if (!(inject_weight > 0.0)) throw std::invalid_argument("local_view: inject_weight must be positive");
}

ViewDescriptor build_descriptor(const Image& image, int rows, int cols) {
  if (image.empty()) throw std::invalid_argument("build_descriptor: empty image");
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("build_descriptor: grid size must be positive");

  ViewDescriptor d;
  d.rows = rows;
  d.cols = cols;
  d.values.assign(static_cast<size_t>(rows) * cols, 0.0);
  std::vector<int> counts(d.values.size(), 0);

  // Each pixel goes to the cell containing its centre.
  for (int y = 0; y < image.height(); ++y) {
    const int r = static_cast<int>(static_cast<long long>(y) * rows / image.height());
    for (int x = 0; x < image.width(); ++x) {
      const int c = static_cast<int>(static_cast<long long>(x) * cols / image.width());
      const size_t i = static_cast<size_t>(r) * cols + c;
      d.values[i] += image.at(x, y);
      ++counts[i];
    }
  }
  // Cells finer than the raster take the pixel under their centre.
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const size_t i = static_cast<size_t>(r) * cols + c;
      if (counts[i] > 0) {
        d.values[i] /= counts[i];
      } else {
        const int x = std::min(static_cast<int>((c + 0.5) * image.width() / cols), image.width() - 1);
        const int y = std::min(static_cast<int>((r + 0.5) * image.height() / rows), image.height() - 1);
        d.values[i] = image.at(x, y);
      }
    }
  }

  double mean = 0.0;
  for (double v : d.values) mean += v;
  mean /= static_cast<double>(d.values.size());
  double max_abs = 0.0;
  for (double& v : d.values) {
    v -= mean;
    max_abs = std::max(max_abs, std::abs(v));
  }
  // Constant image: float round-off only.
  if (max_abs <= 1e-9 * std::max(1.0, std::abs(mean))) {
    std::fill(d.values.begin(), d.values.end(), 0.0);
  } else {
    for (double& v : d.values) v /= max_abs;
  }
  return d;
}

double shifted_difference(const ViewDescriptor& d, const ViewDescriptor& t, int shift) {
  const int c_begin = std::max(0, shift);
  const int c_end = std::min(d.cols, t.cols + shift);
  if (c_end <= c_begin || d.rows != t.rows) return std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (int r = 0; r < d.rows; ++r) {
    for (int c = c_begin; c < c_end; ++c) sum += std::abs(d.at(r, c) - t.at(r, c - shift));
  }
  return sum / (static_cast<double>(d.rows) * (c_end - c_begin));
}

std::optional<Match> match(const ViewDescriptor& d, const TemplateStore& store, int max_shift, double threshold) {
  std::optional<Match> best;
  for (const ViewTemplate& t : store.templates()) {
    if (t.descriptor.rows != d.rows || t.descriptor.cols != d.cols) continue;
    // Visit 0, -1, +1, -2, +2, ... so that strict improvement keeps the tie order.
    for (int k = 0; k <= 2 * max_shift; ++k) {
      const int shift = (k % 2 == 1) ? -(k + 1) / 2 : k / 2;
      const double dist = shifted_difference(d, t.descriptor, shift);
      if (!best || dist < best->distance) best = Match{t.id, shift, dist};
    }
  }
  if (best && best->distance < threshold) return best;
  return std::nullopt;
}

double shift_to_heading(int shift, double horizontal_fov, int cols) {
  return shift * (horizontal_fov / cols);
}

int TemplateStore::learn(ViewDescriptor d, double hd_phase, std::array<double, 2> grid_phase, int experience_id) {
  ViewTemplate t;
  t.id = static_cast<int>(templates_.size());
  t.descriptor = std::move(d);
  t.hd_phase = hd_phase;
  t.grid_phase = grid_phase;
  t.experience_id = experience_id;
  templates_.push_back(std::move(t));
  return templates_.back().id;
}

void TemplateStore::dump(std::ostream& out) const {
  const auto prec = out.precision(17);
  for (const ViewTemplate& t : templates_) {
    out << t.id << ' ' << t.hd_phase << ' ' << t.grid_phase[0] << ' ' << t.grid_phase[1] << ' ' << t.experience_id
        << ' ' << t.descriptor.rows << ' ' << t.descriptor.cols;
    for (double v : t.descriptor.values) out << ' ' << v;
    out << '\n';
  }
  out.precision(prec);
}

}  // namespace nbslam::local_view
