#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <vector>

#include "nbslam/image.hpp"

namespace nbslam::local_view {

/// Block-averaged, mean-removed, max-abs normalised intensity grid.
struct ViewDescriptor {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;  // row-major, rows * cols

  double at(int r, int c) const { return values[static_cast<size_t>(r) * cols + c]; }
};

struct ViewTemplate {
  int id = 0;
  ViewDescriptor descriptor;
  double hd_phase = 0.0;
  std::array<double, 2> grid_phase{0.0, 0.0};
  int experience_id = -1;
};

struct LocalViewConfig {
  int rows = 16;
  int cols = 48;
  int max_shift = 6;         // descriptor columns
  double threshold = 0.07;   // mean absolute difference
  double inject_weight = 2.0;

  void validate() const;
};

struct Match {
  int template_id = 0;
  int shift = 0;  // columns; positive when the current view is the template moved right
  double distance = 0.0;
};

class TemplateStore {
 public:
  const std::vector<ViewTemplate>& templates() const { return templates_; }
  size_t size() const { return templates_.size(); }
  bool empty() const { return templates_.empty(); }
  const ViewTemplate& operator[](int id) const { return templates_.at(static_cast<size_t>(id)); }

  /// Appends a template and returns its id (ids are 0, 1, 2, ... in creation order).
  int learn(ViewDescriptor d, double hd_phase, std::array<double, 2> grid_phase, int experience_id);

  /// One line per template: id hd_phase grid_x grid_y experience_id rows cols values...
  void dump(std::ostream& out) const;

 private:
  std::vector<ViewTemplate> templates_;
};

/// Throws std::invalid_argument for an empty image or a non-positive grid size.
ViewDescriptor build_descriptor(const Image& image, int rows, int cols);

/// Mean absolute difference between `d` and `t` when `d` is `t` moved right by `shift` columns,
/// taken over the overlapping columns.
double shifted_difference(const ViewDescriptor& d, const ViewDescriptor& t, int shift);

/// Best template over shifts in [-max_shift, max_shift], if its distance is below `threshold`.
/// Ties go to the lowest template id, then the smallest |shift|, negative before positive.
std::optional<Match> match(const ViewDescriptor& d, const TemplateStore& store, int max_shift, double threshold);

/// Heading offset in radians corresponding to a descriptor shift.
double shift_to_heading(int shift, double horizontal_fov, int cols);

}  // namespace nbslam::local_view
