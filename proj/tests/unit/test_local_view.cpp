#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "nbslam/angles.hpp"
#include "nbslam/local_view.hpp"
#include "nbslam/synthetic.hpp"

using namespace nbslam;
using namespace nbslam::local_view;

namespace {

Image noise_image(unsigned seed, int w = 96, int h = 32) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(20.0f, 230.0f);
  Image img(w, h);
  for (float& v : img.data()) v = u(rng);
  return img;
}

ViewDescriptor shifted_right(const ViewDescriptor& d, int shift, double fill) {
  ViewDescriptor out = d;
  for (int r = 0; r < d.rows; ++r) {
    for (int c = 0; c < d.cols; ++c) {
      const int src = c - shift;
      out.values[static_cast<size_t>(r) * d.cols + c] = (src >= 0 && src < d.cols) ? d.at(r, src) : fill;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("descriptor normalisation") {
  const ViewDescriptor flat = build_descriptor(Image(64, 32, 90.0f), 16, 48);
  CHECK(flat.values.size() == 16u * 48u);
  for (double v : flat.values) CHECK(v == 0.0);

  const Image img = noise_image(1);
  Image brighter = img, stronger = img;
  for (float& v : brighter.data()) v += 20.0f;
  for (size_t i = 0; i < img.data().size(); ++i) stronger.data()[i] = 1.5f * (img.data()[i] - 100.0f) + 100.0f;

  const ViewDescriptor a = build_descriptor(img, 16, 48);
  const ViewDescriptor b = build_descriptor(brighter, 16, 48);
  const ViewDescriptor c = build_descriptor(stronger, 16, 48);
  double mean = 0.0, max_abs = 0.0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    CHECK(std::abs(a.values[i] - b.values[i]) < 1e-5);
    CHECK(std::abs(a.values[i] - c.values[i]) < 1e-5);
    mean += a.values[i];
    max_abs = std::max(max_abs, std::abs(a.values[i]));
  }
  CHECK(std::abs(mean / a.values.size()) < 1e-12);
  CHECK(max_abs == doctest::Approx(1.0));
}

TEST_CASE("contrast scaling in double precision gives identical descriptors") {
  Image img(48, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 48; ++x) img.at(x, y) = static_cast<float>((x * 7 + y * 13) % 64);
  Image scaled = img;
  for (float& v : scaled.data()) v *= 1.5f;
  const ViewDescriptor a = build_descriptor(img, 16, 48);
  const ViewDescriptor b = build_descriptor(scaled, 16, 48);
  for (size_t i = 0; i < a.values.size(); ++i) CHECK(std::abs(a.values[i] - b.values[i]) < 1e-9);
}

TEST_CASE("descriptor errors") {
  CHECK_THROWS_AS(build_descriptor(Image(), 16, 48), std::invalid_argument);
  CHECK_THROWS_AS(build_descriptor(noise_image(2), 0, 48), std::invalid_argument);
  CHECK_THROWS_AS(build_descriptor(noise_image(2), 16, -1), std::invalid_argument);
}

TEST_CASE("matching") {
  TemplateStore store;
  const ViewDescriptor d = build_descriptor(noise_image(3), 16, 48);
  CHECK_FALSE(match(d, store, 6, 0.07));

  CHECK(store.learn(build_descriptor(noise_image(4), 16, 48), 0.0, {0.0, 0.0}, 0) == 0);
  CHECK(store.learn(d, 1.0, {2.0, 3.0}, 1) == 1);
  CHECK(store.size() == 2);

  const auto exact = match(d, store, 6, 0.07);
  REQUIRE(exact);
  CHECK(exact->template_id == 1);
  CHECK(exact->shift == 0);
  CHECK(exact->distance == 0.0);

  for (int s : {-5, -3, 1, 3, 6}) {
    const auto m = match(shifted_right(d, s, 0.0), store, 6, 0.07);
    REQUIRE(m);
    CHECK(m->template_id == 1);
    CHECK(m->shift == s);
    CHECK(m->distance < 1e-9);
    CHECK(shifted_difference(shifted_right(d, s, 0.0), d, s) < 1e-9);
  }
  CHECK_FALSE(match(build_descriptor(noise_image(99), 16, 48), store, 6, 0.07));
}

TEST_CASE("ties go to the lowest id") {
  TemplateStore store;
  const ViewDescriptor d = build_descriptor(noise_image(5), 16, 48);
  store.learn(d, 0.0, {0.0, 0.0}, 0);
  store.learn(d, 0.0, {0.0, 0.0}, 1);
  const auto m = match(d, store, 6, 0.07);
  REQUIRE(m);
  CHECK(m->template_id == 0);
  CHECK(m->shift == 0);
}

TEST_CASE("ties between shifts prefer the smallest, negative first") {
  // A constant-row descriptor matches itself at every shift.
  ViewDescriptor d;
  d.rows = 2;
  d.cols = 8;
  d.values = {1, 1, 1, 1, 1, 1, 1, 1, -1, -1, -1, -1, -1, -1, -1, -1};
  TemplateStore store;
  store.learn(d, 0.0, {0.0, 0.0}, 0);
  const auto m = match(d, store, 3, 0.5);
  REQUIRE(m);
  CHECK(m->shift == 0);

  ViewDescriptor ramp;
  ramp.rows = 1;
  ramp.cols = 6;
  ramp.values = {0, 0, 1, 1, 0, 0};
  ViewDescriptor probe = ramp;
  probe.values = {0, 1, 1, 0, 0, 0};
  TemplateStore s2;
  s2.learn(ramp, 0.0, {0.0, 0.0}, 0);
  // Only a shift of -1 aligns the two.
  const auto m2 = match(probe, s2, 2, 0.5);
  REQUIRE(m2);
  CHECK(m2->shift == -1);
}

TEST_CASE("learning and dump") {
  TemplateStore store;
  for (int i = 0; i < 5; ++i) {
    CHECK(store.learn(build_descriptor(noise_image(10 + i), 4, 6), 0.1 * i, {0.2, 0.3}, i) == i);
  }
  CHECK(store[3].hd_phase == doctest::Approx(0.3));
  CHECK(store[4].experience_id == 4);
  std::ostringstream out;
  store.dump(out);
  std::istringstream in(out.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    int id, exp, rows, cols;
    double hd, gx, gy;
    fields >> id >> hd >> gx >> gy >> exp >> rows >> cols;
    CHECK(id == lines);
    CHECK(rows == 4);
    CHECK(cols == 6);
    int values = 0;
    double v;
    while (fields >> v) ++values;
    CHECK(values == 24);
    ++lines;
  }
  CHECK(lines == 5);
}

TEST_CASE("shift to heading") {
  CHECK(shift_to_heading(0, kPi / 2, 48) == 0.0);
  CHECK(shift_to_heading(3, kPi / 2, 48) == doctest::Approx(3 * (kPi / 2) / 48));
  CHECK(shift_to_heading(-6, 1.2, 48) == doctest::Approx(-6 * 1.2 / 48));
}

TEST_CASE("label views are distinct and repeatable") {
  const Image a = synth::label_view(3), b = synth::label_view(3), c = synth::label_view(4);
  CHECK(a.data() == b.data());
  TemplateStore store;
  store.learn(build_descriptor(a, 16, 48), 0.0, {0.0, 0.0}, 0);
  CHECK(match(build_descriptor(b, 16, 48), store, 6, 0.07));
  CHECK_FALSE(match(build_descriptor(c, 16, 48), store, 6, 0.07));
}

TEST_CASE("config validation") {
  LocalViewConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.rows = 0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.threshold = -0.1;
  CHECK_THROWS(cfg.validate());
}
