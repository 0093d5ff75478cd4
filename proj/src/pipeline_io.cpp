#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <variant>

#include "kv.hpp"
#include "nbslam/image.hpp"
#include "nbslam/pipeline.hpp"

namespace nbslam::pipeline {

namespace fs = std::filesystem;

namespace {

using FieldPtr = std::variant<double*, int*, std::uint64_t*, fs::path*>;

struct Field {
  std::string key;
  FieldPtr ptr;
};

std::vector<Field> run_fields(RunConfig& c, CameraIntrinsics& k) {
  vo::VoConfig& v = c.vo;
  return {
      {"dataset", &c.dataset},
      {"output_dir", &c.output_dir},
      {"seed", &c.seed},
      {"queue_capacity", &c.queue_capacity},
      {"experience_threshold", &c.experience_threshold},
      {"fx", &k.fx},
      {"fy", &k.fy},
      {"cx", &k.cx},
      {"cy", &k.cy},
      {"baseline", &k.baseline},
      {"width", &k.width},
      {"height", &k.height},
      {"attractor.total_energy", &c.attractor.total_energy},
      {"attractor.delta_inte", &c.attractor.delta_inte},
      {"attractor.delta_cali", &c.attractor.delta_cali},
      {"attractor.familiarity_threshold", &c.attractor.familiarity_threshold},
      {"attractor.weight_floor", &c.attractor.weight_floor},
      {"attractor.grid_gain", &c.attractor.grid_gain},
      {"local_view.rows", &c.local_view.rows},
      {"local_view.cols", &c.local_view.cols},
      {"local_view.max_shift", &c.local_view.max_shift},
      {"local_view.threshold", &c.local_view.threshold},
      {"local_view.inject_weight", &c.local_view.inject_weight},
      {"vo.pyramid_levels", &v.pyramid_levels},
      {"vo.huber_gamma", &v.huber_gamma},
      {"vo.gradient_c", &v.gradient_c},
      {"vo.lambda", &v.lambda},
      {"vo.g_const", &v.g_const},
      {"vo.window_size", &v.window_size},
      {"vo.block_rows", &v.block_rows},
      {"vo.block_cols", &v.block_cols},
      {"vo.border", &v.border},
      {"vo.stereo_search_range", &v.stereo_search_range},
      {"vo.stereo_max_sad", &v.stereo_max_sad},
      {"vo.stereo_min_contrast", &v.stereo_min_contrast},
      {"vo.stereo_disparity_sigma", &v.stereo_disparity_sigma},
      {"vo.flow_threshold", &v.flow_threshold},
      {"vo.brightness_threshold", &v.brightness_threshold},
      {"vo.max_iterations", &v.max_iterations},
      {"vo.convergence_eps", &v.convergence_eps},
      {"vo.joint_iterations", &v.joint_iterations},
      {"vo.epipolar_search_px", &v.epipolar_search_px},
      {"vo.epipolar_pixel_sigma", &v.epipolar_pixel_sigma},
      {"vo.epipolar_max_error", &v.epipolar_max_error},
      {"map.robust_delta", &c.map.robust_delta},
      {"map.angle_scale", &c.map.angle_scale},
      {"map.max_iterations", &c.map.max_iterations},
  };
}

bool is_intrinsics_key(const std::string& key) {
  return key == "fx" || key == "fy" || key == "cx" || key == "cy" || key == "baseline" || key == "width" ||
         key == "height";
}

std::string format_value(const FieldPtr& ptr) {
  std::ostringstream ss;
  ss.precision(17);
  std::visit([&ss](auto* p) { ss << *p; }, ptr);
  std::string s = ss.str();
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

kv::Setter setter_for(const FieldPtr& ptr) {
  return std::visit([](auto* p) { return kv::bind(*p); }, ptr);
}

fs::path frame_path(const fs::path& dir, size_t index) {
  char name[16];
  std::snprintf(name, sizeof(name), "%06zu", index);
  for (const char* ext : {".png", ".pgm"}) {
    fs::path p = dir / (std::string(name) + ext);
    if (fs::exists(p)) return p;
  }
  return {};
}

std::vector<double> split_numbers(const std::string& line) {
  std::vector<double> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(kv::parse_number<double>(tok));
  return out;
}

}  // namespace

void RunConfig::validate() const {
  if (intrinsics) intrinsics->validate();
  attractor.validate();
  local_view.validate();
  vo.validate();
  if (!(experience_threshold > 0.0)) throw std::invalid_argument("config: experience_threshold must be positive");
  if (!(map.robust_delta > 0.0) || !(map.angle_scale > 0.0) || map.max_iterations < 1) {
    throw std::invalid_argument("config: invalid map settings");
  }
  if (queue_capacity < 1) throw std::invalid_argument("config: queue_capacity must be at least 1");
}

RunConfig parse_config(std::istream& in, RunConfig base) {
  CameraIntrinsics k = base.intrinsics.value_or(CameraIntrinsics{});
  bool intrinsics_seen = false;
  std::map<std::string, kv::Setter> setters;
  for (const Field& f : run_fields(base, k)) {
    kv::Setter set = setter_for(f.ptr);
    if (is_intrinsics_key(f.key)) {
      setters[f.key] = [set, &intrinsics_seen](const std::string& s) {
        set(s);
        intrinsics_seen = true;
      };
    } else {
      setters[f.key] = set;
    }
  }
  kv::parse(in, setters, "config");
  if (intrinsics_seen) base.intrinsics = k;
  return base;
}

RunConfig load_config(const fs::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path.string());
  return parse_config(in, std::move(base));
}

void write_config(std::ostream& out, const RunConfig& cfg) {
  RunConfig copy = cfg;
  CameraIntrinsics k = cfg.intrinsics.value_or(CameraIntrinsics{});
  for (const Field& f : run_fields(copy, k)) {
    if (is_intrinsics_key(f.key) && !cfg.intrinsics) continue;
    if ((f.key == "dataset" || f.key == "output_dir") && format_value(f.ptr).empty()) continue;
    out << f.key << " = " << format_value(f.ptr) << '\n';
  }
}

// ---------------------------------------------------------------------------

vo::FrameData StereoSequence::load(size_t index) const {
  vo::FrameData f;
  f.left = read_image(left.at(index));
  f.right = read_image(right.at(index));
  if (f.left.width() != width || f.left.height() != height || f.right.width() != width ||
      f.right.height() != height) {
    throw std::runtime_error("stereo sequence: image size changed at index " + std::to_string(index));
  }
  f.timestamp = timestamps[index];
  return f;
}

std::vector<double> load_timestamps(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open timestamps: " + path.string());
  std::vector<double> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = kv::trim(line);
    if (t.empty()) continue;
    try {
      out.push_back(kv::parse_number<double>(t));
    } catch (const std::invalid_argument&) {
      throw std::runtime_error(path.string() + ": malformed timestamp on line " + std::to_string(line_no));
    }
  }
  return out;
}

CameraIntrinsics read_calibration(std::istream& in, int width, int height) {
  std::optional<std::vector<double>> p0, p1;
  std::string line;
  while (std::getline(in, line)) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string key = kv::trim(std::string_view(line).substr(0, colon));
    if (key != "P0" && key != "P1") continue;
    std::vector<double> v = split_numbers(line.substr(colon + 1));
    if (v.size() != 12) throw std::runtime_error("calibration: " + key + " needs 12 values");
    (key == "P0" ? p0 : p1) = std::move(v);
  }
  if (!p0 || !p1) throw std::runtime_error("calibration: P0 and P1 rows are required");
  CameraIntrinsics k;
  k.fx = (*p0)[0];
  k.cx = (*p0)[2];
  k.fy = (*p0)[5];
  k.cy = (*p0)[6];
  k.baseline = -(*p1)[3] / (*p1)[0];
  k.width = width;
  k.height = height;
  k.validate();
  return k;
}

StereoSequence load_stereo_sequence(const fs::path& path) {
  StereoSequence seq;
  seq.root = path;
  if (!fs::is_directory(path)) throw std::runtime_error("stereo sequence: not a directory: " + path.string());
  seq.timestamps = load_timestamps(path / "times.txt");
  for (size_t i = 0; i < seq.timestamps.size(); ++i) {
    const std::string idx = std::to_string(i);
    if (i > 0 && !(seq.timestamps[i] > seq.timestamps[i - 1])) {
      throw std::runtime_error("stereo sequence: timestamp not increasing at index " + idx);
    }
    fs::path l = frame_path(path / "image_0", i);
    fs::path r = frame_path(path / "image_1", i);
    if (l.empty()) throw std::runtime_error("stereo sequence: missing left image at index " + idx);
    if (r.empty()) throw std::runtime_error("stereo sequence: missing right image at index " + idx);
    int lw = 0, lh = 0, rw = 0, rh = 0;
    read_image_size(l, lw, lh);
    read_image_size(r, rw, rh);
    if (i == 0) {
      seq.width = lw;
      seq.height = lh;
    }
    if (lw != seq.width || lh != seq.height || rw != seq.width || rh != seq.height) {
      throw std::runtime_error("stereo sequence: image size mismatch at index " + idx);
    }
    seq.left.push_back(std::move(l));
    seq.right.push_back(std::move(r));
  }
  if (fs::exists(path / "calib.txt")) {
    std::ifstream in(path / "calib.txt");
    seq.calibration = read_calibration(in, seq.width, seq.height);
  }
  return seq;
}

std::vector<RigidTransform3> read_ground_truth(std::istream& in) {
  std::vector<RigidTransform3> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (kv::trim(line).empty()) continue;
    std::vector<double> v;
    try {
      v = split_numbers(line);
    } catch (const std::invalid_argument&) {
      v.clear();
    }
    if (v.size() != 12) {
      throw std::runtime_error("ground truth: line " + std::to_string(line_no) + " must hold 12 numbers");
    }
    Mat34 m;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) m(r, c) = v[4 * r + c];
    }
    RigidTransform3 t = RigidTransform3::from_matrix(m);
    if (!t.is_valid(1e-6)) {
      std::clog << "ground truth: re-orthonormalized rotation on line " << line_no << '\n';
      t.orthonormalize();
    }
    out.push_back(t);
  }
  return out;
}

std::vector<RigidTransform3> load_ground_truth(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ground truth: " + path.string());
  return read_ground_truth(in);
}

void write_ground_truth(std::ostream& out, const std::vector<RigidTransform3>& poses) {
  const auto prec = out.precision(17);
  for (const RigidTransform3& t : poses) {
    const Mat34 m = t.matrix();
    for (int i = 0; i < 12; ++i) out << (i ? " " : "") << m(i / 4, i % 4);
    out << '\n';
  }
  out.precision(prec);
}

// ---------------------------------------------------------------------------

std::vector<TraceRecord> read_velocity_trace(std::istream& in) {
  std::vector<TraceRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = kv::trim(line);
    if (t.empty() || t.rfind("timestamp", 0) == 0) continue;
    std::string cell;
    std::istringstream ss(t);
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(kv::trim(cell));
    TraceRecord r;
    try {
      if (cells.size() < 3 || cells.size() > 4) throw std::invalid_argument("column count");
      r.timestamp = kv::parse_number<double>(cells[0]);
      r.rotational = kv::parse_number<double>(cells[1]);
      r.translational = kv::parse_number<double>(cells[2]);
      if (cells.size() == 4 && !cells[3].empty()) r.view = kv::parse_number<int>(cells[3]);
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("velocity trace: malformed line " + std::to_string(line_no));
    }
    if (!out.empty() && !(r.timestamp > out.back().timestamp)) {
      throw std::runtime_error("velocity trace: timestamp not increasing on line " + std::to_string(line_no));
    }
    out.push_back(r);
  }
  return out;
}

std::vector<TraceRecord> load_velocity_trace(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open velocity trace: " + path.string());
  return read_velocity_trace(in);
}

void write_velocity_trace(std::ostream& out, const std::vector<TraceRecord>& trace) {
  const auto prec = out.precision(17);
  out << "timestamp,rotational,translational,view\n";
  for (const TraceRecord& r : trace) {
    out << r.timestamp << ',' << r.rotational << ',' << r.translational << ',' << r.view << '\n';
  }
  out.precision(prec);
}

void write_frame_log(std::ostream& out, const std::vector<FrameLogEntry>& frames) {
  const auto prec = out.precision(17);
  out << "frame,timestamp,keyframe,tracking_lost,tx,ty,tz\n";
  for (const FrameLogEntry& f : frames) {
    out << f.frame_index << ',' << f.timestamp << ',' << f.keyframe << ',' << f.tracking_lost << ','
        << f.pose.translation.x() << ',' << f.pose.translation.y() << ',' << f.pose.translation.z() << '\n';
  }
  out.precision(prec);
}

void write_keyframe_log(std::ostream& out, const std::vector<FrameLogEntry>& frames) {
  const auto prec = out.precision(17);
  out << "timestamp,r00,r01,r02,t0,r10,r11,r12,t1,r20,r21,r22,t2,a,b,omega,v\n";
  for (const FrameLogEntry& f : frames) {
    if (!f.keyframe) continue;
    const Mat34 m = f.pose.matrix();
    out << f.timestamp;
    for (int i = 0; i < 12; ++i) out << ',' << m(i / 4, i % 4);
    out << ',' << f.affine.a << ',' << f.affine.b << ',';
    if (f.velocity) {
      out << f.velocity->rotational << ',' << f.velocity->translational;
    } else {
      out << ',';
    }
    out << '\n';
  }
  out.precision(prec);
}

void write_phase_log(std::ostream& out, const std::vector<PhaseLogEntry>& phases) {
  const auto prec = out.precision(17);
  out << "cycle,timestamp,x,y,theta,hd_phase,grid_x,grid_y,hd_inte_w,hd_cali_w,grid_inte_w,grid_cali_w,"
         "template_id,cue,loop_closed,experience_id\n";
  for (const PhaseLogEntry& e : phases) {
    out << e.cycle << ',' << e.timestamp << ',' << e.x << ',' << e.y << ',' << e.theta << ',' << e.hd_phase << ','
        << e.grid_phase[0] << ',' << e.grid_phase[1] << ',' << e.hd_integrator_weight << ','
        << e.hd_calibration_weight << ',' << e.grid_integrator_weight << ',' << e.grid_calibration_weight << ','
        << e.template_id << ',' << e.cue << ',' << e.loop_closed << ',' << e.experience_id << '\n';
  }
  out.precision(prec);
}

std::vector<PhaseLogEntry> read_phase_log(std::istream& in) {
  std::vector<PhaseLogEntry> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = kv::trim(line);
    if (t.empty() || t.rfind("cycle", 0) == 0) continue;
    std::vector<std::string> cells;
    std::istringstream ss(t);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 16) throw std::runtime_error("phase log: malformed line " + std::to_string(line_no));
    PhaseLogEntry e;
    try {
      e.cycle = kv::parse_number<int>(cells[0]);
      e.timestamp = kv::parse_number<double>(cells[1]);
      e.x = kv::parse_number<double>(cells[2]);
      e.y = kv::parse_number<double>(cells[3]);
      e.theta = kv::parse_number<double>(cells[4]);
      e.hd_phase = kv::parse_number<double>(cells[5]);
      e.grid_phase = {kv::parse_number<double>(cells[6]), kv::parse_number<double>(cells[7])};
      e.hd_integrator_weight = kv::parse_number<double>(cells[8]);
      e.hd_calibration_weight = kv::parse_number<double>(cells[9]);
      e.grid_integrator_weight = kv::parse_number<double>(cells[10]);
      e.grid_calibration_weight = kv::parse_number<double>(cells[11]);
      e.template_id = kv::parse_number<int>(cells[12]);
      e.cue = kv::parse_number<int>(cells[13]) != 0;
      e.loop_closed = kv::parse_number<int>(cells[14]) != 0;
      e.experience_id = kv::parse_number<int>(cells[15]);
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("phase log: malformed line " + std::to_string(line_no));
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace nbslam::pipeline
