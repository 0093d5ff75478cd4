#include "nbslam/pipeline.hpp"

#include <condition_variable>
#include <deque>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <variant>

#include <nlohmann/json.hpp>

#include "nbslam/synthetic.hpp"

namespace nbslam::pipeline {

namespace fs = std::filesystem;

namespace {

/// Single-producer single-consumer queue with a capacity bound.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(size_t capacity) : capacity_(capacity) {}

  /// False when the consumer has gone away.
  bool push(T item) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || cancelled_; });
    if (cancelled_) return false;
    items_.push_back(std::move(item));
    not_empty_.notify_one();
    return true;
  }

  T pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !items_.empty(); });
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void cancel() {
    std::lock_guard lock(mutex_);
    cancelled_ = true;
    not_full_.notify_all();
  }

 private:
  size_t capacity_;
  std::deque<T> items_;
  bool cancelled_ = false;
  std::mutex mutex_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
};

struct EndOfStream {};
using FrameMessage = std::variant<vo::FrameData, EndOfStream, std::exception_ptr>;

void attach_evaluation(RunOutput& out, const RunConfig& cfg) {
  if (cfg.dataset.empty() || out.map.experiences.empty()) return;
  const fs::path gt = cfg.dataset / "poses.txt";
  const fs::path times = cfg.dataset / "times.txt";
  if (!fs::exists(gt) || !fs::exists(times)) return;
  out.evaluation = evaluate(out.map.experiences, load_ground_truth(gt), load_timestamps(times));
}

RunSummary summarize(const RunOutput& out, const MapBuilder& builder) {
  RunSummary s;
  s.frames = static_cast<int>(out.frames.size());
  for (const FrameLogEntry& f : out.frames) {
    s.keyframes += f.keyframe;
    s.lost_frames += f.tracking_lost;
  }
  s.cycles = static_cast<int>(out.phases.size());
  s.templates = static_cast<int>(out.templates.size());
  s.experiences = static_cast<int>(out.map.experiences.size());
  s.links = static_cast<int>(out.map.links.size());
  s.loop_closures = builder.loop_closures();
  s.path_length = builder.path_length();
  return s;
}

}  // namespace

MapBuilder::MapBuilder(const RunConfig& cfg, double horizontal_fov)
    : cfg_(cfg), fov_(horizontal_fov), state_(attractor::NetworkState::initial(cfg.attractor)) {
  map_.robust_delta = cfg.map.robust_delta;
  map_.angle_scale = cfg.map.angle_scale;
}

const PhaseLogEntry& MapBuilder::cycle(const PlanarVelocity& vel, double timestamp, const Image* view) {
  theta_unwrapped_ += vel.rotational * vel.dt;
  const double step = vel.translational * vel.dt;
  pose_.x += step * std::cos(theta_unwrapped_);
  pose_.y += step * std::sin(theta_unwrapped_);
  pose_.theta = wrap_pi(theta_unwrapped_);
  path_length_ += std::abs(step);

  const local_view::LocalViewConfig& lv = cfg_.local_view;
  std::optional<local_view::ViewDescriptor> descriptor;
  std::optional<local_view::Match> match;
  std::optional<attractor::Cue> cue;
  double facing = 0.0;
  if (view) {
    descriptor = local_view::build_descriptor(*view, lv.rows, lv.cols);
    match = local_view::match(*descriptor, store_, lv.max_shift, lv.threshold);
    if (match) {
      const local_view::ViewTemplate& t = store_[match->template_id];
      // A view moved right by s columns means the camera has turned left of the template's heading.
      facing = local_view::shift_to_heading(match->shift, fov_, lv.cols);
      cue = attractor::Cue{wrap_two_pi(t.hd_phase - facing), t.grid_phase, lv.inject_weight};
    }
  }

  const attractor::StepResult r = attractor::step(state_, cfg_.attractor, vel, cue);
  state_ = r.state;

  auto create = [&]() {
    std::optional<int> prev;
    if (current_experience_ >= 0) prev = current_experience_;
    current_experience_ =
        experience_map::add_experience(map_, pose_, -1, r.hd_estimate, r.grid_estimate, timestamp, prev).id;
  };

  bool closed = false;
  if (current_experience_ < 0) {
    create();
  } else if (r.loop_closed && match) {
    const int matched = store_[match->template_id].experience_id;
    if (matched >= 0 && matched != current_experience_) {
      create();
      experience_map::close_loop(map_, current_experience_, matched, facing);
      experience_map::optimize(map_, cfg_.map.max_iterations);
      const experience_map::Experience& e = map_.experiences[current_experience_];
      theta_unwrapped_ += circular_difference(pose_.theta, e.theta, kTwoPi);
      pose_ = {e.x, e.y, e.theta};
      ++loop_closures_;
      closed = true;
    }
  } else if (attractor::torus_distance(r.grid_estimate, map_.experiences[current_experience_].grid_phase) >
             cfg_.experience_threshold) {
    create();
  }

  int template_id = -1;
  if (match) {
    template_id = match->template_id;
  } else if (descriptor) {
    template_id = store_.learn(std::move(*descriptor), r.hd_estimate, r.grid_estimate, current_experience_);
  }
  experience_map::Experience& current = map_.experiences[current_experience_];
  if (current.template_id < 0) current.template_id = template_id;

  PhaseLogEntry e;
  e.cycle = static_cast<int>(log_.size());
  e.timestamp = timestamp;
  e.x = pose_.x;
  e.y = pose_.y;
  e.theta = pose_.theta;
  e.hd_phase = r.hd_estimate;
  e.grid_phase = r.grid_estimate;
  e.hd_integrator_weight = state_.hd_integrator.weight;
  e.hd_calibration_weight = state_.hd_calibration.weight;
  e.grid_integrator_weight = state_.grid_integrator.weight_x;
  e.grid_calibration_weight = state_.grid_calibration.weight_x;
  e.template_id = template_id;
  e.cue = cue.has_value();
  e.loop_closed = closed;
  e.experience_id = current_experience_;
  log_.push_back(e);
  return log_.back();
}

void MapBuilder::finish() {
  if (loop_closures_ > 0) experience_map::optimize(map_, cfg_.map.max_iterations);
}

RunOutput run(const RunConfig& cfg) {
  const StereoSequence seq = load_stereo_sequence(cfg.dataset);
  const CameraIntrinsics k = cfg.intrinsics ? *cfg.intrinsics
                                            : seq.calibration.value_or(CameraIntrinsics{});
  if (!cfg.intrinsics && !seq.calibration) {
    throw std::runtime_error("run: no intrinsics in the config and no calib.txt in " + cfg.dataset.string());
  }
  RunConfig effective = cfg;
  effective.intrinsics = k;
  effective.validate();

  RunOutput out;
  MapBuilder builder(effective, k.horizontal_fov());
  vo::StereoOdometry odometry(k, effective.vo);

  BoundedQueue<FrameMessage> queue(static_cast<size_t>(effective.queue_capacity));
  std::thread loader([&seq, &queue] {
    try {
      for (size_t i = 0; i < seq.size(); ++i) {
        if (!queue.push(seq.load(i))) return;
      }
      queue.push(EndOfStream{});
    } catch (...) {
      queue.push(std::current_exception());
    }
  });

  try {
    for (;;) {
      FrameMessage msg = queue.pop();
      if (std::holds_alternative<EndOfStream>(msg)) break;
      if (auto* err = std::get_if<std::exception_ptr>(&msg)) std::rethrow_exception(*err);
      vo::FrameData frame = std::move(std::get<vo::FrameData>(msg));
      const Image left = frame.left;
      const vo::FrameResult fr = odometry.process(std::move(frame));
      out.frames.push_back(
          {fr.frame_index, fr.timestamp, fr.is_keyframe, fr.tracking_lost, fr.pose, fr.affine, fr.velocity});
      if (!fr.is_keyframe) continue;
      const PlanarVelocity vel = fr.velocity.value_or(PlanarVelocity{0.0, 0.0, 0.0});
      builder.cycle(vel, fr.timestamp, &left);
    }
  } catch (...) {
    queue.cancel();
    loader.join();
    throw;
  }
  loader.join();

  builder.finish();
  out.map = builder.map();
  out.templates = builder.templates();
  out.phases = builder.log();
  out.summary = summarize(out, builder);
  attach_evaluation(out, effective);
  return out;
}

RunOutput run_trace(const RunConfig& cfg, const std::vector<TraceRecord>& trace) {
  cfg.validate();
  const CameraIntrinsics k = cfg.intrinsics.value_or(CameraIntrinsics{});
  const double fov = cfg.intrinsics ? k.horizontal_fov() : kPi / 2.0;
  RunOutput out;
  MapBuilder builder(cfg, fov);
  double previous = 0.0;
  for (size_t i = 0; i < trace.size(); ++i) {
    const TraceRecord& r = trace[i];
    const double dt = r.timestamp - previous;
    if (dt < 0.0 || (i > 0 && dt == 0.0)) {
      throw std::runtime_error("velocity trace: timestamp not increasing at record " + std::to_string(i));
    }
    previous = r.timestamp;
    std::optional<Image> view;
    if (r.view >= 0) view = synth::label_view(r.view);
    builder.cycle({r.rotational, r.translational, dt}, r.timestamp, view ? &*view : nullptr);
  }
  builder.finish();
  out.map = builder.map();
  out.templates = builder.templates();
  out.phases = builder.log();
  out.summary = summarize(out, builder);
  attach_evaluation(out, cfg);
  return out;
}

void write_outputs(const fs::path& dir, const RunOutput& out, const RunConfig& cfg) {
  fs::create_directories(dir);
  auto open = [&dir](const char* name) {
    std::ofstream f(dir / name);
    if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("experiences.csv");
    experience_map::write_experiences_csv(f, out.map);
  }
  {
    auto f = open("links.csv");
    experience_map::write_links_csv(f, out.map);
  }
  {
    auto f = open("frames.csv");
    write_frame_log(f, out.frames);
  }
  {
    auto f = open("keyframes.csv");
    write_keyframe_log(f, out.frames);
  }
  {
    auto f = open("phases.csv");
    write_phase_log(f, out.phases);
  }
  {
    auto f = open("templates.txt");
    out.templates.dump(f);
  }
  {
    auto f = open("config.txt");
    write_config(f, cfg);
  }
  const RunSummary& s = out.summary;
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["frames"] = s.frames;
  j["keyframes"] = s.keyframes;
  j["lost_frames"] = s.lost_frames;
  j["cycles"] = s.cycles;
  j["templates"] = s.templates;
  j["experiences"] = s.experiences;
  j["links"] = s.links;
  j["loop_closures"] = s.loop_closures;
  j["path_length_m"] = s.path_length;
  if (!out.map.experiences.empty()) {
    const auto& first = out.map.experiences.front();
    const auto& last = out.map.experiences.back();
    j["endpoint_to_start_m"] = std::hypot(last.x - first.x, last.y - first.y);
  }
  if (out.evaluation) {
    std::ostringstream ss;
    write_stats_json(ss, *out.evaluation);
    j["evaluation"] = nlohmann::ordered_json::parse(ss.str());
  }
  auto f = open("stats.json");
  f << j.dump(2) << '\n';
}

}  // namespace nbslam::pipeline
