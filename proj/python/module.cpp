#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "nbslam/attractor.hpp"
#include "nbslam/experience_map.hpp"
#include "nbslam/image.hpp"
#include "nbslam/local_view.hpp"
#include "nbslam/pipeline.hpp"
#include "nbslam/synthetic.hpp"

namespace py = pybind11;
using namespace nbslam;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Image to_image(const FloatArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("image must be a 2-D array");
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.data().begin());
  return img;
}

FloatArray to_array(const Image& img) {
  FloatArray a({img.height(), img.width()});
  std::copy(img.data().begin(), img.data().end(), a.mutable_data());
  return a;
}

template <class T>
std::string repr3(const char* name, const T& v) {
  std::ostringstream s;
  s << name << "(x=" << v.x << ", y=" << v.y << ", theta=" << v.theta << ")";
  return s.str();
}

}  // namespace

PYBIND11_MODULE(_nbslam, m) {
  m.doc() = "Stereo odometry, attractor networks and experience maps";
  m.attr("__version__") = "0.1.0";

  m.def("read_image", [](const std::filesystem::path& p) { return to_array(read_image(p)); },
        "Gray image as a float32 array of shape (height, width).");
  m.def("write_pgm", [](const std::filesystem::path& p, const FloatArray& a) { write_pgm(p, to_image(a)); });

  py::class_<PlanarVelocity>(m, "PlanarVelocity")
      .def(py::init<>())
      .def(py::init([](double rotational, double translational, double dt) {
             return PlanarVelocity{rotational, translational, dt};
           }),
           py::arg("rotational"), py::arg("translational"), py::arg("dt"))
      .def_readwrite("rotational", &PlanarVelocity::rotational)
      .def_readwrite("translational", &PlanarVelocity::translational)
      .def_readwrite("dt", &PlanarVelocity::dt);

  // Attractor networks
  auto att = m.def_submodule("attractor");
  py::class_<attractor::RingBump>(att, "RingBump")
      .def(py::init<>())
      .def(py::init([](double mu, double weight) { return attractor::RingBump{mu, weight}; }), py::arg("mu"),
           py::arg("weight"))
      .def_readwrite("mu", &attractor::RingBump::mu)
      .def_readwrite("weight", &attractor::RingBump::weight);
  py::class_<attractor::TorusBump>(att, "TorusBump")
      .def(py::init<>())
      .def_readwrite("mu_x", &attractor::TorusBump::mu_x)
      .def_readwrite("mu_y", &attractor::TorusBump::mu_y)
      .def_readwrite("weight_x", &attractor::TorusBump::weight_x)
      .def_readwrite("weight_y", &attractor::TorusBump::weight_y);
  py::class_<attractor::AttractorConfig>(att, "AttractorConfig")
      .def(py::init<>())
      .def_readwrite("total_energy", &attractor::AttractorConfig::total_energy)
      .def_readwrite("delta_inte", &attractor::AttractorConfig::delta_inte)
      .def_readwrite("delta_cali", &attractor::AttractorConfig::delta_cali)
      .def_readwrite("familiarity_threshold", &attractor::AttractorConfig::familiarity_threshold)
      .def_readwrite("weight_floor", &attractor::AttractorConfig::weight_floor)
      .def_readwrite("grid_gain", &attractor::AttractorConfig::grid_gain)
      .def("validate", &attractor::AttractorConfig::validate);
  py::class_<attractor::NetworkState>(att, "NetworkState")
      .def_static("initial", &attractor::NetworkState::initial)
      .def_readwrite("hd_integrator", &attractor::NetworkState::hd_integrator)
      .def_readwrite("hd_calibration", &attractor::NetworkState::hd_calibration)
      .def_readwrite("grid_integrator", &attractor::NetworkState::grid_integrator)
      .def_readwrite("grid_calibration", &attractor::NetworkState::grid_calibration);
  py::class_<attractor::Cue>(att, "Cue")
      .def(py::init<>())
      .def_readwrite("hd_phase", &attractor::Cue::hd_phase)
      .def_readwrite("grid_phase", &attractor::Cue::grid_phase)
      .def_readwrite("inject_weight", &attractor::Cue::inject_weight);
  py::class_<attractor::StepResult>(att, "StepResult")
      .def_readonly("state", &attractor::StepResult::state)
      .def_readonly("hd_estimate", &attractor::StepResult::hd_estimate)
      .def_readonly("grid_estimate", &attractor::StepResult::grid_estimate)
      .def_readonly("loop_closed", &attractor::StepResult::loop_closed);
  att.def("step", &attractor::step, py::arg("state"), py::arg("config"), py::arg("velocity"),
          py::arg("cue") = std::nullopt);
  att.def("path_integrate_ring", &attractor::path_integrate_ring, py::arg("bump"), py::arg("omega"), py::arg("dt"));
  att.def("mutual_inhibition",
          [](double inte, double cali, double d_inte, double d_cali, double floor) {
            const auto w = attractor::mutual_inhibition(inte, cali, d_inte, d_cali, floor);
            return py::make_tuple(w.inte, w.cali);
          },
          py::arg("inte"), py::arg("cali"), py::arg("delta_inte"), py::arg("delta_cali"), py::arg("weight_floor") = 1e-6);
  att.def("global_inhibition", [](double inte, double cali, double total) {
    const auto w = attractor::global_inhibition(inte, cali, total);
    return py::make_tuple(w.inte, w.cali);
  });
  att.def("torus_distance", &attractor::torus_distance);

  // Local view
  auto lv = m.def_submodule("local_view");
  py::class_<local_view::ViewDescriptor>(lv, "ViewDescriptor")
      .def_readonly("rows", &local_view::ViewDescriptor::rows)
      .def_readonly("cols", &local_view::ViewDescriptor::cols)
      .def_property_readonly("values", [](const local_view::ViewDescriptor& d) {
        py::array_t<double> a({d.rows, d.cols});
        std::copy(d.values.begin(), d.values.end(), a.mutable_data());
        return a;
      });
  py::class_<local_view::Match>(lv, "Match")
      .def_readonly("template_id", &local_view::Match::template_id)
      .def_readonly("shift", &local_view::Match::shift)
      .def_readonly("distance", &local_view::Match::distance);
  py::class_<local_view::TemplateStore>(lv, "TemplateStore")
      .def(py::init<>())
      .def("learn", &local_view::TemplateStore::learn, py::arg("descriptor"), py::arg("hd_phase"),
           py::arg("grid_phase"), py::arg("experience_id"))
      .def("__len__", &local_view::TemplateStore::size);
  lv.def("build_descriptor", [](const FloatArray& img, int rows, int cols) {
    return local_view::build_descriptor(to_image(img), rows, cols);
  }, py::arg("image"), py::arg("rows") = 16, py::arg("cols") = 48);
  lv.def("match", &local_view::match, py::arg("descriptor"), py::arg("store"), py::arg("max_shift"),
         py::arg("threshold"));

  // Experience map
  auto em = m.def_submodule("experience_map");
  py::class_<experience_map::PlanarPose>(em, "PlanarPose")
      .def(py::init<>())
      .def(py::init([](double x, double y, double theta) { return experience_map::PlanarPose{x, y, theta}; }),
           py::arg("x"), py::arg("y"), py::arg("theta"))
      .def_readwrite("x", &experience_map::PlanarPose::x)
      .def_readwrite("y", &experience_map::PlanarPose::y)
      .def_readwrite("theta", &experience_map::PlanarPose::theta)
      .def("__repr__", [](const experience_map::PlanarPose& p) { return repr3("PlanarPose", p); });
  py::class_<experience_map::Experience>(em, "Experience")
      .def_readonly("id", &experience_map::Experience::id)
      .def_readonly("x", &experience_map::Experience::x)
      .def_readonly("y", &experience_map::Experience::y)
      .def_readonly("theta", &experience_map::Experience::theta)
      .def_readonly("template_id", &experience_map::Experience::template_id)
      .def_readonly("hd_phase", &experience_map::Experience::hd_phase)
      .def_readonly("grid_phase", &experience_map::Experience::grid_phase)
      .def_readonly("timestamp", &experience_map::Experience::timestamp)
      .def("__repr__", [](const experience_map::Experience& e) { return repr3("Experience", e); });
  py::class_<experience_map::ExperienceLink>(em, "ExperienceLink")
      .def_readonly("from_id", &experience_map::ExperienceLink::from_id)
      .def_readonly("to_id", &experience_map::ExperienceLink::to_id)
      .def_readonly("d", &experience_map::ExperienceLink::d)
      .def_readonly("heading_rad", &experience_map::ExperienceLink::heading_rad)
      .def_readonly("facing_rad", &experience_map::ExperienceLink::facing_rad)
      .def_readonly("loop_closure", &experience_map::ExperienceLink::loop_closure);
  py::class_<experience_map::OptimizeResult>(em, "OptimizeResult")
      .def_readonly("iterations", &experience_map::OptimizeResult::iterations)
      .def_readonly("initial_cost", &experience_map::OptimizeResult::initial_cost)
      .def_readonly("final_cost", &experience_map::OptimizeResult::final_cost)
      .def_readonly("converged", &experience_map::OptimizeResult::converged);
  py::class_<experience_map::MapGraph>(em, "MapGraph")
      .def(py::init<>())
      .def_readonly("experiences", &experience_map::MapGraph::experiences)
      .def_readonly("links", &experience_map::MapGraph::links)
      .def_readwrite("robust_delta", &experience_map::MapGraph::robust_delta)
      .def_readwrite("angle_scale", &experience_map::MapGraph::angle_scale)
      .def("add_experience",
           [](experience_map::MapGraph& g, const experience_map::PlanarPose& pose, double timestamp,
              std::optional<int> previous) {
             return experience_map::add_experience(g, pose, -1, 0.0, {0.0, 0.0}, timestamp, previous).id;
           },
           py::arg("pose"), py::arg("timestamp") = 0.0, py::arg("previous") = std::nullopt)
      .def("close_loop", &experience_map::close_loop, py::arg("current_id"), py::arg("matched_id"),
           py::arg("relative_facing") = 0.0)
      .def("optimize", &experience_map::optimize, py::arg("max_iterations") = 100)
      .def("total_cost", &experience_map::total_cost);

  // Pipeline
  using namespace nbslam::pipeline;
  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("from_file", [](const std::filesystem::path& p) { return load_config(p); })
      .def_static("from_string", [](const std::string& text) {
        std::istringstream in(text);
        return parse_config(in);
      })
      .def("to_string", [](const RunConfig& c) {
        std::ostringstream out;
        write_config(out, c);
        return out.str();
      })
      .def_readwrite("dataset", &RunConfig::dataset)
      .def_readwrite("output_dir", &RunConfig::output_dir)
      .def_readwrite("seed", &RunConfig::seed)
      .def_readwrite("experience_threshold", &RunConfig::experience_threshold)
      .def_readwrite("attractor", &RunConfig::attractor);

  py::class_<TraceRecord>(m, "TraceRecord")
      .def(py::init<>())
      .def(py::init([](double t, double rot, double trans, int view) { return TraceRecord{t, rot, trans, view}; }),
           py::arg("timestamp"), py::arg("rotational"), py::arg("translational"), py::arg("view") = -1)
      .def_readwrite("timestamp", &TraceRecord::timestamp)
      .def_readwrite("rotational", &TraceRecord::rotational)
      .def_readwrite("translational", &TraceRecord::translational)
      .def_readwrite("view", &TraceRecord::view);

  py::class_<WorldSpec>(m, "WorldSpec")
      .def(py::init<>())
      .def_static("from_string", [](const std::string& text) {
        std::istringstream in(text);
        return parse_world_spec(in);
      })
      .def_readwrite("frames", &WorldSpec::frames)
      .def_readwrite("forward_step", &WorldSpec::forward_step)
      .def_readwrite("yaw_step", &WorldSpec::yaw_step)
      .def_readwrite("plane_depth", &WorldSpec::plane_depth)
      .def_readwrite("shape", &WorldSpec::shape)
      .def_readwrite("side", &WorldSpec::side)
      .def_readwrite("speed", &WorldSpec::speed)
      .def_readwrite("turn_rate", &WorldSpec::turn_rate)
      .def_readwrite("dt", &WorldSpec::dt)
      .def_readwrite("revisit_cue", &WorldSpec::revisit_cue)
      .def_readwrite("view_every", &WorldSpec::view_every)
      .def_property(
          "kind", [](const WorldSpec& s) { return s.kind == WorldSpec::Kind::Photometric ? "photometric" : "trajectory"; },
          [](WorldSpec& s, const std::string& k) {
            if (k == "photometric") s.kind = WorldSpec::Kind::Photometric;
            else if (k == "trajectory") s.kind = WorldSpec::Kind::Trajectory;
            else throw std::invalid_argument("kind must be 'photometric' or 'trajectory'");
          });

  m.def("synthesize_world", &synthesize_world, py::arg("spec"), py::arg("seed"), py::arg("out_dir"));
  m.def("trajectory_trace", [](const WorldSpec& spec) {
    std::vector<experience_map::PlanarPose> poses;
    auto trace = trajectory_trace(spec, &poses);
    return py::make_tuple(trace, poses);
  }, "Velocity trace and ground-truth planar poses of a trajectory spec.");
  m.def("load_velocity_trace", &load_velocity_trace);

  py::class_<PhaseLogEntry>(m, "PhaseLogEntry")
      .def_readonly("cycle", &PhaseLogEntry::cycle)
      .def_readonly("timestamp", &PhaseLogEntry::timestamp)
      .def_readonly("x", &PhaseLogEntry::x)
      .def_readonly("y", &PhaseLogEntry::y)
      .def_readonly("theta", &PhaseLogEntry::theta)
      .def_readonly("hd_phase", &PhaseLogEntry::hd_phase)
      .def_readonly("grid_phase", &PhaseLogEntry::grid_phase)
      .def_readonly("template_id", &PhaseLogEntry::template_id)
      .def_readonly("loop_closed", &PhaseLogEntry::loop_closed)
      .def_readonly("experience_id", &PhaseLogEntry::experience_id);

  py::class_<RunSummary>(m, "RunSummary")
      .def_readonly("frames", &RunSummary::frames)
      .def_readonly("keyframes", &RunSummary::keyframes)
      .def_readonly("lost_frames", &RunSummary::lost_frames)
      .def_readonly("cycles", &RunSummary::cycles)
      .def_readonly("templates", &RunSummary::templates)
      .def_readonly("experiences", &RunSummary::experiences)
      .def_readonly("links", &RunSummary::links)
      .def_readonly("loop_closures", &RunSummary::loop_closures)
      .def_readonly("path_length", &RunSummary::path_length);

  py::class_<TrajectoryStats>(m, "TrajectoryStats")
      .def_readonly("mean", &TrajectoryStats::mean)
      .def_readonly("median", &TrajectoryStats::median)
      .def_readonly("rmse", &TrajectoryStats::rmse)
      .def_readonly("min", &TrajectoryStats::min)
      .def_readonly("max", &TrajectoryStats::max)
      .def_readonly("n", &TrajectoryStats::n);
  py::class_<Evaluation>(m, "Evaluation")
      .def_readonly("anchored", &Evaluation::anchored)
      .def_readonly("fitted", &Evaluation::fitted);

  py::class_<RunOutput>(m, "RunOutput")
      .def_readonly("map", &RunOutput::map)
      .def_readonly("phases", &RunOutput::phases)
      .def_readonly("summary", &RunOutput::summary)
      .def_readonly("evaluation", &RunOutput::evaluation)
      .def("write", [](const RunOutput& out, const std::filesystem::path& dir, const RunConfig& cfg) {
        write_outputs(dir, out, cfg);
      });

  m.def("run", &run, py::arg("config"), py::call_guard<py::gil_scoped_release>(),
        "Stereo run over config.dataset.");
  m.def("run_trace", &run_trace, py::arg("config"), py::arg("trace"), py::call_guard<py::gil_scoped_release>());
  m.def("compute_stats", &compute_stats);

  py::class_<RateMap>(m, "RateMap")
      .def_readonly("origin_x", &RateMap::origin_x)
      .def_readonly("origin_y", &RateMap::origin_y)
      .def_readonly("bin_size", &RateMap::bin_size)
      .def_property_readonly("rate", [](const RateMap& r) {
        py::array_t<double> a({r.ny, r.nx});
        std::copy(r.rate.begin(), r.rate.end(), a.mutable_data());
        return a;
      })
      .def_property_readonly("occupancy", [](const RateMap& r) {
        py::array_t<int> a({r.ny, r.nx});
        std::copy(r.occupancy.begin(), r.occupancy.end(), a.mutable_data());
        return a;
      });
  m.def("firing_rate_map",
        [](const std::vector<PhaseLogEntry>& log, const std::string& unit, double sigma, double bin, int min_occ) {
          return firing_rate_map(log, parse_rate_unit(unit), sigma, bin, min_occ);
        },
        py::arg("phases"), py::arg("unit"), py::arg("tuning_sigma") = 0.5, py::arg("bin_size") = 1.0,
        py::arg("min_occupancy") = 1, "unit is 'hd:<phase>' or 'grid:<px>,<py>'.");
}
