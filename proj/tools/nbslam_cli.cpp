#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "nbslam/experience_map.hpp"
#include "nbslam/pipeline.hpp"

namespace fs = std::filesystem;
using namespace nbslam;

namespace {

int cmd_run(const std::string& config_path, const std::string& dataset, const std::string& out_dir,
            std::optional<std::uint64_t> seed, const std::string& trace_path) {
  pipeline::RunConfig cfg;
  if (!config_path.empty()) cfg = pipeline::load_config(config_path);
  if (!dataset.empty()) cfg.dataset = dataset;
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (seed) cfg.seed = *seed;
  if (cfg.output_dir.empty()) throw std::runtime_error("run: no output directory");

  pipeline::RunOutput out;
  if (!trace_path.empty()) {
    out = pipeline::run_trace(cfg, pipeline::load_velocity_trace(trace_path));
  } else {
    if (cfg.dataset.empty()) throw std::runtime_error("run: no dataset and no velocity trace");
    out = pipeline::run(cfg);
  }
  pipeline::write_outputs(cfg.output_dir, out, cfg);

  const pipeline::RunSummary& s = out.summary;
  std::cout << "frames " << s.frames << ", keyframes " << s.keyframes << ", cycles " << s.cycles << ", templates "
            << s.templates << ", experiences " << s.experiences << ", loop closures " << s.loop_closures << '\n';
  if (out.evaluation) pipeline::write_stats_json(std::cout, *out.evaluation);
  std::cout << "outputs in " << cfg.output_dir.string() << '\n';
  return 0;
}

int cmd_evaluate(const std::string& map_path, const std::string& gt_path, std::string times_path,
                 const std::string& out_path) {
  std::ifstream in(map_path);
  if (!in) throw std::runtime_error("cannot open map: " + map_path);
  const auto experiences = experience_map::read_experiences_csv(in);
  if (times_path.empty()) times_path = (fs::path(gt_path).parent_path() / "times.txt").string();
  const auto eval =
      pipeline::evaluate(experiences, pipeline::load_ground_truth(gt_path), pipeline::load_timestamps(times_path));
  pipeline::write_stats_json(std::cout, eval);
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw std::runtime_error("cannot write " + out_path);
    pipeline::write_stats_json(f, eval);
  }
  return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, std::uint64_t seed) {
  std::ifstream in(spec_path);
  if (!in) throw std::runtime_error("cannot open spec: " + spec_path);
  pipeline::synthesize_world(pipeline::parse_world_spec(in), seed, out_dir);
  std::cout << "world written to " << out_dir << '\n';
  return 0;
}

int cmd_ratemap(const std::string& log_path, const std::string& unit_text, const std::string& out_path, double sigma,
                double bin, int min_occupancy) {
  std::ifstream in(log_path);
  if (!in) throw std::runtime_error("cannot open phase log: " + log_path);
  const auto log = pipeline::read_phase_log(in);
  const auto map = pipeline::firing_rate_map(log, pipeline::parse_rate_unit(unit_text), sigma, bin, min_occupancy);
  pipeline::write_rate_pgm(out_path, map);
  const fs::path csv = fs::path(out_path).replace_extension(".csv");
  std::ofstream f(csv);
  if (!f) throw std::runtime_error("cannot write " + csv.string());
  pipeline::write_rate_csv(f, map);
  std::cout << map.nx << " x " << map.ny << " bins, written to " << out_path << " and " << csv.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural SLAM: stereo odometry, attractor networks and experience maps"};
  app.require_subcommand(1);

  std::string config, dataset, out, trace;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "Build a map from a stereo sequence or a velocity trace");
  run->add_option("--config", config, "Flat key = value configuration")->check(CLI::ExistingFile);
  run->add_option("--dataset", dataset, "Directory with image_0/, image_1/ and times.txt");
  run->add_option("--out", out, "Output directory");
  run->add_option("--seed", seed, "Random seed");
  run->add_option("--velocity-trace", trace, "CSV of timestamp,rotational,translational,view")
      ->check(CLI::ExistingFile);

  std::string map_path, gt_path, times_path, stats_out;
  auto* evaluate = app.add_subcommand("evaluate", "Compare a map against ground-truth poses");
  evaluate->add_option("--map", map_path, "experiences.csv")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--gt", gt_path, "Ground-truth poses, 12 values per line")->required()->check(
      CLI::ExistingFile);
  evaluate->add_option("--times", times_path, "Ground-truth timestamps (default: times.txt beside --gt)");
  evaluate->add_option("--out", stats_out, "Write the statistics JSON here too");

  std::string spec, synth_out;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic world");
  synth->add_option("--spec", spec, "World specification")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Random seed");

  std::string phase_log, unit, rate_out;
  double sigma = 0.5, bin = 1.0;
  int min_occupancy = 1;
  auto* ratemap = app.add_subcommand("ratemap", "Firing-rate map of one unit from a phase log");
  ratemap->add_option("--phase-log", phase_log, "phases.csv from a run")->required()->check(CLI::ExistingFile);
  ratemap->add_option("--unit", unit, "hd:<phase> or grid:<px>,<py>")->required();
  ratemap->add_option("--out", rate_out, "Output PGM; the CSV goes beside it")->required();
  ratemap->add_option("--sigma", sigma, "Tuning width in radians")->capture_default_str();
  ratemap->add_option("--bin", bin, "Bin size in meters")->capture_default_str();
  ratemap->add_option("--min-occupancy", min_occupancy, "Visits for a bin to count")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config, dataset, out, seed, trace);
    if (*evaluate) return cmd_evaluate(map_path, gt_path, times_path, stats_out);
    if (*synth) return cmd_synth(spec, synth_out, synth_seed);
    if (*ratemap) return cmd_ratemap(phase_log, unit, rate_out, sigma, bin, min_occupancy);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
