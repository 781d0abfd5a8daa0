#pragma once

// File plumbing for the command-line tool: JSON run configuration with
// [model] / [run] / [output] sections, model files with an exact (entrywise
// identical) save/load round trip, and CSV emission with a header row and
// 17-significant-digit values, time first.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qmon/engine.hpp"
#include "qmon/model.hpp"

namespace qmon {

struct RunConfig {
  // Exactly one of preset_id / model_file is set.
  std::string preset_id;
  std::map<std::string, double> preset_params;
  std::string model_file;
  InitialState initial = InitialState{Vec4(Vec4::Zero())};
  double T = 2.0;
  double dt = 1e-3;
  int n_traj = 1;
  std::uint64_t seed = 1;
  Measure measure = Measure::P;
  Scheme scheme = Scheme::exponential;
  std::vector<Observable> observables = {Observable::concurrence};
  int n_threads = 0;
  std::string out_dir = ".";
  std::string prefix = "run";
  bool traj_dump = false;
  // Optional sweep axis: preset parameter name and its values.
  std::optional<std::pair<std::string, std::vector<double>>> sweep;
};

// Parses the config file and checks every RunConfig rule it can without the
// compiled model; throws std::invalid_argument with a specific message per
// violated rule. Initial states: "bell0".."bell3", "mixed", {"vector": 4
// [re, im] pairs, normalized on load} or {"matrix": 16 row-major [re, im]
// pairs, validated as a density operator}.
RunConfig load_config(const std::string& path);

// The one rule that needs the compiled model: every reference rate must
// satisfy lambda_k * dt < 0.1.
void validate_rates(const SimModel& m, double dt);

// Exact round trip: load_model(save_model(m)) is entrywise identical.
void save_model(const MonitoredModel& m, const std::string& path);
MonitoredModel load_model(const std::string& path);

const char* to_string(Observable o);
const char* to_string(Measure m);
const char* to_string(Scheme s);
Observable observable_from_string(const std::string& s);

// Column-major CSV writer; every column must have the same length.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& columns);

// Schemas: concurrence/weight -> t, mean, std_error; state -> t, re/im of the
// 16 entries (row-major), std_error; counts -> t, mean_k, std_error_k.
void write_estimate_csv(const std::string& path, const EnsembleEstimate& est);

// t, concurrence, re/im of the 16 entries of eta(t).
void write_master_csv(const std::string& path,
                      const std::vector<double>& times,
                      const std::vector<Mat4>& etas);

// t, weight, state components (re/im interleaved; 4 for pure records, 16
// row-major for density records), cumulative counts per channel.
void write_trajectory_csv(const std::string& path,
                          const TrajectoryRecord& rec, int n_counting);

}  // namespace qmon
