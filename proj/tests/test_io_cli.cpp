#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "qmon/analytics.hpp"
#include "qmon/engine.hpp"
#include "qmon/io.hpp"
#include "qmon/model.hpp"
#include "qmon/presets.hpp"
#include "qmon/qcore.hpp"

using namespace qmon;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
  static fs::path dir = [] {
    fs::path d = fs::current_path() / "io_cli_scratch";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string write_text(const std::string& name, const std::string& content) {
  fs::path p = work_dir() / name;
  std::ofstream out(p);
  out << content;
  REQUIRE(out.good());
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<double>> cols;  // column major
  std::size_t rows() const { return cols.empty() ? 0 : cols[0].size(); }
  const std::vector<double>& col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return cols[i];
    throw std::runtime_error("no column " + name);
  }
};

Csv read_csv(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  Csv out;
  std::string line;
  REQUIRE(static_cast<bool>(std::getline(in, line)));
  std::stringstream hs(line);
  std::string field;
  while (std::getline(hs, field, ',')) out.header.push_back(field);
  out.cols.resize(out.header.size());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::size_t c = 0;
    while (std::getline(ls, field, ',')) {
      REQUIRE(c < out.cols.size());
      out.cols[c++].push_back(std::strtod(field.c_str(), nullptr));
    }
    REQUIRE(c == out.cols.size());
  }
  return out;
}

int run_cli(const std::string& args, std::string* err_text = nullptr,
            std::string* out_text = nullptr) {
  fs::path out_log = work_dir() / "cli_out.log";
  fs::path err_log = work_dir() / "cli_err.log";
  std::string cmd = std::string(QMON_CLI_PATH) + " " + args + " > " +
                    out_log.string() + " 2> " + err_log.string();
  int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  if (err_text) *err_text = slurp(err_log);
  if (out_text) *out_text = slurp(out_log);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -2;
}

MonitoredModel fancy_model() {
  MonitoredModel m;
  m.labels = {"hom", "cnt"};
  m.H = 0.3 * tensor(pauli(3), id2()) + 0.4 * tensor(pauli(1), pauli(1));
  m.L = {std::sqrt(0.5) * tensor(pauli(1), id2()),
         complexd(0.3, 0.1) * tensor(sigma_minus(), id2())};
  m.n_diffusive = 1;
  m.n_counting = 1;
  m.rates = {0.7};
  Eigen::MatrixXcd u1 = Eigen::MatrixXcd::Identity(2, 2);
  Eigen::MatrixXcd u2(2, 2);
  u2 << complexd(0.6, 0.0), complexd(0.0, 0.8), complexd(0.0, 0.8),
      complexd(0.6, 0.0);
  m.u.t = {0.0, 0.4};
  m.u.val = {u1, u2};
  Eigen::VectorXcd v1(2), v2(2);
  v1 << complexd(0.1, 0.2), complexd(-0.3, 0.0);
  v2 << complexd(0.0, 0.0), complexd(0.0, 0.25);
  m.v.t = {0.0, 0.5};
  m.v.val = {v1, v2};
  m.S = {{0.6 * Mat4::Identity(), 0.8 * Mat4::Identity()},
         {-0.8 * Mat4::Identity(), 0.6 * Mat4::Identity()}};
  m.validate();
  return m;
}

}  // namespace

TEST_CASE("model save/load round trip is entrywise exact") {
  MonitoredModel m = fancy_model();
  std::string path = (work_dir() / "model.json").string();
  save_model(m, path);
  MonitoredModel r = load_model(path);
  CHECK(r.labels == m.labels);
  CHECK(r.n_diffusive == m.n_diffusive);
  CHECK(r.n_counting == m.n_counting);
  CHECK(r.rates == m.rates);
  CHECK((r.H - m.H).norm() == 0.0);
  REQUIRE(r.L.size() == m.L.size());
  for (std::size_t i = 0; i < m.L.size(); ++i)
    CHECK((r.L[i] - m.L[i]).norm() == 0.0);
  REQUIRE(r.S.size() == m.S.size());
  for (std::size_t a = 0; a < m.S.size(); ++a)
    for (std::size_t b = 0; b < m.S[a].size(); ++b)
      CHECK((r.S[a][b] - m.S[a][b]).norm() == 0.0);
  CHECK(r.u.t == m.u.t);
  for (std::size_t i = 0; i < m.u.val.size(); ++i)
    CHECK((r.u.val[i] - m.u.val[i]).norm() == 0.0);
  CHECK(r.v.t == m.v.t);
  for (std::size_t i = 0; i < m.v.val.size(); ++i)
    CHECK((r.v.val[i] - m.v.val[i]).norm() == 0.0);
}

TEST_CASE("load_model rejects malformed files") {
  CHECK_THROWS_AS(load_model((work_dir() / "nope.json").string()),
                  std::invalid_argument);
  std::string p1 = write_text("bad1.json", "{ not json");
  CHECK_THROWS_AS(load_model(p1), std::invalid_argument);
  std::string p2 = write_text(
      "bad2.json",
      R"({"labels": [], "n_diffusive": 0, "n_counting": 0, "H": [], "L": [],
          "S": null, "v": null, "u": null})");
  CHECK_THROWS_WITH_AS(load_model(p2), "model file is missing 'rates'",
                       std::invalid_argument);
}

TEST_CASE("load_config parses every section") {
  std::string path = write_text("full_config.json", R"({
    "model": {
      "preset": "local_diffusive",
      "params": {"gamma": 2.0, "phi1": 0.5},
      "initial": "bell2"
    },
    "run": {
      "T": 1.5, "dt": 0.005, "n_traj": 40, "seed": 11,
      "mode": "Q", "scheme": "euler",
      "observables": ["concurrence", "state", "weight", "counts"],
      "threads": 2
    },
    "output": {"dir": "outdir", "prefix": "demo", "traj_dump": true},
    "sweep": {"param": "phi1", "values": [0.0, 0.5, 1.0]}
  })");
  RunConfig cfg = load_config(path);
  CHECK(cfg.preset_id == "local_diffusive");
  CHECK(cfg.preset_params.at("gamma") == 2.0);
  CHECK(cfg.preset_params.at("phi1") == 0.5);
  REQUIRE(std::holds_alternative<Vec4>(cfg.initial));
  CHECK((std::get<Vec4>(cfg.initial) - bell_basis()[2]).norm() < 1e-15);
  CHECK(cfg.T == 1.5);
  CHECK(cfg.dt == 0.005);
  CHECK(cfg.n_traj == 40);
  CHECK(cfg.seed == 11);
  CHECK(cfg.measure == Measure::Q);
  CHECK(cfg.scheme == Scheme::euler);
  REQUIRE(cfg.observables.size() == 4);
  CHECK(cfg.observables[0] == Observable::concurrence);
  CHECK(cfg.observables[3] == Observable::counts);
  CHECK(cfg.n_threads == 2);
  CHECK(cfg.out_dir == "outdir");
  CHECK(cfg.prefix == "demo");
  CHECK(cfg.traj_dump);
  REQUIRE(cfg.sweep.has_value());
  CHECK(cfg.sweep->first == "phi1");
  CHECK(cfg.sweep->second == std::vector<double>{0.0, 0.5, 1.0});

  // explicit vector initial states are normalized on load
  std::string pv = write_text("vec_config.json", R"({
    "model": {"preset": "local_jump",
              "initial": {"vector": [[2,0],[0,0],[0,0],[0,0]]}}
  })");
  RunConfig cv = load_config(pv);
  REQUIRE(std::holds_alternative<Vec4>(cv.initial));
  CHECK(std::abs(std::get<Vec4>(cv.initial).norm() - 1.0) < 1e-15);
  CHECK(std::abs(std::get<Vec4>(cv.initial)(0) - 1.0) < 1e-15);
}

TEST_CASE("load_config rejects rule violations with specific messages") {
  auto expect_throw = [](const std::string& name, const std::string& body,
                         const char* msg = nullptr) {
    std::string p = write_text(name, body);
    if (msg)
      CHECK_THROWS_WITH_AS(load_config(p), msg, std::invalid_argument);
    else
      CHECK_THROWS_AS(load_config(p), std::invalid_argument);
  };
  CHECK_THROWS_AS(load_config((work_dir() / "missing.json").string()),
                  std::invalid_argument);
  expect_throw("c1.json", R"({"model": {"initial": "bell0"}})",
               "[model] needs exactly one of 'preset' or 'file'");
  expect_throw("c2.json",
               R"({"model": {"preset": "x", "file": "y", "initial": "bell0"}})",
               "[model] needs exactly one of 'preset' or 'file'");
  expect_throw("c3.json", R"({"model": {"preset": "local_jump"}})");
  expect_throw("c4.json",
               R"({"model": {"preset": "local_jump", "initial": "bell9"}})",
               "model.initial: unknown state name 'bell9' (bell0..bell3, "
               "mixed, or an explicit vector/matrix)");
  expect_throw("c5.json", R"({"model": {"preset": "p", "initial": "bell0"},
                              "run": {"dt": 0}})",
               "run.dt must be positive");
  expect_throw("c6.json", R"({"model": {"preset": "p", "initial": "bell0"},
                              "run": {"T": -1}})",
               "run.T must be positive");
  expect_throw("c7.json", R"({"model": {"preset": "p", "initial": "bell0"},
                              "run": {"n_traj": 0}})",
               "run.n_traj must be at least 1");
  expect_throw("c8.json", R"({"model": {"preset": "p", "initial": "bell0"},
                              "run": {"mode": "R"}})",
               "run.mode must be \"Q\" or \"P\"");
  expect_throw("c9.json", R"({"model": {"preset": "p", "initial": "bell0"},
                              "run": {"scheme": "rk4"}})",
               "run.scheme must be \"exponential\" or \"euler\"");
  expect_throw("c10.json", R"({"model": {"preset": "p", "initial": "bell0"},
                               "run": {"observables": []}})",
               "run.observables must be a nonempty array");
  expect_throw("c11.json", R"({"model": {"preset": "p", "initial": "bell0"},
                               "run": {"observables": ["purity"]}})");
  expect_throw("c12.json", R"({"model": {"preset": "p", "initial": "bell0"},
                               "bogus": {}})",
               "unknown key 'bogus' in the config");
  expect_throw("c13.json", R"({"model": {"file": "m.json", "params": {},
                               "initial": "bell0"}})",
               "model.params applies to presets only");
  expect_throw("c14.json", R"({"model": {"preset": "p", "initial": "bell0"},
                               "sweep": {"param": "g"}})",
               "sweep.values must be a nonempty array");
  expect_throw("c15.json",
               R"({"model": {"preset": "p",
                             "initial": {"vector": [[0,0],[0,0],[0,0],[0,0]]}}})",
               "model.initial.vector must be nonzero");
  expect_throw("c16.json",
               R"({"model": {"preset": "p",
                             "initial": {"matrix": [
      [1,0],[0,0],[0,0],[0,0], [0,0],[1,0],[0,0],[0,0],
      [0,0],[0,0],[0,0],[0,0], [0,0],[0,0],[0,0],[0,0]]}}})");
  expect_throw("c17.json", R"({"model": {"preset": "p", "initial": "bell0"},
                               "run": {"seed": -3}})",
               "run.seed must be a nonnegative integer");
}

TEST_CASE("validate_rates enforces the thinning bound") {
  SimModel sm = make_preset("swap_witness", {{"nu", 1.0}, {"lambda", 2.0}})
                    .compile();
  CHECK_NOTHROW(validate_rates(sm, 0.05));
  CHECK_THROWS_WITH_AS(
      validate_rates(sm, 0.3),
      "run.dt too large for the counting rates: need lambda_k * dt < 0.1",
      std::invalid_argument);
}

TEST_CASE("write_csv: layout, 17-digit round trip, shape errors") {
  fs::path p = work_dir() / "plain.csv";
  double third = 1.0 / 3.0;
  write_csv(p.string(), {"t", "x"}, {{0.0, 0.5}, {third, 1e-17}});
  Csv csv = read_csv(p);
  REQUIRE(csv.header == std::vector<std::string>{"t", "x"});
  REQUIRE(csv.rows() == 2);
  CHECK(csv.cols[0][1] == 0.5);
  CHECK(csv.cols[1][0] == third);  // full precision survives the text format
  CHECK(csv.cols[1][1] == 1e-17);

  CHECK_THROWS_AS(write_csv(p.string(), {"t"}, {{1.0}, {2.0}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(write_csv(p.string(), {"t", "x"}, {{1.0}, {2.0, 3.0}}),
                  std::invalid_argument);
}

TEST_CASE("estimate CSV schemas per observable") {
  EnsembleEstimate est;
  est.times = {0.0, 0.1};
  est.kind = Observable::concurrence;
  est.mean = {1.0, 0.9};
  est.se = {0.0, 0.01};
  fs::path pc = work_dir() / "est_conc.csv";
  write_estimate_csv(pc.string(), est);
  CHECK(read_csv(pc).header ==
        std::vector<std::string>{"t", "mean", "std_error"});

  EnsembleEstimate ests;
  ests.times = {0.0};
  ests.kind = Observable::state;
  ests.state_mean = {Mat4(0.25 * Mat4::Identity())};
  ests.state_se = {0.0};
  fs::path ps = work_dir() / "est_state.csv";
  write_estimate_csv(ps.string(), ests);
  Csv cs = read_csv(ps);
  REQUIRE(cs.header.size() == 34);
  CHECK(cs.header[0] == "t");
  CHECK(cs.header[1] == "re_11");
  CHECK(cs.header[2] == "im_11");
  CHECK(cs.header.back() == "std_error");
  CHECK(cs.col("re_11")[0] == 0.25);
  CHECK(cs.col("re_12")[0] == 0.0);

  EnsembleEstimate estc;
  estc.times = {0.0, 0.1};
  estc.kind = Observable::counts;
  estc.count_mean = {{0.0, 0.2}, {0.0, 0.1}};
  estc.count_se = {{0.0, 0.02}, {0.0, 0.01}};
  fs::path pk = work_dir() / "est_counts.csv";
  write_estimate_csv(pk.string(), estc);
  CHECK(read_csv(pk).header ==
        std::vector<std::string>{"t", "mean_1", "std_error_1", "mean_2",
                                 "std_error_2"});
}

TEST_CASE("trajectory CSV: weight, pure components, cumulative counts") {
  SimModel sm = make_preset("local_jump", {{"gamma", 1.0}}).compile();
  auto rec = simulate_physical(sm, bell_basis()[0], 1.0, 0.01, 5);
  fs::path p = work_dir() / "traj.csv";
  write_trajectory_csv(p.string(), rec, 2);
  Csv csv = read_csv(p);
  CHECK(csv.header.front() == "t");
  CHECK(csv.header[1] == "weight");
  CHECK(csv.header[2] == "re_c1");
  CHECK(csv.header.back() == "count_2");
  REQUIRE(csv.rows() == rec.times.size());
  const auto& c1 = csv.col("count_1");
  const auto& c2 = csv.col("count_2");
  for (std::size_t i = 1; i < csv.rows(); ++i) {
    CHECK(c1[i] >= c1[i - 1]);
    CHECK(c2[i] >= c2[i - 1]);
  }
  CHECK(c1.back() + c2.back() == doctest::Approx(rec.counts.size()));
}

TEST_CASE("cli: simulate is deterministic and honors --seed/--out") {
  std::string cfg = write_text("sim_config.json", R"({
    "model": {"preset": "local_diffusive", "initial": "bell0"},
    "run": {"T": 0.5, "dt": 0.01, "n_traj": 20, "seed": 7, "mode": "P",
            "observables": ["concurrence", "state"]},
    "output": {"prefix": "run"}
  })");
  fs::path d1 = work_dir() / "sim1";
  fs::path d2 = work_dir() / "sim2";
  fs::path d3 = work_dir() / "sim3";
  CHECK(run_cli("simulate --config " + cfg + " --out " + d1.string()) == 0);
  CHECK(run_cli("simulate --config " + cfg + " --out " + d2.string()) == 0);
  CHECK(run_cli("simulate --config " + cfg + " --out " + d3.string() +
                " --seed 9") == 0);
  std::string a = slurp(d1 / "run_concurrence.csv");
  CHECK(a == slurp(d2 / "run_concurrence.csv"));
  CHECK(slurp(d1 / "run_state.csv") == slurp(d2 / "run_state.csv"));
  CHECK(a != slurp(d3 / "run_concurrence.csv"));
  Csv conc = read_csv(d1 / "run_concurrence.csv");
  REQUIRE(conc.rows() == time_grid(0.5, 0.01).size());
  CHECK(conc.col("mean")[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cli: jump readout keeps every path at the initial concurrence") {
  std::string cfg = write_text("jump_config.json", R"({
    "model": {"preset": "local_jump", "initial": "bell1"},
    "run": {"T": 1.0, "dt": 0.01, "n_traj": 5, "mode": "Q",
            "observables": ["concurrence", "weight"]}
  })");
  fs::path d = work_dir() / "jump_out";
  CHECK(run_cli("simulate --config " + cfg + " --out " + d.string() +
                " --traj-dump") == 0);
  Csv conc = read_csv(d / "run_concurrence.csv");
  Csv wt = read_csv(d / "run_weight.csv");
  for (std::size_t i = 0; i < conc.rows(); ++i) {
    CHECK(std::abs(conc.col("mean")[i] - 1.0) < 1e-9);
    CHECK(std::abs(wt.col("mean")[i] - 1.0) < 1e-9);
  }
  for (int i = 0; i < 5; ++i)
    CHECK(fs::exists(d / ("run_traj_" + std::to_string(i) + ".csv")));
  Csv t0 = read_csv(d / "run_traj_0.csv");
  CHECK(t0.header[2] == "re_c1");
  CHECK(t0.rows() == time_grid(1.0, 0.01).size());
}

TEST_CASE("cli: master reports the swap disentanglement time") {
  std::string cfg = write_text("master_config.json", R"({
    "model": {"preset": "swap_witness", "initial": "bell1"},
    "run": {"T": 3.0, "dt": 0.001}
  })");
  fs::path d = work_dir() / "master_out";
  std::string out;
  CHECK(run_cli("master --config " + cfg + " --out " + d.string(), nullptr,
                &out) == 0);
  REQUIRE(out.find("ESD time:") != std::string::npos);
  double esd = std::strtod(out.c_str() + out.find(":") + 1, nullptr);
  CHECK(std::abs(esd - std::log(3.0)) < 1e-6);
  Csv esd_csv = read_csv(d / "run_esd.csv");
  CHECK(std::abs(esd_csv.col("esd_time")[0] - std::log(3.0)) < 1e-6);
  Csv master = read_csv(d / "run_master.csv");
  REQUIRE(master.rows() == time_grid(3.0, 0.001).size());
  CHECK(master.col("concurrence")[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(master.col("re_11")[0] == doctest::Approx(0.0).epsilon(1e-12));

  // short window: no death to report
  std::string cfg2 = write_text("master_short.json", R"({
    "model": {"preset": "swap_witness", "initial": "bell1"},
    "run": {"T": 0.5, "dt": 0.001}
  })");
  CHECK(run_cli("master --config " + cfg2 + " --out " + d.string(), nullptr,
                &out) == 0);
  CHECK(out.find("no ESD on [0, 0.5]") != std::string::npos);
}

TEST_CASE("cli: oracle writes the bound benchmark curves") {
  std::string cfg = write_text("oracle_local.json", R"({
    "model": {"preset": "local_diffusive", "initial": "bell0"},
    "run": {"T": 1.0, "dt": 0.1}
  })");
  fs::path d = work_dir() / "oracle_out";
  CHECK(run_cli("oracle --config " + cfg + " --out " + d.string()) == 0);
  Csv c = read_csv(d / "run_oracle.csv");
  REQUIRE(c.header ==
          std::vector<std::string>{"t", "mean_concurrence_local"});
  for (std::size_t i = 0; i < c.rows(); ++i)
    CHECK(c.col("mean_concurrence_local")[i] ==
          doctest::Approx(std::exp(-2.0 * c.cols[0][i])).epsilon(1e-12));

  std::string cfg2 = write_text("oracle_swap.json", R"({
    "model": {"preset": "swap_witness", "initial": "mixed"},
    "run": {"T": 2.0, "dt": 0.5}
  })");
  CHECK(run_cli("oracle --config " + cfg2 + " --out " + d.string()) == 0);
  Csv cs = read_csv(d / "run_oracle.csv");
  REQUIRE(cs.header ==
          std::vector<std::string>{"t", "swap_mean_concurrence",
                                   "swap_apriori_concurrence"});
  CHECK(cs.col("swap_mean_concurrence").back() ==
        doctest::Approx(1.0 - std::exp(-2.0)).epsilon(1e-12));
  for (std::size_t i = 0; i < cs.rows(); ++i)
    CHECK(cs.col("swap_apriori_concurrence")[i] == 0.0);

  // a preset losing its oracle binding is a config error with guidance
  std::string cfg3 = write_text("oracle_none.json", R"({
    "model": {"preset": "nonlocal_diffusive", "params": {"omega0": 0.5},
              "initial": "bell0"}
  })");
  std::string err;
  CHECK(run_cli("oracle --config " + cfg3 + " --out " + d.string(), &err) == 1);
  CHECK(err.find("no bound oracle curves") != std::string::npos);

  // the chi oracle needs a pure state
  std::string cfg4 = write_text("oracle_chi_mixed.json", R"({
    "model": {"preset": "nonlocal_diffusive", "initial": "mixed"}
  })");
  CHECK(run_cli("oracle --config " + cfg4 + " --out " + d.string(), &err) == 1);
  CHECK(err.find("pure initial state") != std::string::npos);
}

TEST_CASE("cli: sweep emits per-value runs plus an index file") {
  std::string cfg = write_text("sweep_config.json", R"({
    "model": {"preset": "local_diffusive", "initial": "bell0"},
    "run": {"T": 0.5, "dt": 0.01, "n_traj": 2, "mode": "Q"},
    "sweep": {"param": "phi1",
              "values": [0.0, 0.7853981633974483, 1.5707963267948966]}
  })");
  fs::path d = work_dir() / "sweep_out";
  CHECK(run_cli("sweep --config " + cfg + " --out " + d.string()) == 0);
  Csv idx = read_csv(d / "run_sweep_index.csv");
  REQUIRE(idx.header == std::vector<std::string>{"index", "phi1"});
  REQUIRE(idx.rows() == 3);
  CHECK(idx.cols[0][2] == 2.0);
  CHECK(idx.cols[1][1] == doctest::Approx(M_PI / 4.0).epsilon(1e-15));
  // reference-measure runs of this model are noise-free in concurrence:
  // slower dephasing of output 1 leaves more entanglement at T
  double last[3];
  for (int i = 0; i < 3; ++i) {
    Csv c = read_csv(d / ("run_s" + std::to_string(i) + "_concurrence.csv"));
    REQUIRE(c.rows() == time_grid(0.5, 0.01).size());
    last[i] = c.col("mean").back();
    double rate = std::cos(idx.cols[1][i]) * std::cos(idx.cols[1][i]) + 1.0;
    CHECK(last[i] == doctest::Approx(std::exp(-rate * 0.5)).epsilon(1e-9));
  }
  CHECK(last[0] < last[1]);
  CHECK(last[1] < last[2]);

  std::string cfg2 = write_text("sweep_bad.json", R"({
    "model": {"preset": "local_diffusive", "initial": "bell0"},
    "sweep": {"param": "nu", "values": [1.0]}
  })");
  std::string err;
  CHECK(run_cli("sweep --config " + cfg2, &err) == 1);
  CHECK(err.find("not a parameter") != std::string::npos);

  std::string cfg3 = write_text("sweep_missing.json", R"({
    "model": {"preset": "local_diffusive", "initial": "bell0"}
  })");
  CHECK(run_cli("sweep --config " + cfg3, &err) == 1);
  CHECK(err.find("[sweep] section") != std::string::npos);
}

TEST_CASE("cli: model files drive simulate end to end") {
  MonitoredModel m;  // plain homodyne sigma_x readout on qubit 1
  m.labels = {"hom"};
  m.L = {std::sqrt(0.5) * tensor(pauli(1), id2())};
  m.n_diffusive = 1;
  m.validate();
  std::string mpath = (work_dir() / "sim_model.json").string();
  save_model(m, mpath);
  std::string cfg = write_text("file_config.json", std::string(R"({
    "model": {"file": ")") + mpath + R"(", "initial": "bell0"},
    "run": {"T": 0.5, "dt": 0.01, "n_traj": 2, "mode": "Q"}
  })");
  fs::path d = work_dir() / "file_out";
  CHECK(run_cli("simulate --config " + cfg + " --out " + d.string()) == 0);
  CHECK(fs::exists(d / "run_concurrence.csv"));
}

TEST_CASE("cli: exit codes separate config errors from numerical failures") {
  // 1: unreadable config
  std::string err;
  CHECK(run_cli("simulate --config " +
                    (work_dir() / "no_such.json").string(),
                &err) == 1);
  CHECK(err.find("config error:") != std::string::npos);

  // 1: rates incompatible with dt
  std::string cfg1 = write_text("rate_clash.json", R"({
    "model": {"preset": "swap_witness", "params": {"lambda": 100.0},
              "initial": "bell1"},
    "run": {"T": 0.1, "dt": 0.01, "n_traj": 1}
  })");
  CHECK(run_cli("simulate --config " + cfg1, &err) == 1);
  CHECK(err.find("lambda_k * dt < 0.1") != std::string::npos);

  // 2: every reference-measure weight underflows
  MonitoredModel m;
  m.labels = {"c1", "c2"};
  double s = std::sqrt(0.5);
  m.L = {s * tensor(pauli(1), id2()), s * tensor(id2(), pauli(1))};
  m.n_counting = 2;
  m.rates = {0.1, 0.1};
  m.validate();
  std::string mpath = (work_dir() / "underflow_model.json").string();
  save_model(m, mpath);
  std::string cfg2 = write_text("underflow.json", std::string(R"({
    "model": {"file": ")") + mpath + R"(", "initial": "bell0"},
    "run": {"T": 2000.0, "dt": 0.5, "n_traj": 1, "mode": "Q"}
  })");
  fs::path d = work_dir() / "uf_out";
  CHECK(run_cli("simulate --config " + cfg2 + " --out " + d.string(), &err) ==
        2);
  CHECK(err.find("underflowed") != std::string::npos);
  CHECK(err.find("measure=P") != std::string::npos);

  // CLI misuse is rejected by the parser
  CHECK(run_cli("") != 0);
  CHECK(run_cli("simulate") != 0);
}
