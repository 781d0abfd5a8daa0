#include "qmon/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "qmon/entanglement.hpp"

namespace qmon {

using json = nlohmann::json;

namespace {

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("cannot parse '" + path + "': " + e.what());
  }
  return j;
}

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (known.find(key) == known.end())
      throw std::invalid_argument("unknown key '" + key + "' in " + where);
}

json complex_to_json(const complexd& z) {
  return json::array({z.real(), z.imag()});
}

complexd complex_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() ||
      !j[1].is_number())
    throw std::invalid_argument(where +
                                " must be a two-element [re, im] number pair");
  return complexd(j[0].get<double>(), j[1].get<double>());
}

json matrix_to_json(const Eigen::MatrixXcd& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      out.push_back(complex_to_json(m(r, c)));
  return out;
}

Eigen::MatrixXcd matrix_from_json(const json& j, Eigen::Index rows,
                                  Eigen::Index cols,
                                  const std::string& where) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows * cols)
    throw std::invalid_argument(where + " must be a row-major list of " +
                                std::to_string(rows * cols) +
                                " [re, im] pairs");
  Eigen::MatrixXcd m(rows, cols);
  Eigen::Index idx = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c, ++idx)
      m(r, c) = complex_from_json(j[idx], where + " entry " +
                                              std::to_string(idx));
  return m;
}

json vector_to_json(const Eigen::VectorXcd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    out.push_back(complex_to_json(v(i)));
  return out;
}

Eigen::VectorXcd vector_from_json(const json& j, Eigen::Index n,
                                  const std::string& where) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n)
    throw std::invalid_argument(where + " must be a list of " +
                                std::to_string(n) + " [re, im] pairs");
  Eigen::VectorXcd v(n);
  for (Eigen::Index i = 0; i < n; ++i)
    v(i) = complex_from_json(j[i], where + " entry " + std::to_string(i));
  return v;
}

InitialState parse_initial(const json& j) {
  if (j.is_string()) {
    std::string name = j.get<std::string>();
    if (name.rfind("bell", 0) == 0 && name.size() == 5 && name[4] >= '0' &&
        name[4] <= '3')
      return InitialState{Vec4(bell_basis()[name[4] - '0'])};
    if (name == "mixed")
      return InitialState{Mat4(0.25 * Mat4::Identity())};
    throw std::invalid_argument(
        "model.initial: unknown state name '" + name +
        "' (bell0..bell3, mixed, or an explicit vector/matrix)");
  }
  if (j.is_object()) {
    reject_unknown_keys(j, {"vector", "matrix"}, "model.initial");
    if (j.contains("vector") == j.contains("matrix"))
      throw std::invalid_argument(
          "model.initial needs exactly one of 'vector' or 'matrix'");
    if (j.contains("vector")) {
      Eigen::VectorXcd v =
          vector_from_json(j["vector"], 4, "model.initial.vector");
      double nrm = v.norm();
      if (!(nrm > 0.0))
        throw std::invalid_argument("model.initial.vector must be nonzero");
      return InitialState{Vec4(v / nrm)};
    }
    Mat4 m = matrix_from_json(j["matrix"], 4, 4, "model.initial.matrix");
    try {
      validate_density(m, true);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(std::string("model.initial.matrix: ") +
                                  e.what());
    }
    return InitialState{m};
  }
  throw std::invalid_argument(
      "model.initial must be a state name or a {vector|matrix} object");
}

double get_number(const json& j, const char* key, double fallback,
                  const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number())
    throw std::invalid_argument(where + "." + key + " must be a number");
  return j[key].get<double>();
}

}  // namespace

const char* to_string(Observable o) {
  switch (o) {
    case Observable::state: return "state";
    case Observable::concurrence: return "concurrence";
    case Observable::weight: return "weight";
    case Observable::counts: return "counts";
  }
  return "?";
}

const char* to_string(Measure m) {
  return m == Measure::Q ? "Q" : "P";
}

const char* to_string(Scheme s) {
  return s == Scheme::exponential ? "exponential" : "euler";
}

Observable observable_from_string(const std::string& s) {
  if (s == "state") return Observable::state;
  if (s == "concurrence") return Observable::concurrence;
  if (s == "weight") return Observable::weight;
  if (s == "counts") return Observable::counts;
  throw std::invalid_argument("unknown observable '" + s +
                              "' (state | concurrence | weight | counts)");
}

RunConfig load_config(const std::string& path) {
  json j = load_json(path);
  if (!j.is_object())
    throw std::invalid_argument("config root must be an object");
  reject_unknown_keys(j, {"model", "run", "output", "sweep"}, "the config");
  if (!j.contains("model"))
    throw std::invalid_argument("config is missing the [model] section");

  RunConfig cfg;
  const json& jm = j["model"];
  if (!jm.is_object())
    throw std::invalid_argument("[model] must be an object");
  reject_unknown_keys(jm, {"preset", "params", "file", "initial"}, "[model]");
  bool has_preset = jm.contains("preset");
  bool has_file = jm.contains("file");
  if (has_preset == has_file)
    throw std::invalid_argument(
        "[model] needs exactly one of 'preset' or 'file'");
  if (has_preset) {
    if (!jm["preset"].is_string())
      throw std::invalid_argument("model.preset must be a string");
    cfg.preset_id = jm["preset"].get<std::string>();
    if (jm.contains("params")) {
      if (!jm["params"].is_object())
        throw std::invalid_argument("model.params must be an object");
      for (const auto& [key, value] : jm["params"].items()) {
        if (!value.is_number())
          throw std::invalid_argument("model.params." + key +
                                      " must be a number");
        cfg.preset_params[key] = value.get<double>();
      }
    }
  } else {
    if (!jm["file"].is_string())
      throw std::invalid_argument("model.file must be a string");
    cfg.model_file = jm["file"].get<std::string>();
    if (jm.contains("params"))
      throw std::invalid_argument("model.params applies to presets only");
  }
  if (!jm.contains("initial"))
    throw std::invalid_argument(
        "model.initial is required (bell0..bell3, mixed, {vector: ...} or "
        "{matrix: ...})");
  cfg.initial = parse_initial(jm["initial"]);

  if (j.contains("run")) {
    const json& jr = j["run"];
    if (!jr.is_object())
      throw std::invalid_argument("[run] must be an object");
    reject_unknown_keys(jr,
                        {"T", "dt", "n_traj", "seed", "mode", "scheme",
                         "observables", "threads"},
                        "[run]");
    cfg.T = get_number(jr, "T", cfg.T, "run");
    cfg.dt = get_number(jr, "dt", cfg.dt, "run");
    double nt = get_number(jr, "n_traj", cfg.n_traj, "run");
    if (nt != std::floor(nt))
      throw std::invalid_argument("run.n_traj must be an integer");
    cfg.n_traj = static_cast<int>(nt);
    double sd = get_number(jr, "seed", static_cast<double>(cfg.seed), "run");
    if (sd < 0 || sd != std::floor(sd))
      throw std::invalid_argument("run.seed must be a nonnegative integer");
    cfg.seed = static_cast<std::uint64_t>(sd);
    if (jr.contains("mode")) {
      std::string m = jr["mode"].is_string() ? jr["mode"].get<std::string>()
                                             : std::string();
      if (m == "Q")
        cfg.measure = Measure::Q;
      else if (m == "P")
        cfg.measure = Measure::P;
      else
        throw std::invalid_argument("run.mode must be \"Q\" or \"P\"");
    }
    if (jr.contains("scheme")) {
      std::string s = jr["scheme"].is_string()
                          ? jr["scheme"].get<std::string>()
                          : std::string();
      if (s == "exponential")
        cfg.scheme = Scheme::exponential;
      else if (s == "euler")
        cfg.scheme = Scheme::euler;
      else
        throw std::invalid_argument(
            "run.scheme must be \"exponential\" or \"euler\"");
    }
    if (jr.contains("observables")) {
      if (!jr["observables"].is_array() || jr["observables"].empty())
        throw std::invalid_argument(
            "run.observables must be a nonempty array");
      cfg.observables.clear();
      for (const auto& o : jr["observables"]) {
        if (!o.is_string())
          throw std::invalid_argument("run.observables entries must be strings");
        cfg.observables.push_back(observable_from_string(o.get<std::string>()));
      }
    }
    double th = get_number(jr, "threads", cfg.n_threads, "run");
    if (th < 0 || th != std::floor(th))
      throw std::invalid_argument("run.threads must be a nonnegative integer");
    cfg.n_threads = static_cast<int>(th);
  }

  if (j.contains("output")) {
    const json& jo = j["output"];
    if (!jo.is_object())
      throw std::invalid_argument("[output] must be an object");
    reject_unknown_keys(jo, {"dir", "prefix", "traj_dump"}, "[output]");
    if (jo.contains("dir")) {
      if (!jo["dir"].is_string())
        throw std::invalid_argument("output.dir must be a string");
      cfg.out_dir = jo["dir"].get<std::string>();
    }
    if (jo.contains("prefix")) {
      if (!jo["prefix"].is_string())
        throw std::invalid_argument("output.prefix must be a string");
      cfg.prefix = jo["prefix"].get<std::string>();
    }
    if (jo.contains("traj_dump")) {
      if (!jo["traj_dump"].is_boolean())
        throw std::invalid_argument("output.traj_dump must be a boolean");
      cfg.traj_dump = jo["traj_dump"].get<bool>();
    }
  }

  if (j.contains("sweep")) {
    const json& js = j["sweep"];
    if (!js.is_object())
      throw std::invalid_argument("[sweep] must be an object");
    reject_unknown_keys(js, {"param", "values"}, "[sweep]");
    if (!js.contains("param") || !js["param"].is_string() ||
        js["param"].get<std::string>().empty())
      throw std::invalid_argument("sweep.param must be a nonempty string");
    if (!js.contains("values") || !js["values"].is_array() ||
        js["values"].empty())
      throw std::invalid_argument("sweep.values must be a nonempty array");
    std::vector<double> values;
    for (const auto& v : js["values"]) {
      if (!v.is_number())
        throw std::invalid_argument("sweep.values entries must be numbers");
      values.push_back(v.get<double>());
    }
    cfg.sweep = {js["param"].get<std::string>(), std::move(values)};
  }

  if (!(cfg.T > 0.0)) throw std::invalid_argument("run.T must be positive");
  if (!(cfg.dt > 0.0)) throw std::invalid_argument("run.dt must be positive");
  if (cfg.n_traj < 1)
    throw std::invalid_argument("run.n_traj must be at least 1");
  return cfg;
}

void validate_rates(const SimModel& m, double dt) {
  if (m.max_rate() * dt >= 0.1)
    throw std::invalid_argument(
        "run.dt too large for the counting rates: need lambda_k * dt < 0.1");
}

void save_model(const MonitoredModel& m, const std::string& path) {
  m.validate();
  json j;
  j["labels"] = m.labels;
  j["n_diffusive"] = m.n_diffusive;
  j["n_counting"] = m.n_counting;
  j["rates"] = m.rates;
  j["H"] = matrix_to_json(m.H);
  json jl = json::array();
  for (const Mat4& l : m.L) jl.push_back(matrix_to_json(l));
  j["L"] = jl;
  if (m.S.empty()) {
    j["S"] = nullptr;
  } else {
    json js = json::array();
    for (const auto& row : m.S) {
      json jr = json::array();
      for (const Mat4& blk : row) jr.push_back(matrix_to_json(blk));
      js.push_back(jr);
    }
    j["S"] = js;
  }
  if (m.v.empty()) {
    j["v"] = nullptr;
  } else {
    json val = json::array();
    for (const auto& x : m.v.val) val.push_back(vector_to_json(x));
    j["v"] = json{{"t", m.v.t}, {"val", val}};
  }
  if (m.u.empty()) {
    j["u"] = nullptr;
  } else {
    json val = json::array();
    for (const auto& x : m.u.val) val.push_back(matrix_to_json(x));
    j["u"] = json{{"t", m.u.t}, {"val", val}};
  }
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot open '" + path + "' for writing");
  out << j.dump(1) << "\n";
  if (!out) throw std::invalid_argument("write to '" + path + "' failed");
}

MonitoredModel load_model(const std::string& path) {
  json j = load_json(path);
  if (!j.is_object())
    throw std::invalid_argument("model file root must be an object");
  reject_unknown_keys(
      j, {"labels", "n_diffusive", "n_counting", "rates", "H", "L", "S", "v",
          "u"},
      "the model file");
  for (const char* key : {"labels", "n_diffusive", "n_counting", "rates", "H",
                          "L", "S", "v", "u"})
    if (!j.contains(key))
      throw std::invalid_argument(std::string("model file is missing '") +
                                  key + "'");
  MonitoredModel m;
  m.labels = j["labels"].get<std::vector<std::string>>();
  m.n_diffusive = j["n_diffusive"].get<int>();
  m.n_counting = j["n_counting"].get<int>();
  m.rates = j["rates"].get<std::vector<double>>();
  m.H = matrix_from_json(j["H"], 4, 4, "H");
  if (!j["L"].is_array())
    throw std::invalid_argument("L must be a list of matrices");
  for (std::size_t z = 0; z < j["L"].size(); ++z)
    m.L.push_back(
        matrix_from_json(j["L"][z], 4, 4, "L[" + std::to_string(z) + "]"));
  const Eigen::Index n = static_cast<Eigen::Index>(m.L.size());
  if (!j["S"].is_null()) {
    if (!j["S"].is_array() || static_cast<Eigen::Index>(j["S"].size()) != n)
      throw std::invalid_argument("S must be null or an n x n block list");
    for (Eigen::Index z = 0; z < n; ++z) {
      const json& row = j["S"][z];
      if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n)
        throw std::invalid_argument("S rows must have n blocks");
      std::vector<Mat4> blocks;
      for (Eigen::Index w = 0; w < n; ++w)
        blocks.push_back(matrix_from_json(
            row[w], 4, 4,
            "S[" + std::to_string(z) + "][" + std::to_string(w) + "]"));
      m.S.push_back(std::move(blocks));
    }
  }
  if (!j["v"].is_null()) {
    const json& jv = j["v"];
    if (!jv.is_object() || !jv.contains("t") || !jv.contains("val"))
      throw std::invalid_argument("v must be null or {t, val}");
    m.v.t = jv["t"].get<std::vector<double>>();
    for (std::size_t i = 0; i < jv["val"].size(); ++i)
      m.v.val.push_back(vector_from_json(jv["val"][i], n,
                                         "v.val[" + std::to_string(i) + "]"));
  }
  if (!j["u"].is_null()) {
    const json& ju = j["u"];
    if (!ju.is_object() || !ju.contains("t") || !ju.contains("val"))
      throw std::invalid_argument("u must be null or {t, val}");
    m.u.t = ju["t"].get<std::vector<double>>();
    for (std::size_t i = 0; i < ju["val"].size(); ++i)
      m.u.val.push_back(matrix_from_json(ju["val"][i], n, n,
                                         "u.val[" + std::to_string(i) + "]"));
  }
  m.validate();
  return m;
}

namespace {

void print_value(std::FILE* f, double v, bool first) {
  std::fprintf(f, first ? "%.17g" : ",%.17g", v);
}

}  // namespace

void write_csv(const std::string& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& columns) {
  if (header.size() != columns.size())
    throw std::invalid_argument("csv header/column count mismatch");
  std::size_t rows = columns.empty() ? 0 : columns[0].size();
  for (const auto& c : columns)
    if (c.size() != rows)
      throw std::invalid_argument("csv columns have unequal lengths");
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::invalid_argument("cannot open '" + path + "' for writing");
  for (std::size_t i = 0; i < header.size(); ++i)
    std::fprintf(f, i == 0 ? "%s" : ",%s", header[i].c_str());
  std::fprintf(f, "\n");
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c)
      print_value(f, columns[c][r], c == 0);
    std::fprintf(f, "\n");
  }
  if (std::fclose(f) != 0)
    throw std::invalid_argument("write to '" + path + "' failed");
}

void write_estimate_csv(const std::string& path,
                        const EnsembleEstimate& est) {
  std::vector<std::string> header{"t"};
  std::vector<std::vector<double>> cols{est.times};
  switch (est.kind) {
    case Observable::concurrence:
    case Observable::weight:
      header.insert(header.end(), {"mean", "std_error"});
      cols.push_back(est.mean);
      cols.push_back(est.se);
      break;
    case Observable::state: {
      for (int r = 1; r <= 4; ++r)
        for (int c = 1; c <= 4; ++c) {
          std::string rc = std::to_string(r) + std::to_string(c);
          header.push_back("re_" + rc);
          header.push_back("im_" + rc);
        }
      header.push_back("std_error");
      std::size_t npts = est.state_mean.size();
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
          std::vector<double> re(npts), im(npts);
          for (std::size_t i = 0; i < npts; ++i) {
            re[i] = est.state_mean[i](r, c).real();
            im[i] = est.state_mean[i](r, c).imag();
          }
          cols.push_back(std::move(re));
          cols.push_back(std::move(im));
        }
      cols.push_back(est.state_se);
      break;
    }
    case Observable::counts:
      for (std::size_t k = 0; k < est.count_mean.size(); ++k) {
        header.push_back("mean_" + std::to_string(k + 1));
        header.push_back("std_error_" + std::to_string(k + 1));
        cols.push_back(est.count_mean[k]);
        cols.push_back(est.count_se[k]);
      }
      break;
  }
  write_csv(path, header, cols);
}

void write_master_csv(const std::string& path,
                      const std::vector<double>& times,
                      const std::vector<Mat4>& etas) {
  std::vector<std::string> header{"t", "concurrence"};
  std::vector<std::vector<double>> cols(2 + 32);
  cols[0] = times;
  for (int r = 1; r <= 4; ++r)
    for (int c = 1; c <= 4; ++c) {
      std::string rc = std::to_string(r) + std::to_string(c);
      header.push_back("re_" + rc);
      header.push_back("im_" + rc);
    }
  for (std::size_t i = 0; i < etas.size(); ++i) {
    cols[1].push_back(concurrence_mixed(etas[i]));
    int ci = 2;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        cols[ci++].push_back(etas[i](r, c).real());
        cols[ci++].push_back(etas[i](r, c).imag());
      }
  }
  write_csv(path, header, cols);
}

void write_trajectory_csv(const std::string& path,
                          const TrajectoryRecord& rec, int n_counting) {
  std::vector<std::string> header{"t", "weight"};
  bool pure = rec.pure();
  if (pure) {
    for (int i = 1; i <= 4; ++i) {
      header.push_back("re_c" + std::to_string(i));
      header.push_back("im_c" + std::to_string(i));
    }
  } else {
    for (int r = 1; r <= 4; ++r)
      for (int c = 1; c <= 4; ++c) {
        std::string rc = std::to_string(r) + std::to_string(c);
        header.push_back("re_" + rc);
        header.push_back("im_" + rc);
      }
  }
  for (int k = 1; k <= n_counting; ++k)
    header.push_back("count_" + std::to_string(k));

  std::vector<std::vector<double>> cols(header.size());
  std::size_t npts = rec.times.size();
  for (std::size_t i = 0; i < npts; ++i) {
    std::size_t ci = 0;
    cols[ci++].push_back(rec.times[i]);
    cols[ci++].push_back(i < rec.weight.size() ? rec.weight[i] : 0.0);
    if (pure) {
      for (int r = 0; r < 4; ++r) {
        cols[ci++].push_back(rec.psi[i](r).real());
        cols[ci++].push_back(rec.psi[i](r).imag());
      }
    } else {
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
          cols[ci++].push_back(rec.rho[i](r, c).real());
          cols[ci++].push_back(rec.rho[i](r, c).imag());
        }
    }
    for (int k = 0; k < n_counting; ++k)
      cols[ci++].push_back(
          static_cast<double>(rec.counts_before(k, rec.times[i])));
  }
  write_csv(path, header, cols);
}

}  // namespace qmon
