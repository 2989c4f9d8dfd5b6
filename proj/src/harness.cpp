#include "gridmpc/harness.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "gridmpc/dynamics.hpp"
#include "gridmpc/mpc.hpp"
#include "gridmpc/refgen.hpp"

namespace gridmpc {

namespace {

std::string trim(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  return s.substr(b);
}

std::string num12(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

double trapezoid(const std::vector<double>& t, const std::vector<double>& y) {
  double acc = 0;
  for (std::size_t k = 1; k < t.size(); ++k)
    acc += 0.5 * (y[k] + y[k - 1]) * (t[k] - t[k - 1]);
  return acc;
}

}  // namespace

Scenario parse_scenario(const std::string& text, const std::filesystem::path& base_dir,
                        const std::string& origin) {
  Scenario scn;
  struct RawDisturb {
    int from, to;
    Disturbance d;
  };
  std::vector<RawDisturb> raw;

  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) -> void {
    throw ScenarioError(origin + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string s = trim(line);
    if (s.empty()) continue;
    std::istringstream ls(s);
    std::string key;
    ls >> key;
    if (key == "disturb") {
      std::string range;
      ls >> range;
      RawDisturb rd{0, 0, {}};
      const auto dash = range.find('-');
      try {
        if (dash == std::string::npos) {
          rd.from = rd.to = std::stoi(range);
        } else {
          rd.from = std::stoi(range.substr(0, dash));
          rd.to = std::stoi(range.substr(dash + 1));
        }
      } catch (const std::exception&) {
        fail("bad bus range '" + range + "'");
      }
      std::string kv;
      while (ls >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) fail("expected key=value, got '" + kv + "'");
        const std::string k = kv.substr(0, eq);
        const double v = std::stod(kv.substr(eq + 1));
        if (k == "a") rd.d.amplitude = v;
        else if (k == "P") rd.d.half_period = v;
        else if (k == "tc") rd.d.cutoff = v;
        else fail("unknown disturbance key '" + k + "'");
      }
      raw.push_back(rd);
      continue;
    }
    std::string eq, value;
    ls >> eq;
    std::getline(ls, value);
    value = trim(value);
    if (eq != "=" || value.empty()) fail("expected '" + key + " = <value>'");
    if (key == "case") scn.case_path = base_dir / value;
    else if (key == "partition") scn.partition_path = base_dir / value;
    else if (key == "controller") {
      if (value == "none") scn.controller = ControllerKind::none;
      else if (value == "centralized") scn.controller = ControllerKind::centralized;
      else if (value == "distributed") scn.controller = ControllerKind::distributed;
      else if (value == "reference_baseline")
        scn.controller = ControllerKind::reference_baseline;
      else fail("unknown controller '" + value + "'");
    } else if (key == "duration") scn.duration = std::stod(value);
    else if (key == "enable_time") scn.enable_time = std::stod(value);
    else if (key == "forecast") {
      if (value == "exact") scn.forecast = ForecastModel::exact;
      else if (value == "linear_growth") scn.forecast = ForecastModel::linear_growth;
      else fail("unknown forecast model '" + value + "'");
    } else if (key == "seed") scn.seed = std::stol(value);
    else fail("unknown scenario key '" + key + "'");
  }

  if (scn.case_path.empty()) throw ScenarioError(origin + ": missing case path");
  if (!(scn.duration > 0)) throw ScenarioError(origin + ": duration must be positive");
  if (scn.enable_time < 0) throw ScenarioError(origin + ": enable_time must be >= 0");
  if (scn.controller == ControllerKind::distributed && !scn.partition_path)
    throw ScenarioError(origin + ": distributed controller requires a partition");

  // Disturbance ranges are resolved against the case on load.
  const NetworkCase cse = load_case(scn.case_path);
  scn.disturbances.assign(static_cast<std::size_t>(cse.bus_count()), Disturbance{});
  for (const RawDisturb& rd : raw)
    for (int id = rd.from; id <= rd.to; ++id)
      scn.disturbances[static_cast<std::size_t>(cse.index_of(id))] = rd.d;
  return scn;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), path.parent_path(), path.string());
}

Eigen::VectorXd injections_at(const NetworkCase& cse, const Scenario& scn, double t) {
  Eigen::VectorXd p = cse.injection();
  double cached_arg = std::numeric_limits<double>::quiet_NaN();
  double cached_sin = 0;
  for (int i = 0; i < cse.bus_count(); ++i) {
    const Disturbance& d = scn.disturbances[static_cast<std::size_t>(i)];
    if (d.amplitude == 0 || t >= d.cutoff) continue;
    const double arg = std::numbers::pi * t / d.half_period;
    if (arg != cached_arg) {
      cached_arg = arg;
      cached_sin = std::sin(arg);
    }
    p[i] *= 1.0 + d.amplitude * cached_sin;
  }
  return p;
}

Eigen::MatrixXd forecast(const NetworkCase& cse, const Scenario& scn, ForecastModel model,
                         double t) {
  const int n_steps = cse.config().horizon_steps;
  const double T = cse.config().period;
  Eigen::MatrixXd out(cse.bus_count(), n_steps);
  for (int k = 0; k < n_steps; ++k) {
    out.col(k) = injections_at(cse, scn, t + k * T);
    if (model == ForecastModel::linear_growth) out.col(k) *= 1.0 + k * T;
  }
  return out;
}

namespace {

// One-step closed-loop application of the per-bus safety law (no
// optimization): the same coupled resolve the reference generator uses,
// evaluated at the measured state.
Eigen::VectorXd baseline_input(const NetworkCase& cse, const LinearModel& model,
                               const Eigen::VectorXd& angles, const Eigen::VectorXd& freqs,
                               const Eigen::VectorXd& p_now) {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(cse.bus_count());
  const Eigen::VectorXd flow = model.flow_map() * angles.array().sin().matrix();
  for (int bus : cse.config().freq_constrained) {
    if (cse.inertia()[bus] > 0) {
      const double v = -flow[bus] + p_now[bus] - cse.damping()[bus] * freqs[bus];
      u[bus] = reference_input(cse, bus, freqs[bus], v);
    } else {
      // Zero-inertia coupling: solve law and algebraic row together.
      const BusControl& p = cse.config().at(bus);
      const double drive = -flow[bus] + p_now[bus];
      const double interior = drive / cse.damping()[bus];
      if (interior < p.omega_min) {
        u[bus] = saturate(cse.damping()[bus] * p.omega_min - drive, p.soft_input,
                          p.input_min, p.input_max);
      } else if (interior > p.omega_max) {
        u[bus] = saturate(cse.damping()[bus] * p.omega_max - drive, p.soft_input,
                          p.input_min, p.input_max);
      }
    }
  }
  return u;
}

}  // namespace

RunLog run(const Scenario& scn) {
  const NetworkCase cse = load_case(scn.case_path);
  const Equilibrium eq = compute_equilibrium(cse);
  const double T = cse.config().period;
  const int n = cse.bus_count();
  const int steps = static_cast<int>(std::llround(scn.duration / T));
  if (steps < 1) throw ScenarioError("duration shorter than one control period");

  std::optional<mpc::CentralizedController> central;
  std::optional<DistributedController> dist;
  if (scn.controller == ControllerKind::centralized) {
    central.emplace(cse);
  } else if (scn.controller == ControllerKind::distributed) {
    dist.emplace(cse, load_partition(cse, *scn.partition_path));
  }

  LinearModel model(cse);
  NonlinearStepper stepper(cse);

  RunLog log;
  log.period = T;
  log.times.resize(static_cast<std::size_t>(steps) + 1);
  log.angles.resize(cse.line_count(), steps + 1);
  log.freqs.resize(n, steps + 1);
  log.inputs.resize(n, steps + 1);
  log.injections.resize(n, steps + 1);
  log.energy.resize(steps + 1);

  SystemState state;
  state.angles = eq.angles;
  state.freqs = Eigen::VectorXd::Constant(n, eq.sync_freq);

  Eigen::VectorXd u_prev = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd wg(static_cast<Eigen::Index>(cse.generators().size()));
  const double h = T / 10.0;

  for (int k = 0; k <= steps; ++k) {
    const double t = k * T;
    const Eigen::VectorXd p_now = injections_at(cse, scn, t);

    // Measurement: the algebraic frequencies still reflect the
    // previously applied input at this instant.
    Eigen::VectorXd measured = state.freqs;
    model.close_algebraic(state.angles.array().sin().matrix(), u_prev, p_now, measured);

    Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
    if (k == steps) {
      u = u_prev;  // terminal snapshot only
    } else if (t >= scn.enable_time && scn.controller != ControllerKind::none) {
      switch (scn.controller) {
        case ControllerKind::centralized:
          u = central->step(state.angles, measured, forecast(cse, scn, scn.forecast, t));
          break;
        case ControllerKind::distributed:
          u = dist->step(state.angles, measured, forecast(cse, scn, scn.forecast, t));
          break;
        case ControllerKind::reference_baseline:
          u = baseline_input(cse, model, state.angles, measured, p_now);
          break;
        case ControllerKind::none:
          break;
      }
    }

    // Log with the newly applied input: zero-inertia frequencies jump
    // with it, and the stability sign conditions are judged against
    // the post-input values.
    Eigen::VectorXd logged = state.freqs;
    model.close_algebraic(state.angles.array().sin().matrix(), u, p_now, logged);
    log.times[static_cast<std::size_t>(k)] = t;
    log.angles.col(k) = state.angles;
    log.freqs.col(k) = logged;
    log.inputs.col(k) = u;
    log.injections.col(k) = p_now;
    for (std::size_t g = 0; g < cse.generators().size(); ++g)
      wg[static_cast<Eigen::Index>(g)] = state.freqs[cse.generators()[g]];
    log.energy[k] = energy(cse, eq, state.angles, wg);

    if (k == steps) break;
    try {
      for (int sub = 0; sub < 10; ++sub) {
        const Eigen::VectorXd p_sub = injections_at(cse, scn, t + sub * h);
        state = stepper.step(state, u, p_sub, h);
      }
    } catch (const DynamicsError& e) {
      throw ScenarioError("integration failed at step " + std::to_string(k) + ": " +
                          e.what());
    }
    u_prev = u;
  }
  return log;
}

RunSummary summarize(const NetworkCase& cse, const RunLog& log) {
  RunSummary out;
  const std::size_t samples = log.times.size();
  std::vector<double> y(samples);

  for (std::size_t k = 0; k < samples; ++k)
    y[k] = log.inputs.col(static_cast<Eigen::Index>(k)).sum();
  out.input_total_integral = trapezoid(log.times, y);

  if (log.injections.size() > 0) {
    for (std::size_t k = 0; k < samples; ++k)
      y[k] = (log.injections.col(static_cast<Eigen::Index>(k)) - log.injections.col(0)).sum();
    out.injection_shift_integral = trapezoid(log.times, y);
  }

  for (int bus : cse.config().controlled) {
    const double c = cse.config().at(bus).effort_weight;
    for (std::size_t k = 0; k < samples; ++k) {
      const double u = log.inputs(bus, static_cast<Eigen::Index>(k));
      y[k] = u * u;
    }
    out.weighted_cost += c * trapezoid(log.times, y);
  }

  auto [sync, imb] = sync_frequency(cse, cse.injection());
  out.final_residual =
      (log.freqs.col(log.freqs.cols() - 1).array() - sync).abs().maxCoeff();

  for (int bus : cse.config().freq_constrained) {
    const BusControl& p = cse.config().at(bus);
    BusSummary bs;
    bs.bus_id = cse.buses()[static_cast<std::size_t>(bus)].id;
    bs.freq_min = log.freqs.row(bus).minCoeff();
    bs.freq_max = log.freqs.row(bus).maxCoeff();
    for (std::size_t k = 0; k < samples; ++k)
      y[k] = std::fabs(log.inputs(bus, static_cast<Eigen::Index>(k)));
    bs.abs_input_integral = trapezoid(log.times, y);
    bool entered = false;
    for (std::size_t k = 0; k < samples; ++k) {
      const double w = log.freqs(bus, static_cast<Eigen::Index>(k));
      const bool inside = w >= p.omega_min && w <= p.omega_max;
      if (!inside) ++bs.violations;
      if (inside && !entered) {
        entered = true;
        bs.first_entry = log.times[k];
      } else if (!inside && entered) {
        ++bs.exits_after_entry;
      }
    }
    out.constrained.push_back(bs);
  }
  return out;
}

void write_trace_csv(const RunLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ScenarioError("cannot write trace file " + path.string());
  const int m = static_cast<int>(log.angles.rows());
  const int n = static_cast<int>(log.freqs.rows());
  out << "t";
  for (int l = 1; l <= m; ++l) out << ",lambda_" << l;
  for (int i = 1; i <= n; ++i) out << ",omega_" << i;
  for (int i = 1; i <= n; ++i) out << ",u_" << i;
  out << ",V\n";
  for (std::size_t k = 0; k < log.times.size(); ++k) {
    const Eigen::Index col = static_cast<Eigen::Index>(k);
    out << num12(log.times[k]);
    for (int l = 0; l < m; ++l) out << "," << num12(log.angles(l, col));
    for (int i = 0; i < n; ++i) out << "," << num12(log.freqs(i, col));
    for (int i = 0; i < n; ++i) out << "," << num12(log.inputs(i, col));
    out << "," << num12(log.energy[col]) << "\n";
  }
}

RunLog read_trace_csv(const NetworkCase& cse, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open trace file " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw ScenarioError("empty trace file");
  const int m = cse.line_count();
  const int n = cse.bus_count();
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<double> vals;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) vals.push_back(std::stod(cell));
    if (static_cast<int>(vals.size()) != 1 + m + 2 * n + 1)
      throw ScenarioError("trace column count does not match the case");
    rows.push_back(std::move(vals));
  }
  RunLog log;
  const int samples = static_cast<int>(rows.size());
  log.times.resize(static_cast<std::size_t>(samples));
  log.angles.resize(m, samples);
  log.freqs.resize(n, samples);
  log.inputs.resize(n, samples);
  log.energy.resize(samples);
  for (int k = 0; k < samples; ++k) {
    const auto& v = rows[static_cast<std::size_t>(k)];
    log.times[static_cast<std::size_t>(k)] = v[0];
    for (int l = 0; l < m; ++l) log.angles(l, k) = v[static_cast<std::size_t>(1 + l)];
    for (int i = 0; i < n; ++i) log.freqs(i, k) = v[static_cast<std::size_t>(1 + m + i)];
    for (int i = 0; i < n; ++i) log.inputs(i, k) = v[static_cast<std::size_t>(1 + m + n + i)];
    log.energy[k] = v.back();
  }
  if (samples >= 2) log.period = log.times[1] - log.times[0];
  return log;
}

std::string format_summary(const NetworkCase& cse, const RunSummary& s) {
  std::ostringstream os;
  os << "input_total_integral = " << num12(s.input_total_integral) << "\n";
  os << "injection_shift_integral = " << num12(s.injection_shift_integral) << "\n";
  os << "weighted_cost = " << num12(s.weighted_cost) << "\n";
  os << "final_residual = " << num12(s.final_residual) << "\n";
  for (const BusSummary& b : s.constrained) {
    os << "bus " << b.bus_id << ": freq_range = [" << num12(b.freq_min) << ", "
       << num12(b.freq_max) << "]"
       << " abs_input_integral = " << num12(b.abs_input_integral)
       << " first_entry = " << num12(b.first_entry) << " violations = " << b.violations
       << " exits_after_entry = " << b.exits_after_entry << "\n";
  }
  (void)cse;
  return os.str();
}

std::string report(const NetworkCase& cse, const std::vector<std::string>& names,
                   const std::vector<RunLog>& logs) {
  if (names.size() != logs.size()) throw ScenarioError("report: names/logs mismatch");
  if (logs.empty()) throw ScenarioError("report: no logs");
  for (std::size_t i = 1; i < logs.size(); ++i) {
    if (logs[i].times.size() != logs[0].times.size() ||
        logs[i].times.front() != logs[0].times.front() ||
        logs[i].times.back() != logs[0].times.back())
      throw ScenarioError("report: time grids differ");
  }
  std::ostringstream os;
  std::vector<RunSummary> sums;
  for (const RunLog& log : logs) sums.push_back(summarize(cse, log));

  os << "run                        int(u_total)    weighted_cost   final_residual  "
        "violations  first_entry\n";
  for (std::size_t i = 0; i < logs.size(); ++i) {
    long viol = 0;
    double entry = -1;
    for (const BusSummary& b : sums[i].constrained) {
      viol += b.violations;
      entry = std::max(entry, b.first_entry);
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-26s %-15.6g %-15.6g %-15.6g %-11ld %-10.6g\n",
                  names[i].c_str(), sums[i].input_total_integral, sums[i].weighted_cost,
                  sums[i].final_residual, viol, entry);
    os << buf;
  }
  os << "\npairwise input_total ordering:\n";
  for (std::size_t i = 0; i < logs.size(); ++i)
    for (std::size_t j = i + 1; j < logs.size(); ++j) {
      const double a = sums[i].input_total_integral, b = sums[j].input_total_integral;
      os << "  " << names[i] << (a < b ? " < " : a > b ? " > " : " = ") << names[j] << "\n";
    }
  return os.str();
}

}  // namespace gridmpc
