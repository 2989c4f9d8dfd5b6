#include "gridmpc/netcase.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace gridmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void fail(const std::string& origin, int line_no, const std::string& what) {
  throw CaseError(origin + ":" + std::to_string(line_no) + ": " + what);
}

std::string trim(std::string s) {
  auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && issp(s.back())) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && issp(s[b])) ++b;
  return s.substr(b);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

double parse_num(const std::string& tok, const std::string& origin, int line_no) {
  try {
    std::size_t pos = 0;
    double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    fail(origin, line_no, "expected a number, got '" + tok + "'");
  }
}

int parse_int(const std::string& tok, const std::string& origin, int line_no) {
  int v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    fail(origin, line_no, "expected an integer, got '" + tok + "'");
  return v;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

bool ControlConfig::is_controlled(int bus) const {
  return std::find(controlled.begin(), controlled.end(), bus) != controlled.end();
}

bool ControlConfig::is_freq_constrained(int bus) const {
  return std::find(freq_constrained.begin(), freq_constrained.end(), bus) !=
         freq_constrained.end();
}

const BusControl& ControlConfig::at(int bus) const {
  auto it = std::find(controlled.begin(), controlled.end(), bus);
  if (it == controlled.end())
    throw CaseError("bus index " + std::to_string(bus) + " is not controlled");
  return params[static_cast<std::size_t>(it - controlled.begin())];
}

NetworkCase::NetworkCase(std::vector<Bus> buses, std::vector<Line> lines,
                         ControlConfig config)
    : buses_(std::move(buses)), lines_(std::move(lines)), config_(std::move(config)) {
  const int n = bus_count();
  id_to_index_sorted_ids_.reserve(buses_.size());
  for (const Bus& b : buses_) id_to_index_sorted_ids_.push_back(b.id);
  std::vector<int> order(buses_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return id_to_index_sorted_ids_[a] < id_to_index_sorted_ids_[b];
  });
  std::sort(id_to_index_sorted_ids_.begin(), id_to_index_sorted_ids_.end());
  id_to_index_values_ = order;

  inertia_.resize(n);
  damping_.resize(n);
  injection_.resize(n);
  for (int i = 0; i < n; ++i) {
    inertia_[i] = buses_[i].inertia;
    damping_[i] = buses_[i].damping;
    injection_[i] = buses_[i].injection;
  }
  susceptance_.resize(line_count());
  for (int k = 0; k < line_count(); ++k) susceptance_[k] = lines_[k].susceptance;
  for (int i = 0; i < n; ++i)
    (inertia_[i] > 0 ? generators_ : loads_).push_back(i);

  validate();
}

int NetworkCase::index_of(int external_id) const {
  auto it = std::lower_bound(id_to_index_sorted_ids_.begin(),
                             id_to_index_sorted_ids_.end(), external_id);
  if (it == id_to_index_sorted_ids_.end() || *it != external_id)
    throw CaseError("unknown bus id " + std::to_string(external_id));
  return id_to_index_values_[static_cast<std::size_t>(it - id_to_index_sorted_ids_.begin())];
}

std::pair<int, int> NetworkCase::line_ends(int line) const {
  const Line& e = lines_.at(static_cast<std::size_t>(line));
  return {index_of(e.from), index_of(e.to)};
}

void NetworkCase::validate() const {
  const int n = bus_count();
  if (n == 0) throw CaseError("case has no buses");
  std::set<int> ids;
  for (const Bus& b : buses_) {
    if (!ids.insert(b.id).second)
      throw CaseError("duplicate bus id " + std::to_string(b.id));
    if (!(b.damping > 0))
      throw CaseError("bus " + std::to_string(b.id) + ": damping must be positive");
    if (b.inertia < 0)
      throw CaseError("bus " + std::to_string(b.id) + ": inertia must be non-negative");
  }
  if (generators_.empty()) throw CaseError("no bus has positive inertia");

  std::set<std::pair<int, int>> pairs;
  for (const Line& e : lines_) {
    if (e.from == e.to)
      throw CaseError("line " + std::to_string(e.id) + ": endpoints coincide");
    if (!(e.susceptance > 0))
      throw CaseError("line " + std::to_string(e.id) + ": susceptance must be positive");
    index_of(e.from);
    index_of(e.to);
    auto p = std::minmax(e.from, e.to);
    if (!pairs.insert({p.first, p.second}).second)
      throw CaseError("line " + std::to_string(e.id) + ": duplicate bus pair");
  }

  // Connectivity over the undirected graph.
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (const Line& e : lines_) {
    int a = index_of(e.from), b = index_of(e.to);
    adj[static_cast<std::size_t>(a)].push_back(b);
    adj[static_cast<std::size_t>(b)].push_back(a);
  }
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int reached = 1;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    for (int w : adj[static_cast<std::size_t>(v)])
      if (!seen[static_cast<std::size_t>(w)]) {
        seen[static_cast<std::size_t>(w)] = 1;
        ++reached;
        stack.push_back(w);
      }
  }
  if (reached != n) throw CaseError("network graph is not connected");

  // Controller configuration.
  const ControlConfig& c = config_;
  if (c.horizon_steps < 1) throw CaseError("horizon: N must be >= 1");
  if (!(c.period > 0)) throw CaseError("horizon: T must be positive");
  if (c.params.size() != c.controlled.size())
    throw CaseError("control: parameter rows do not match controlled set");
  std::set<int> ctrl(c.controlled.begin(), c.controlled.end());
  if (ctrl.size() != c.controlled.size()) throw CaseError("control: duplicate controlled bus");
  for (int b : c.controlled)
    if (b < 0 || b >= n) throw CaseError("control: bus index out of range");
  for (int b : c.freq_constrained)
    if (!ctrl.count(b))
      throw CaseError("control: frequency-constrained bus " +
                      std::to_string(buses_[static_cast<std::size_t>(b)].id) +
                      " is not controlled");

  for (std::size_t j = 0; j < c.controlled.size(); ++j) {
    const int bus = c.controlled[j];
    const BusControl& p = c.params[j];
    const std::string tag = "bus " + std::to_string(buses_[static_cast<std::size_t>(bus)].id);
    if (!(p.thr_min < 0 && 0 < p.thr_max))
      throw CaseError(tag + ": thresholds must satisfy thr_min < 0 < thr_max");
    if (!(p.effort_weight > 0)) throw CaseError(tag + ": effort weight c must be positive");
    if (p.slack_weight < 0) throw CaseError(tag + ": slack weight d must be non-negative");
    if (!(p.gain_up > 0 && p.gain_down > 0))
      throw CaseError(tag + ": reference gains must be positive");
    const bool needs_bounds = !p.soft_input || p.slack_weight > 0;
    if (needs_bounds) {
      if (!std::isfinite(p.input_min) || !std::isfinite(p.input_max))
        throw CaseError(tag + ": input bounds required when xi=0 or d>0");
      if (!(p.input_min < p.input_max))
        throw CaseError(tag + ": input bounds must satisfy u_min < u_max");
      if (!p.soft_input && !(p.input_min <= 0 && 0 <= p.input_max))
        throw CaseError(tag + ": hard input bounds must admit zero input");
    }
    if (c.is_freq_constrained(bus)) {
      if (!(p.omega_min < p.thr_min && p.thr_max < p.omega_max))
        throw CaseError(tag + ": bounds must satisfy w_min < thr_min and thr_max < w_max");
      if (!(p.freq_weight > 0)) throw CaseError(tag + ": frequency weight e must be positive");
      if (!(p.margin > 0 && p.margin < p.omega_max - p.omega_min))
        throw CaseError(tag + ": margin must lie in (0, w_max - w_min)");
    }
  }
}

NetworkCase NetworkCase::with_horizon(int steps, double period) const {
  ControlConfig c = config_;
  c.horizon_steps = steps;
  c.period = period;
  return NetworkCase(buses_, lines_, std::move(c));
}

namespace {

struct RawControlRow {
  int bus_id = 0;
  std::map<std::string, double> kv;
  int line_no = 0;
};

}  // namespace

NetworkCase parse_case(const std::string& text, const std::string& origin) {
  std::vector<Bus> buses;
  std::vector<Line> lines;
  std::vector<int> controlled_ids, freq_ids;
  std::vector<RawControlRow> rows;
  int horizon_steps = 0;
  double period = 0;

  enum class Section { none, buses, lines, control, horizon };
  Section sec = Section::none;
  std::istringstream is(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string s = trim(raw);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s == "[buses]") sec = Section::buses;
      else if (s == "[lines]") sec = Section::lines;
      else if (s == "[control]") sec = Section::control;
      else if (s == "[horizon]") sec = Section::horizon;
      else fail(origin, line_no, "unknown section " + s);
      continue;
    }
    const auto toks = split_ws(s);
    switch (sec) {
      case Section::none:
        fail(origin, line_no, "content before first section header");
      case Section::buses: {
        if (toks.size() != 4) fail(origin, line_no, "bus row needs: id M E p0");
        Bus b;
        b.id = parse_int(toks[0], origin, line_no);
        b.inertia = parse_num(toks[1], origin, line_no);
        b.damping = parse_num(toks[2], origin, line_no);
        b.injection = parse_num(toks[3], origin, line_no);
        buses.push_back(b);
        break;
      }
      case Section::lines: {
        if (toks.size() != 4) fail(origin, line_no, "line row needs: id from to b");
        Line e;
        e.id = parse_int(toks[0], origin, line_no);
        e.from = parse_int(toks[1], origin, line_no);
        e.to = parse_int(toks[2], origin, line_no);
        e.susceptance = parse_num(toks[3], origin, line_no);
        lines.push_back(e);
        break;
      }
      case Section::control: {
        if (toks[0] == "controlled" || toks[0] == "freq_constrained") {
          if (toks.size() < 3 || toks[1] != "=")
            fail(origin, line_no, toks[0] + " needs: " + toks[0] + " = id...");
          auto& dst = toks[0] == "controlled" ? controlled_ids : freq_ids;
          for (std::size_t i = 2; i < toks.size(); ++i)
            dst.push_back(parse_int(toks[i], origin, line_no));
        } else if (toks[0] == "bus") {
          if (toks.size() < 2) fail(origin, line_no, "bus row needs an id");
          RawControlRow row;
          row.bus_id = parse_int(toks[1], origin, line_no);
          row.line_no = line_no;
          for (std::size_t i = 2; i < toks.size(); ++i) {
            auto eq = toks[i].find('=');
            if (eq == std::string::npos)
              fail(origin, line_no, "expected key=value, got '" + toks[i] + "'");
            row.kv[toks[i].substr(0, eq)] =
                parse_num(toks[i].substr(eq + 1), origin, line_no);
          }
          rows.push_back(std::move(row));
        } else {
          fail(origin, line_no, "unknown control entry '" + toks[0] + "'");
        }
        break;
      }
      case Section::horizon: {
        if (toks.size() != 3 || toks[1] != "=")
          fail(origin, line_no, "horizon rows: N = <int> or T = <seconds>");
        if (toks[0] == "N") horizon_steps = parse_int(toks[2], origin, line_no);
        else if (toks[0] == "T") period = parse_num(toks[2], origin, line_no);
        else fail(origin, line_no, "unknown horizon key '" + toks[0] + "'");
        break;
      }
    }
  }

  // Map external ids to internal indexes via a throwaway index.
  std::map<int, int> index;
  for (std::size_t i = 0; i < buses.size(); ++i) {
    if (!index.emplace(buses[i].id, static_cast<int>(i)).second)
      throw CaseError(origin + ": duplicate bus id " + std::to_string(buses[i].id));
  }
  auto to_index = [&](int id, int at_line) {
    auto it = index.find(id);
    if (it == index.end()) fail(origin, at_line, "unknown bus id " + std::to_string(id));
    return it->second;
  };

  ControlConfig cfg;
  cfg.horizon_steps = horizon_steps;
  cfg.period = period;
  for (int id : controlled_ids) cfg.controlled.push_back(to_index(id, 0));
  for (int id : freq_ids) cfg.freq_constrained.push_back(to_index(id, 0));
  cfg.params.resize(cfg.controlled.size());

  for (const RawControlRow& row : rows) {
    const int bus = to_index(row.bus_id, row.line_no);
    auto it = std::find(cfg.controlled.begin(), cfg.controlled.end(), bus);
    if (it == cfg.controlled.end())
      fail(origin, row.line_no,
           "bus " + std::to_string(row.bus_id) + " has parameters but is not controlled");
    BusControl p;
    auto get = [&](const char* key, std::optional<double> fallback = {}) {
      auto kit = row.kv.find(key);
      if (kit != row.kv.end()) return kit->second;
      if (fallback) return *fallback;
      fail(origin, row.line_no,
           "bus " + std::to_string(row.bus_id) + ": missing key '" + key + "'");
    };
    p.thr_min = get("thr_lo");
    p.thr_max = get("thr_hi");
    p.effort_weight = get("c");
    p.slack_weight = get("d", 0.0);
    p.soft_input = get("xi") != 0.0;
    p.gain_up = get("gamma_up");
    p.gain_down = get("gamma_dn");
    p.input_min = get("u_min", -kInf);
    p.input_max = get("u_max", kInf);
    if (cfg.is_freq_constrained(bus)) {
      p.omega_min = get("w_lo");
      p.omega_max = get("w_hi");
      p.freq_weight = get("e");
      p.margin = get("delta");
    }
    cfg.params[static_cast<std::size_t>(it - cfg.controlled.begin())] = p;
  }

  return NetworkCase(std::move(buses), std::move(lines), std::move(cfg));
}

NetworkCase load_case(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CaseError("cannot open case file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_case(ss.str(), path.string());
}

std::string serialize_case(const NetworkCase& cse) {
  std::ostringstream os;
  os << "[buses]\n";
  for (const Bus& b : cse.buses())
    os << b.id << "  " << fmt(b.inertia) << "  " << fmt(b.damping) << "  "
       << fmt(b.injection) << "\n";
  os << "\n[lines]\n";
  for (const Line& e : cse.lines())
    os << e.id << "  " << e.from << "  " << e.to << "  " << fmt(e.susceptance) << "\n";
  os << "\n[control]\ncontrolled =";
  const ControlConfig& c = cse.config();
  for (int b : c.controlled) os << " " << cse.buses()[static_cast<std::size_t>(b)].id;
  os << "\nfreq_constrained =";
  for (int b : c.freq_constrained) os << " " << cse.buses()[static_cast<std::size_t>(b)].id;
  os << "\n";
  for (std::size_t j = 0; j < c.controlled.size(); ++j) {
    const int bus = c.controlled[j];
    const BusControl& p = c.params[j];
    os << "bus " << cse.buses()[static_cast<std::size_t>(bus)].id
       << " thr_lo=" << fmt(p.thr_min) << " thr_hi=" << fmt(p.thr_max)
       << " c=" << fmt(p.effort_weight) << " d=" << fmt(p.slack_weight)
       << " xi=" << (p.soft_input ? 1 : 0) << " gamma_up=" << fmt(p.gain_up)
       << " gamma_dn=" << fmt(p.gain_down);
    if (std::isfinite(p.input_min)) os << " u_min=" << fmt(p.input_min);
    if (std::isfinite(p.input_max)) os << " u_max=" << fmt(p.input_max);
    if (c.is_freq_constrained(bus))
      os << " w_lo=" << fmt(p.omega_min) << " w_hi=" << fmt(p.omega_max)
         << " e=" << fmt(p.freq_weight) << " delta=" << fmt(p.margin);
    os << "\n";
  }
  os << "\n[horizon]\nN = " << c.horizon_steps << "\nT = " << fmt(c.period) << "\n";
  return os.str();
}

void save_case(const NetworkCase& cse, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw CaseError("cannot write case file " + path.string());
  out << serialize_case(cse);
}

Eigen::SparseMatrix<double> incidence_sparse(const NetworkCase& cse) {
  Eigen::SparseMatrix<double> d(cse.line_count(), cse.bus_count());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(2 * cse.line_count()));
  for (int k = 0; k < cse.line_count(); ++k) {
    auto [pos, neg] = cse.line_ends(k);
    trip.emplace_back(k, pos, 1.0);
    trip.emplace_back(k, neg, -1.0);
  }
  d.setFromTriplets(trip.begin(), trip.end());
  return d;
}

Eigen::MatrixXd incidence_matrix(const NetworkCase& cse) {
  return Eigen::MatrixXd(incidence_sparse(cse));
}

Eigen::MatrixXd laplacian(const NetworkCase& cse) {
  const Eigen::MatrixXd d = incidence_matrix(cse);
  return d.transpose() * cse.susceptance().asDiagonal() * d;
}

}  // namespace gridmpc
