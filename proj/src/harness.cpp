#include "mnsls/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

namespace mnsls {

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_num(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    if (s == "nan") return std::nan("");
    throw std::invalid_argument("bad number '" + s + "' in sweep CSV");
  }
  return v;
}

constexpr const char* kSweepHeader =
    "N,repeat,status,alpha,mean_cost,q10,q50,q90,max_violation,solve_ms";

}  // namespace

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

EvalReport evaluate(const MultNoiseSystem& sys, const BltOperator& K, const Matrix& Q,
                    const Matrix& R, const Vector& x0, int n_rollouts, std::uint64_t seed) {
  if (n_rollouts < 1) throw std::invalid_argument("n_rollouts must be positive");
  check_cost_weights(Q, R);
  const int T = K.horizon(), n = sys.n(), m = sys.m();
  EvalReport rep;
  rep.n_rollouts = n_rollouts;
  rep.seed = seed;
  std::vector<double> costs(n_rollouts);
  std::vector<std::vector<double>> xs(static_cast<std::size_t>(T) * n), us(static_cast<std::size_t>(T) * m);
  for (int r = 0; r < n_rollouts; ++r) {
    const NoiseTrace trace = sample_noise(sys, T, x0, derive_seed(seed, static_cast<std::uint64_t>(r)));
    const Trajectory traj = rollout(sys, K, trace);
    costs[r] = lqr_cost(traj, Q, R);
    for (int t = 0; t < T; ++t) {
      for (int i = 0; i < n; ++i) xs[t * n + i].push_back(traj.states(t, i));
      for (int i = 0; i < m; ++i) us[t * m + i].push_back(traj.inputs(t, i));
    }
  }
  const double mean = std::accumulate(costs.begin(), costs.end(), 0.0) / n_rollouts;
  double ss = 0.0;
  for (double c : costs) ss += (c - mean) * (c - mean);
  rep.mean_cost = mean;
  rep.std_error = n_rollouts > 1 ? std::sqrt(ss / (n_rollouts - 1) / n_rollouts) : 0.0;
  rep.min_cost = *std::min_element(costs.begin(), costs.end());
  rep.max_cost = *std::max_element(costs.begin(), costs.end());
  rep.q10 = quantile(costs, 0.1);
  rep.q50 = quantile(costs, 0.5);
  rep.q90 = quantile(costs, 0.9);
  auto bands = [&](const std::vector<std::vector<double>>& v, int w, Matrix& q10, Matrix& q50, Matrix& q90) {
    q10.resize(T, w);
    q50.resize(T, w);
    q90.resize(T, w);
    for (int t = 0; t < T; ++t) {
      for (int i = 0; i < w; ++i) {
        const auto& col = v[t * w + i];
        q10(t, i) = quantile(col, 0.1);
        q50(t, i) = quantile(col, 0.5);
        q90(t, i) = quantile(col, 0.9);
      }
    }
  };
  bands(xs, n, rep.state_q10, rep.state_q50, rep.state_q90);
  bands(us, m, rep.input_q10, rep.input_q50, rep.input_q90);
  return rep;
}

nlohmann::json eval_to_json(const EvalReport& r) {
  return {{"n_rollouts", r.n_rollouts},
          {"seed", r.seed},
          {"mean_cost", r.mean_cost},
          {"std_error", r.std_error},
          {"min_cost", r.min_cost},
          {"max_cost", r.max_cost},
          {"q10", r.q10},
          {"q50", r.q50},
          {"q90", r.q90},
          {"state_q10", matrix_to_json(r.state_q10)},
          {"state_q50", matrix_to_json(r.state_q50)},
          {"state_q90", matrix_to_json(r.state_q90)},
          {"input_q10", matrix_to_json(r.input_q10)},
          {"input_q50", matrix_to_json(r.input_q50)},
          {"input_q90", matrix_to_json(r.input_q90)}};
}

std::vector<SweepAggregate> SweepReport::aggregate() const {
  std::vector<int> Ns;
  for (const SweepRow& r : rows) {
    if (std::find(Ns.begin(), Ns.end(), r.N) == Ns.end()) Ns.push_back(r.N);
  }
  std::sort(Ns.begin(), Ns.end());
  std::vector<SweepAggregate> out;
  for (int N : Ns) {
    std::vector<double> means, bands;
    for (const SweepRow& r : rows) {
      if (r.N != N || r.status == "infeasible") continue;
      means.push_back(r.mean_cost);
      bands.push_back(r.q90 - r.q10);
    }
    SweepAggregate a;
    a.N = N;
    if (!means.empty()) {
      a.mean_of_means = std::accumulate(means.begin(), means.end(), 0.0) / means.size();
      a.q10_of_means = quantile(means, 0.1);
      a.q90_of_means = quantile(means, 0.9);
      a.mean_band = std::accumulate(bands.begin(), bands.end(), 0.0) / bands.size();
    }
    out.push_back(a);
  }
  return out;
}

SweepReport experiment_sweep(const MultNoiseSystem& sys, const CostModel& cost, int horizon,
                             const ScenarioConfig& base, const SweepConfig& sweep) {
  if (sweep.N_list.empty()) throw std::invalid_argument("N_list must not be empty");
  if (sweep.repeats < 1) throw std::invalid_argument("repeats must be positive");
  const Vector x0 = sweep.x0.size() == 0 ? Vector::Ones(sys.n()) : sweep.x0;
  const std::uint64_t eval_seed = derive_seed(sweep.master_seed, 0xE7A1ULL << 20);
  SweepReport report;
  for (int N : sweep.N_list) {
    for (int r = 0; r < sweep.repeats; ++r) {
      ScenarioConfig cfg = base;
      cfg.N = N;
      cfg.seed = derive_seed(sweep.master_seed, static_cast<std::uint64_t>(r));
      SweepRow row;
      row.N = N;
      row.repeat = r;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const SynthesisResult res = solve_p7(sys, cost, horizon, cfg);
        const auto t1 = std::chrono::steady_clock::now();
        row.status = to_string(res.qp_status);
        row.alpha = res.alpha;
        row.max_violation = res.max_violation;
        if (sweep.record_timing) row.solve_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        if (res.qp_status != QpStatus::kInfeasible) {
          const EvalReport ev = evaluate(sys, res.controller, cost.Q, cost.R, x0, sweep.n_rollouts, eval_seed);
          row.mean_cost = ev.mean_cost;
          row.q10 = ev.q10;
          row.q50 = ev.q50;
          row.q90 = ev.q90;
        }
      } catch (const std::exception&) {
        row.status = "error";
      }
      report.rows.push_back(row);
    }
  }
  return report;
}

std::string sweep_csv(const SweepReport& report) {
  std::string out = std::string(kSweepHeader) + "\n";
  for (const SweepRow& r : report.rows) {
    out += std::to_string(r.N) + "," + std::to_string(r.repeat) + "," + r.status + "," + fmt(r.alpha) +
           "," + fmt(r.mean_cost) + "," + fmt(r.q10) + "," + fmt(r.q50) + "," + fmt(r.q90) + "," +
           fmt(r.max_violation) + "," + fmt(r.solve_ms) + "\n";
  }
  return out;
}

SweepReport parse_sweep_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("sweep CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kSweepHeader) throw std::invalid_argument("unexpected sweep CSV header");
  SweepReport rep;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) throw std::invalid_argument("sweep CSV row has the wrong width");
    SweepRow r;
    r.N = std::stoi(cells[0]);
    r.repeat = std::stoi(cells[1]);
    r.status = cells[2];
    r.alpha = parse_num(cells[3]);
    r.mean_cost = parse_num(cells[4]);
    r.q10 = parse_num(cells[5]);
    r.q50 = parse_num(cells[6]);
    r.q90 = parse_num(cells[7]);
    r.max_violation = parse_num(cells[8]);
    r.solve_ms = parse_num(cells[9]);
    rep.rows.push_back(r);
  }
  return rep;
}

void export_csv(const SweepReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << sweep_csv(report);
  if (!out) throw std::runtime_error("write failed for " + path);
}

SweepReport import_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_sweep_csv(ss.str());
}

void export_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed for " + path);
}

nlohmann::json import_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return nlohmann::json::parse(in);
}

PairedTrend paired_trend(const std::vector<double>& before, const std::vector<double>& after,
                         double level) {
  if (before.size() != after.size() || before.size() < 2) {
    throw std::invalid_argument("paired_trend needs two equal samples of size >= 2");
  }
  const auto k = static_cast<double>(before.size());
  std::vector<double> d(before.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = after[i] - before[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / k;
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double se = std::sqrt(ss / (k - 1) / k);
  PairedTrend out;
  out.mean_diff = mean;
  if (se == 0.0) {
    out.t_stat = mean > 0.0 ? kInf : (mean < 0.0 ? -kInf : 0.0);
    out.p_increase = mean > 0.0 ? 0.0 : 1.0;
  } else {
    out.t_stat = mean / se;
    const boost::math::students_t dist(k - 1);
    out.p_increase = boost::math::cdf(boost::math::complement(dist, out.t_stat));
  }
  out.increase_significant = out.p_increase < level;
  return out;
}

MultNoiseSystem example_system() {
  return MultNoiseSystem::scalar(0.8, 0.5, 0.5, DeltaDistribution::truncated_gaussian(-2.0, 2.0), 0.0);
}

CostModel example_cost(int horizon) {
  return {Matrix::Ones(1, 1), Matrix::Ones(1, 1), WSpec::unit_noise(1, horizon, Vector::Ones(1))};
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  cfg.horizon = j.value("horizon", 10);
  cfg.system = j.contains("system") ? system_from_json(j.at("system")) : example_system();
  cfg.cost = j.contains("cost") ? cost_from_json(j.at("cost"), cfg.system, cfg.horizon)
                                : example_cost(cfg.horizon);
  const std::uint64_t seed = j.value("seed", std::uint64_t{0});
  cfg.sweep.master_seed = seed;
  cfg.scenario.seed = seed;
  if (j.contains("scenario")) {
    const auto& s = j.at("scenario");
    cfg.scenario.eps_tol = s.value("eps_tol", cfg.scenario.eps_tol);
    cfg.scenario.eps_risk = s.value("eps_risk", cfg.scenario.eps_risk);
    cfg.scenario.beta = s.value("beta", cfg.scenario.beta);
    if (s.contains("N_list")) cfg.sweep.N_list = s.at("N_list").get<std::vector<int>>();
    cfg.sweep.repeats = s.value("repeats", cfg.sweep.repeats);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    cfg.sweep.n_rollouts = e.value("n_rollouts", cfg.sweep.n_rollouts);
    if (e.contains("x0")) cfg.sweep.x0 = matrix_from_json(e.at("x0"));
  }
  cfg.scenario.validate();
  return cfg;
}

}  // namespace mnsls
