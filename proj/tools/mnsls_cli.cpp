#include <cstdint>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mnsls/harness.hpp"
#include "mnsls/sysid.hpp"

using namespace mnsls;

namespace {

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string cell;
  while (std::getline(in, cell, ',')) {
    if (!cell.empty()) out.push_back(std::stod(cell));
  }
  return out;
}

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void emit(const nlohmann::json& j, const std::string& out, bool quiet) {
  if (!out.empty()) {
    export_json(j, out);
    if (!quiet) std::cerr << "wrote " << out << "\n";
  } else {
    std::cout << j.dump(2) << "\n";
  }
}

// Accepts either a bare BLT document or a synthesis result holding one.
BltOperator load_controller(const std::string& path) {
  const nlohmann::json j = import_json(path);
  if (j.contains("controller")) return blt_from_json(j.at("controller"));
  if (j.contains("phi_x")) return controller_from_response(response_from_json(j));
  return blt_from_json(j);
}

SystemResponse load_response(const std::string& path) {
  const nlohmann::json j = import_json(path);
  if (j.contains("response")) return response_from_json(j.at("response"));
  return response_from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SLS controller synthesis for systems with multiplicative noise"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  std::uint64_t seed = 0;
  std::string out;
  bool quiet = false;
  app.add_option("--seed", seed, "master random seed");
  app.add_option("--out", out, "output file (stdout when omitted)");
  app.add_flag("--quiet", quiet, "suppress progress messages");

  // identify
  auto* id = app.add_subcommand("identify", "identify a multiplicative-noise model from data");
  std::string data_path, alpha_str;
  bool estimate_alpha = false;
  id->add_option("--data", data_path, "CSV batch t,x_1..x_n,u_1..u_m")->required()->check(CLI::ExistingFile);
  id->add_option("--alpha", alpha_str, "additive noise variances a1,..,an");
  id->add_flag("--estimate-alpha", estimate_alpha, "estimate variances from the residual");

  // synthesize
  auto* syn = app.add_subcommand("synthesize", "nominal or scenario SLS synthesis");
  std::string mode = "scenario", system_path, cost_path;
  int horizon = 10;
  ScenarioConfig scfg;
  int scenarios = -1;
  syn->add_option("--mode", mode)->check(CLI::IsMember({"nominal", "scenario"}));
  syn->add_option("--system", system_path)->required()->check(CLI::ExistingFile);
  syn->add_option("--cost", cost_path)->required()->check(CLI::ExistingFile);
  syn->add_option("--horizon", horizon)->check(CLI::PositiveNumber);
  syn->add_option("--eps-tol", scfg.eps_tol);
  syn->add_option("--eps-risk", scfg.eps_risk);
  syn->add_option("--beta", scfg.beta);
  syn->add_option("--scenarios", scenarios, "scenario count (default: the sample bound)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Monte Carlo evaluation of a controller");
  std::string ev_system, ev_controller, ev_cost, x0_str;
  int rollouts = 10000;
  ev->add_option("--system", ev_system)->required()->check(CLI::ExistingFile);
  ev->add_option("--controller", ev_controller, "controller, response or synthesis result JSON")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--cost", ev_cost, "cost JSON for Q and R (identity when omitted)")->check(CLI::ExistingFile);
  ev->add_option("--x0", x0_str, "initial state x1,..,xn (ones when omitted)");
  ev->add_option("--rollouts", rollouts)->check(CLI::PositiveNumber);

  // bound
  auto* bd = app.add_subcommand("bound", "lambda, Chernoff radius and ellipsoid coverage");
  std::string bd_system, bd_response;
  double eps = 0.1;
  double bd_eps_tol = ScenarioConfig().eps_tol;
  int draws = 100000;
  bd->add_option("--system", bd_system)->required()->check(CLI::ExistingFile);
  bd->add_option("--response", bd_response)->required()->check(CLI::ExistingFile);
  bd->add_option("--eps", eps, "ellipsoid risk level");
  bd->add_option("--eps-tol", bd_eps_tol, "residual tolerance for the 1 - lambda / eps_tol^2 level");
  bd->add_option("--draws", draws)->check(CLI::PositiveNumber);

  // sweep
  auto* sw = app.add_subcommand("sweep", "scenario-count experiment, CSV output");
  std::string config_path;
  bool no_timing = false;
  sw->add_option("--config", config_path, "experiment JSON (scalar example defaults when omitted)")
      ->check(CLI::ExistingFile);
  sw->add_flag("--no-timing", no_timing, "write solve_ms as 0 for byte-stable output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*id) {
      DataBatch batch = read_batch_csv(data_path);
      if (!alpha_str.empty()) batch.alpha = to_vector(parse_list(alpha_str));
      if (alpha_str.empty() && !estimate_alpha) {
        throw std::invalid_argument("identify needs --alpha or --estimate-alpha");
      }
      const MultNoiseSystem sys = identify(batch, estimate_alpha);
      if (!quiet) {
        std::cerr << "residual norm " << residual_check(batch, sys.A0, sys.B0).norm() << "\n";
      }
      emit(system_to_json(sys), out, quiet);
    } else if (*syn) {
      const MultNoiseSystem sys = system_from_json(import_json(system_path));
      const CostModel cost = cost_from_json(import_json(cost_path), sys, horizon);
      if (mode == "nominal") {
        const NominalSolution sol = nominal_sls_solve(sys, cost, horizon);
        nlohmann::json j;
        j["response"] = response_to_json(sol.response);
        j["controller"] = blt_to_json(controller_from_response(sol.response));
        j["objective"] = sol.objective;
        j["rank_deficient"] = sol.rank_deficient;
        emit(j, out, quiet);
      } else {
        scfg.seed = seed;
        scfg.N = scenarios;
        const SynthesisResult res = solve_p7(sys, cost, horizon, scfg);
        if (!quiet) {
          std::cerr << "status " << to_string(res.qp_status) << ", N " << res.N << " (bound "
                    << res.N_required << "), alpha " << res.alpha << "\n";
          if (res.qp_status == QpStatus::kInfeasible) {
            std::cerr << "infeasible at eps_tol " << res.eps_tol << "; feasible from eps_tol "
                      << res.eps_tol_used << "\n";
          }
        }
        emit(synthesis_to_json(res), out, quiet);
        if (res.qp_status == QpStatus::kInfeasible) return 2;
      }
    } else if (*ev) {
      const MultNoiseSystem sys = system_from_json(import_json(ev_system));
      const BltOperator K = load_controller(ev_controller);
      Matrix Q = Matrix::Identity(sys.n(), sys.n()), R = Matrix::Identity(sys.m(), sys.m());
      if (!ev_cost.empty()) {
        const nlohmann::json c = import_json(ev_cost);
        Q = matrix_from_json(c.at("Q"));
        R = matrix_from_json(c.at("R"));
      }
      const Vector x0 = x0_str.empty() ? Vector(Vector::Ones(sys.n())) : to_vector(parse_list(x0_str));
      const EvalReport rep = evaluate(sys, K, Q, R, x0, rollouts, seed);
      emit(eval_to_json(rep), out, quiet);
    } else if (*bd) {
      const MultNoiseSystem sys = system_from_json(import_json(bd_system));
      const SystemResponse resp = load_response(bd_response);
      const int T = resp.phi_x.horizon();
      const BltOperator K = controller_from_response(resp);
      const Matrix theta = build_theta(K, sys, T).theta;
      const double lam = lambda_bound(theta, sys, T, LambdaMethod::kClosedForm);
      const double radius = chernoff_radius(std::max(sys.n_delta(), 1), eps);
      // Coverage of the one-step state ellipsoid at x0 = ones under K^{0,0}.
      const Matrix K0 = K.block(0, 0);
      const Vector x = Vector::Ones(sys.n());
      const Vector w = Vector::Zero(sys.n());
      const EllipsoidSet set = state_ellipsoid(sys, K0, x, w, eps);
      std::mt19937_64 rng(seed);
      int inside = 0;
      for (int k = 0; k < draws; ++k) {
        const Matrix d = sample_deltas(sys, 1, rng);
        if (set.contains(step(sys, x, K0 * x, d.row(0).transpose(), w))) ++inside;
      }
      nlohmann::json j{{"lambda", lam},
                       {"lambda_level", 1.0 - lam / (bd_eps_tol * bd_eps_tol)},
                       {"eps_tol", bd_eps_tol},
                       {"chernoff_radius", radius},
                       {"eps", eps},
                       {"coverage", static_cast<double>(inside) / draws},
                       {"draws", draws}};
      emit(j, out, quiet);
    } else if (*sw) {
      ExperimentConfig cfg = config_path.empty() ? experiment_from_json(nlohmann::json::object())
                                                 : experiment_from_json(import_json(config_path));
      if (app.get_option("--seed")->count() > 0) cfg.sweep.master_seed = seed;
      cfg.sweep.record_timing = !no_timing;
      const SweepReport rep = experiment_sweep(cfg.system, cfg.cost, cfg.horizon, cfg.scenario, cfg.sweep);
      if (!out.empty()) {
        export_csv(rep, out);
        if (!quiet) std::cerr << "wrote " << out << "\n";
      } else {
        std::cout << sweep_csv(rep);
      }
      if (!quiet) {
        for (const SweepAggregate& a : rep.aggregate()) {
          std::cerr << "N " << a.N << ": mean " << a.mean_of_means << " [" << a.q10_of_means << ", "
                    << a.q90_of_means << "], band " << a.mean_band << "\n";
        }
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
