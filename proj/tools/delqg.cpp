// delqg: command-line front end for decentralized LQG synthesis with
// processing delay.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "delqg/h2.hpp"
#include "delqg/io.hpp"
#include "delqg/plant.hpp"
#include "delqg/simulation.hpp"
#include "delqg/synthesis.hpp"

namespace {

using namespace delqg;

// Exit codes, one per failure class.
enum Exit : int {
  kOk = 0,
  kCheckFailed = 1,
  kUsage = 2,
  kParse = 3,
  kDimension = 4,
  kRiccati = 5,
  kUnstable = 6,
  kConditioning = 7,
  kDiscretization = 8,
  kOtherError = 9,
  kInternal = 10,
};

constexpr const char* kExitHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  1  a validation or verification check failed\n"
    "  2  command-line usage error\n"
    "  3  malformed input file (message names the JSON path)\n"
    "  4  dimension, index or graph error\n"
    "  5  Riccati equation has no stabilizing solution\n"
    "  6  closed loop unstable or simulation diverged\n"
    "  7  conditioning limit (delay too large, singular Sigma22 or resolvent,\n"
    "     overflow)\n"
    "  8  step size: tau/h not an integer or h too large\n"
    "  9  other toolkit error\n"
    " 10  internal error\n"
    "Environment: DELQG_THREADS caps the number of worker threads.\n";

int exit_code(const std::exception_ptr& p) {
  try {
    std::rethrow_exception(p);
  } catch (const ParseError&) {
    return kParse;
  } catch (const DimensionMismatch&) {
    return kDimension;
  } catch (const IndexOutOfRange&) {
    return kDimension;
  } catch (const UnsortedSubset&) {
    return kDimension;
  } catch (const NotASubset&) {
    return kDimension;
  } catch (const InfeasibleDims&) {
    return kDimension;
  } catch (const NoStabilizingSolution&) {
    return kRiccati;
  } catch (const NotSchurStable&) {
    return kUnstable;
  } catch (const Divergence&) {
    return kUnstable;
  } catch (const DelayTooLarge&) {
    return kConditioning;
  } catch (const SingularSigma22&) {
    return kConditioning;
  } catch (const SingularResolvent&) {
    return kConditioning;
  } catch (const Overflow&) {
    return kConditioning;
  } catch (const NonIntegerDelayRatio&) {
    return kDiscretization;
  } catch (const StepTooLarge&) {
    return kDiscretization;
  } catch (const Error&) {
    return kOtherError;
  } catch (...) {
    return kInternal;
  }
}

std::string fmt(double v, int digits = 6) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

// Shortest round-trip decimal for CSV cells.
std::string exact(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) {
      throw CLI::ValidationError("list", "not a number: " + item);
    }
    out.push_back(v);
  }
  return out;
}

// Parses "n,m,p,pw" or "n,m,p" (pw = n + p).
AgentDims parse_dims(const std::string& text) {
  const std::vector<double> v = parse_list(text);
  if (v.size() != 3 && v.size() != 4) {
    throw CLI::ValidationError("--dims", "expected n,m,p or n,m,p,pw");
  }
  AgentDims d;
  d.n = static_cast<int>(v[0]);
  d.m = static_cast<int>(v[1]);
  d.p = static_cast<int>(v[2]);
  d.pw = v.size() == 4 ? static_cast<int>(v[3]) : d.n + d.p;
  return d;
}

// Adjacency as rows of 0/1 separated by ';', e.g. "010;001;000".
Topology parse_adjacency(const std::string& text, int N) {
  std::vector<std::string> rows;
  std::stringstream ss(text);
  std::string row;
  while (std::getline(ss, row, ';')) rows.push_back(row);
  if (static_cast<int>(rows.size()) != N) {
    throw CLI::ValidationError("--adjacency", "expected " + std::to_string(N) +
                                                  " rows");
  }
  BoolMatrix a(N, N);
  for (int i = 0; i < N; ++i) {
    if (static_cast<int>(rows[static_cast<std::size_t>(i)].size()) != N) {
      throw CLI::ValidationError("--adjacency", "row length mismatch");
    }
    for (int j = 0; j < N; ++j) {
      const char c = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (c != '0' && c != '1') {
        throw CLI::ValidationError("--adjacency", "entries must be 0 or 1");
      }
      a(i, j) = c == '1';
    }
  }
  return Topology(std::move(a));
}

// Largest h ≤ target dividing τ.
double default_step(double tau, double target = 0.01) {
  if (tau <= 0.0) return target;
  return tau / std::max(1.0, std::ceil(tau / target - 1e-9));
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
  } else {
    write_text_file(path, text);
  }
}

void print_warnings(const ClosedLoopModel& m) {
  for (const std::string& w : m.warnings) std::cerr << "warning: " << w << "\n";
}

// ---------------------------------------------------------------------------
// Commands

struct GenArgs {
  int agents = 4;
  std::vector<std::string> dims{"2,1,1"};
  std::string graph = "chain";
  std::string adjacency;
  double tau = 0.1;
  double margin = 0.1;
  int q = 0;
  bool hex = false;
  std::string out;
};

int cmd_gen(const GenArgs& a, std::uint64_t seed) {
  std::vector<AgentDims> dims;
  if (a.dims.size() == 1) {
    dims.assign(static_cast<std::size_t>(a.agents), parse_dims(a.dims.front()));
  } else if (static_cast<int>(a.dims.size()) == a.agents) {
    for (const auto& d : a.dims) dims.push_back(parse_dims(d));
  } else {
    throw CLI::ValidationError("--dims", "give one entry for all agents or one per agent");
  }
  const Topology t = a.adjacency.empty() ? topology_preset(a.graph, a.agents)
                                         : parse_adjacency(a.adjacency, a.agents);
  GeneratorOptions go;
  go.hurwitz_margin = a.margin;
  go.q = a.q;
  const Problem pr = random_problem(seed, dims, t, a.tau, go);
  emit(a.out, problem_to_json(pr, a.hex ? Encoding::kHex : Encoding::kDecimal)
                  .dump(2));
  return kOk;
}

int cmd_validate(const std::string& path) {
  const Problem pr = read_problem(path);
  const AssumptionReport rep = validate_assumptions(pr.plant, pr.topology);
  for (const Check& c : rep.checks) {
    std::cout << (c.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(32)
              << c.name << " " << fmt(c.value);
    if (!c.detail.empty()) std::cout << "  " << c.detail;
    std::cout << "\n";
  }
  std::cout << (rep.passed() ? "assumptions hold\n" : "assumptions violated\n");
  return rep.passed() ? kOk : kCheckFailed;
}

struct SynthArgs {
  std::string problem;
  std::string out;
  std::string limit;
  std::string coupling = "local";
  double tau = -1.0;
  double kernel_step = 0.0;
  bool hex = false;
};

DecentralizedController synthesize(const Problem& pr, const SynthArgs& a) {
  SynthesisOptions o;
  o.coupling = a.coupling == "shared" ? AncestorCoupling::kSharedInnovation
                                      : AncestorCoupling::kLocalModel;
  const double tau = a.tau >= 0.0 ? a.tau : pr.tau;
  if (a.limit == "zero") return limit_zero_delay(pr.plant, pr.topology, o);
  if (a.limit == "infinite") return limit_infinite_delay(pr.plant, o);
  return synthesize_all(pr.plant, pr.topology, tau, o);
}

int cmd_synth(const SynthArgs& a) {
  const Problem pr = read_problem(a.problem);
  const DecentralizedController K = synthesize(pr, a);
  ControllerExportOptions eo;
  eo.encoding = a.hex ? Encoding::kHex : Encoding::kDecimal;
  eo.kernel_step = a.kernel_step;
  emit(a.out, controller_to_json(K, eo).dump(2));
  for (const AgentController& c : K.agents) {
    std::cerr << "agent " << c.agent << ": states " << c.state_dim()
              << ", regulator residual " << fmt(c.regulator_residual, 3)
              << ", estimator residual " << fmt(c.estimator_residual, 3)
              << "\n";
  }
  return kOk;
}

struct EvalArgs {
  std::string problem, controller;
  double h = 0.0;
  std::string method = "lyap";
  int batches = 30;
  double horizon = 200.0;
  int burn_in = -1;
};

int cmd_eval(const EvalArgs& a, std::uint64_t seed) {
  const Problem pr = read_problem(a.problem);
  const DecentralizedController K = read_controller(a.controller);
  const double h = a.h > 0.0 ? a.h : default_step(K.tau);
  const ClosedLoopModel m = discretize(pr.plant, K, h);
  print_warnings(m);
  const AugmentedDiscreteLoop L = augment(m);
  if (a.method == "lyap") {
    std::cout << "cost " << exact(h2_norm(L)) << "\nstderr 0\n";
    return kOk;
  }
  const int burn = a.burn_in >= 0 ? a.burn_in : default_burn_in(L);
  const MonteCarloResult r =
      monte_carlo_cost(m, a.batches, a.horizon, burn, seed);
  std::cout << "cost " << exact(r.cost) << "\nstderr " << exact(r.stderr_)
            << "\n";
  return kOk;
}

struct SweepArgs {
  std::string problem;
  std::string taus;
  double h = 0.0;
  std::string method = "lyap";
  int batches = 30;
  double horizon = 200.0;
  std::string out;
};

int cmd_sweep(const SweepArgs& a, std::uint64_t seed) {
  const Problem pr = read_problem(a.problem);
  const std::vector<double> taus = parse_list(a.taus);
  if (taus.empty()) throw CLI::ValidationError("--tau-list", "empty list");
  const double h = a.h > 0.0 ? a.h : 0.01;
  SweepOptions o;
  o.method = a.method == "mc" ? CostMethod::kMonteCarlo : CostMethod::kLyapunov;
  o.batches = a.batches;
  o.horizon = a.horizon;
  o.seed = seed;
  const std::vector<SweepRow> rows =
      cost_sweep(pr.plant, pr.topology, taus, h, o);
  std::ostringstream os;
  os << "tau,cost,stderr,centralized,decoupled\n";
  for (const SweepRow& r : rows) {
    os << exact(r.tau) << "," << exact(r.cost) << "," << exact(r.stderr_) << ","
       << exact(r.centralized_ref) << "," << exact(r.decoupled_ref) << "\n";
  }
  emit(a.out, os.str());
  return kOk;
}

struct SimArgs {
  std::string problem, controller;
  double h = 0.0;
  double horizon = 10.0;
  bool no_noise = false;
  std::string out;
};

int cmd_sim(const SimArgs& a, std::uint64_t seed) {
  const Problem pr = read_problem(a.problem);
  const DecentralizedController K = read_controller(a.controller);
  const double h = a.h > 0.0 ? a.h : default_step(K.tau);
  const ClosedLoopModel m = discretize(pr.plant, K, h);
  print_warnings(m);
  SimulationOptions so;
  so.seed = seed;
  so.noise = !a.no_noise;
  const SimulationTrace tr = simulate(m, a.horizon, so);
  std::ostringstream os;
  os << "t";
  auto header = [&](const char* name, Eigen::Index n) {
    for (Eigen::Index k = 0; k < n; ++k) os << "," << name << k;
  };
  if (tr.steps() > 0) {
    header("x", tr.x[0].size());
    header("u", tr.u[0].size());
    header("y", tr.y[0].size());
    header("z", tr.z[0].size());
  }
  os << ",running_cost\n";
  for (int k = 0; k < tr.steps(); ++k) {
    const auto s = static_cast<std::size_t>(k);
    os << exact(tr.t[s]);
    for (const VectorXd* v : {&tr.x[s], &tr.u[s], &tr.y[s], &tr.z[s]}) {
      for (Eigen::Index j = 0; j < v->size(); ++j) os << "," << exact((*v)(j));
    }
    os << "," << exact(tr.running_cost[s]) << "\n";
  }
  emit(a.out, os.str());
  if (!a.out.empty() && a.out != "-") {
    Json meta{{"h", h},
              {"tau", K.tau},
              {"d", m.d},
              {"steps", tr.steps()},
              {"seed", seed},
              {"noise", !a.no_noise},
              {"problem", a.problem},
              {"controller", a.controller},
              {"empirical_cost", empirical_cost(tr, 0)}};
    write_text_file(a.out + ".json", meta.dump(2));
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// verify

struct Row {
  std::string name;
  bool passed;
  std::string detail;
};

int cmd_verify(const std::string& path, double h_arg, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const Problem pr = read_problem(path);
  const FourBlockPlant& P = pr.plant;
  const double tau = pr.tau;
  const double h = h_arg > 0.0 ? h_arg : default_step(tau);
  std::vector<Row> rows;
  auto add = [&](std::string name, bool ok, std::string detail) {
    rows.push_back({std::move(name), ok, std::move(detail)});
  };

  const AssumptionReport rep = validate_assumptions(P, pr.topology);
  int failed_checks = 0;
  for (const Check& c : rep.checks) failed_checks += !c.passed;
  add("assumptions", rep.passed(),
      std::to_string(rep.checks.size() - failed_checks) + "/" +
          std::to_string(rep.checks.size()) + " checks");

  const DecentralizedController K = synthesize_all(P, pr.topology, tau);
  double worst_res = 0.0, worst_symp = 0.0, worst_tail = 0.0;
  for (const AgentController& c : K.agents) {
    worst_res = std::max({worst_res, c.regulator_residual, c.estimator_residual});
    worst_symp = std::max(worst_symp, c.symplectic_error);
    worst_tail = std::max({worst_tail, c.fir_u.tail_ratio(), c.fir_b.tail_ratio()});
  }
  add("care residuals", worst_res <= 1e-8, "max " + fmt(worst_res, 3));
  add("symplectic flow", worst_symp <= 1e-8, "max " + fmt(worst_symp, 3));
  add("fir support", worst_tail <= 1e-9, "tail/peak " + fmt(worst_tail, 3));

  const ClosedLoopModel m = discretize(P, K, h);
  print_warnings(m);
  const AugmentedDiscreteLoop L = augment(m);
  const double rho = spectral_radius(L.Ad);
  add("discrete stability", rho < 1.0, "rho " + fmt(rho, 8));

  int structure_fail = 0;
  const int N = P.agents();
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      structure_fail += !structure_check(m, pr.topology, i, j).passed;
    }
  }
  add("structure", structure_fail == 0,
      std::to_string(N * N - structure_fail) + "/" + std::to_string(N * N) +
          " pairs");

  const std::vector<double> grid = log_grid(1e-2, 1e2, 20);
  const double match = response_match(P, pr.topology, tau, grid);
  add("response match", match <= 1e-6, "max rel " + fmt(match, 3));

  const DecentralizedController K0 = synthesize_all(P, pr.topology, 0.0);
  const DecentralizedController Kz = limit_zero_delay(P, pr.topology);
  double zero_diff = 0.0;
  for (double w : grid) {
    zero_diff = std::max(zero_diff,
                         relative_difference(controller_response(P, K0, w),
                                             controller_response(P, Kz, w)));
  }
  add("zero-delay limit", zero_diff <= 1e-6, "max rel " + fmt(zero_diff, 3));

  // Cost spot-check: centralized ≤ J(0) ≤ J(τ/2) ≤ J(τ) ≤ decoupled.
  const double hs = tau > 0.0 && std::abs(std::round(tau / (2 * h)) - tau / (2 * h)) > 1e-9
                        ? 0.5 * h
                        : h;
  const std::vector<double> taus =
      tau > 0.0 ? std::vector<double>{0.0, 0.5 * tau, tau}
                : std::vector<double>{0.0};
  SweepOptions so;
  so.seed = seed;
  const std::vector<SweepRow> sweep = cost_sweep(P, pr.topology, taus, hs, so);
  const RichardsonEstimate re = richardson(P, K, hs);
  const double slack = 10.0 * re.error;
  bool ordered = sweep.front().centralized_ref <= sweep.front().cost + slack &&
                 sweep.back().cost <= sweep.back().decoupled_ref + slack;
  for (std::size_t k = 1; k < sweep.size(); ++k) {
    ordered = ordered && sweep[k - 1].cost <= sweep[k].cost + slack;
  }
  std::ostringstream costs;
  costs << fmt(sweep.front().centralized_ref);
  for (const SweepRow& r : sweep) costs << " <= " << fmt(r.cost);
  costs << " <= " << fmt(sweep.back().decoupled_ref);
  add("cost ordering", ordered, costs.str());

  bool all = true;
  std::cout << std::left;
  for (const Row& r : rows) {
    all = all && r.passed;
    std::cout << (r.passed ? "PASS  " : "FAIL  ") << std::setw(20) << r.name
              << " " << r.detail << "\n";
  }
  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - start)
                          .count();
  std::cout << (all ? "all checks passed" : "some checks failed") << " ("
            << fmt(secs, 3) << " s, h = " << fmt(h) << ")\n";
  return all ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized LQG synthesis with processing delay"};
  app.footer(kExitHelp);
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed for random generation and Monte Carlo");

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Write a random problem file");
  g->add_option("-N,--agents", gen.agents, "Number of agents")->check(CLI::PositiveNumber);
  g->add_option("--dims", gen.dims,
                "Agent dims n,m,p[,pw]; one entry for all agents or one per agent")
      ->delimiter(' ');
  g->add_option("--graph", gen.graph,
                "Preset: chain, star, complete, disconnected, fig1");
  g->add_option("--adjacency", gen.adjacency,
                "Explicit adjacency rows, e.g. 010;001;000 (row i lists the "
                "agents i receives from)");
  g->add_option("--tau", gen.tau, "Processing delay")->check(CLI::NonNegativeNumber);
  g->add_option("--margin", gen.margin, "Minimum Hurwitz margin of each A_ii");
  g->add_option("--q", gen.q, "Cost output rows (default n + m)");
  g->add_flag("--hex", gen.hex, "Hex-float encoding (bit exact)");
  g->add_option("-o,--out", gen.out, "Output path (default stdout)");

  std::string validate_path;
  auto* v = app.add_subcommand("validate", "Check the standing assumptions");
  v->add_option("problem", validate_path, "Problem file")->required();

  SynthArgs syn;
  auto* s = app.add_subcommand("synth", "Synthesize the decentralized controller");
  s->add_option("problem", syn.problem, "Problem file")->required();
  s->add_option("-o,--out", syn.out, "Controller output path (default stdout)");
  s->add_option("--limit", syn.limit, "Emit a limit controller instead")
      ->check(CLI::IsMember({"zero", "infinite"}));
  s->add_option("--coupling", syn.coupling, "Ancestor coupling: local or shared")
      ->check(CLI::IsMember({"local", "shared"}));
  s->add_option("--tau", syn.tau, "Override the problem's delay");
  s->add_option("--kernel-step", syn.kernel_step,
                "Also export FIR kernels sampled at this step (must divide tau)");
  s->add_flag("--hex", syn.hex, "Hex-float encoding (bit exact)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Closed-loop cost of a controller");
  e->add_option("problem", ev.problem, "Problem file")->required();
  e->add_option("controller", ev.controller, "Controller file")->required();
  e->set_help_flag("--help", "Print this help message and exit");
  e->add_option("--h", ev.h, "Step size (default: about 0.01, dividing tau)");
  e->add_option("--method", ev.method, "lyap (exact discretized) or mc")
      ->check(CLI::IsMember({"lyap", "mc"}));
  e->add_option("--batches", ev.batches, "Monte Carlo batches")->check(CLI::PositiveNumber);
  e->add_option("--horizon", ev.horizon, "Monte Carlo run length per batch");
  e->add_option("--burn-in", ev.burn_in, "Discarded steps (default: 20 time constants)");

  SweepArgs sw;
  auto* sp = app.add_subcommand(
      "sweep",
      "Cost against delay, written as CSV with columns\n"
      "  tau,cost,stderr,centralized,decoupled\n"
      "where centralized is the zero-delay complete-graph cost and decoupled\n"
      "is the infinite-delay cost, both on the same step size");
  sp->add_option("problem", sw.problem, "Problem file")->required();
  sp->add_option("--tau-list", sw.taus, "Comma-separated delays")->required();
  sp->set_help_flag("--help", "Print this help message and exit");
  sp->add_option("--h", sw.h, "Step size; must divide every delay (default 0.01)");
  sp->add_option("--method", sw.method, "lyap or mc")
      ->check(CLI::IsMember({"lyap", "mc"}));
  sp->add_option("--batches", sw.batches, "Monte Carlo batches");
  sp->add_option("--horizon", sw.horizon, "Monte Carlo run length per batch");
  sp->add_option("-o,--out", sw.out, "CSV output path (default stdout)");

  SimArgs sim;
  auto* si = app.add_subcommand(
      "sim",
      "Simulate the closed loop, written as CSV with columns\n"
      "  t,x0..,u0..,y0..,z0..,running_cost\n"
      "(stacked over agents; a JSON sidecar <out>.json records the run)");
  si->add_option("problem", sim.problem, "Problem file")->required();
  si->add_option("controller", sim.controller, "Controller file")->required();
  si->set_help_flag("--help", "Print this help message and exit");
  si->add_option("--h", sim.h, "Step size (default: about 0.01, dividing tau)");
  si->add_option("--horizon", sim.horizon, "Simulated time");
  si->add_flag("--no-noise", sim.no_noise, "Zero process and measurement noise");
  si->add_option("-o,--out", sim.out, "CSV output path (default stdout)");

  std::string verify_path;
  double verify_h = 0.0;
  auto* ve = app.add_subcommand("verify", "Run the invariant suite on a problem");
  ve->add_option("problem", verify_path, "Problem file")->required();
  ve->set_help_flag("--help", "Print this help message and exit");
  ve->add_option("--h", verify_h, "Step size (default: about 0.01, dividing tau)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return cmd_gen(gen, seed);
    if (*v) return cmd_validate(validate_path);
    if (*s) return cmd_synth(syn);
    if (*e) return cmd_eval(ev, seed);
    if (*sp) return cmd_sweep(sw, seed);
    if (*si) return cmd_sim(sim, seed);
    if (*ve) return cmd_verify(verify_path, verify_h, seed);
  } catch (const CLI::ValidationError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_code(std::current_exception());
  }
  return kUsage;
}
