// Acceptance run: one line per criterion, "criterion k: PASS|FAIL ...".
// Exits non-zero when a criterion fails, unless it is listed in
// --allow-fail (a documented limitation); the line still reads FAIL.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "delqg/h2.hpp"
#include "support.hpp"

using namespace delqg;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

std::vector<Problem> random_set(int count, double tau) {
  std::vector<Problem> out;
  for (int s = 1; s <= count; ++s) out.push_back(testing::random_instance(s, tau));
  return out;
}

// Largest step not above `target` that divides τ.
double dividing_step(double tau, double target) {
  if (tau <= 0.0) return target;
  return tau / std::ceil(tau / target - 1e-9);
}

Outcome zero_delay_reduction() {
  double worst = 0.0;
  for (const Problem& pr : random_set(10, 0.0)) {
    const DecentralizedController a = synthesize_all(pr.plant, pr.topology, 0.0);
    const DecentralizedController b = limit_zero_delay(pr.plant, pr.topology);
    for (double w : log_grid(1e-2, 1e2, 20)) {
      worst = std::max(worst,
                       relative_difference(controller_response(pr.plant, a, w),
                                           controller_response(pr.plant, b, w)));
    }
  }
  return {worst <= 1e-6, "max relative difference " + fmt(worst)};
}

Outcome infinite_delay_limit() {
  // Chain of three agents; agents 0 and 1 have strict descendants.
  const std::vector<AgentDims> dims(3, AgentDims{2, 1, 1, 3});
  const Topology top = Topology::chain(3);
  int total = 0, passed = 0;
  double worst_final = 0.0;
  std::ostringstream fails;
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const Problem pr = random_problem(seed, dims, top, 0.0);
    const DecentralizedController Kinf = limit_infinite_delay(pr.plant);
    for (int i = 0; i < 2; ++i) {
      if (op_norm(pr.plant.agent(i).A) < 1.0) continue;
      const MatrixXd& Finf = Kinf.agents[static_cast<std::size_t>(i)].F;
      double prev = std::numeric_limits<double>::infinity(), last = prev;
      bool monotone = true;
      double tau = 0.25;
      for (;; tau += 0.25) {
        double err = 0.0;
        try {
          const AgentController c = synthesize_agent(pr.plant, top, tau, i);
          MatrixXd E = MatrixXd::Zero(c.F.rows(), Finf.cols());
          E(c.own_inputs, Eigen::all) = Finf;
          err = (c.F(Eigen::all, c.own_states()) - E).norm() / Finf.norm();
        } catch (const Error&) {
          break;  // conditioning cap reached
        }
        if (err > prev) monotone = false;
        prev = last = err;
      }
      ++total;
      worst_final = std::max(worst_final, last);
      if (monotone && last <= 1e-3) {
        ++passed;
      } else {
        fails << " s" << seed << "/a" << i << "(τ=" << tau - 0.25
              << ",err=" << fmt(last) << (monotone ? "" : ",non-monotone") << ")";
      }
    }
  }
  return {passed == total, std::to_string(passed) + "/" + std::to_string(total) +
                               " instances reach 1e-3 before the cap" +
                               (passed == total ? "" : "; failing:" + fails.str())};
}

Outcome structure() {
  std::vector<Problem> set{testing::four_agent_instance(1, 0.2)};
  for (Problem& pr : random_set(10, 0.2)) set.push_back(std::move(pr));
  int checks = 0, failed = 0;
  for (const Problem& pr : set) {
    const ClosedLoopModel m = discretize(
        pr.plant, synthesize_all(pr.plant, pr.topology, 0.2), 0.02);
    for (int i = 0; i < pr.plant.agents(); ++i) {
      for (int j = 0; j < pr.plant.agents(); ++j) {
        ++checks;
        if (!structure_check(m, pr.topology, i, j).passed) ++failed;
      }
    }
  }
  return {failed == 0, std::to_string(checks - failed) + "/" +
                           std::to_string(checks) + " (i, j) pairs"};
}

Outcome response_equivalence() {
  double worst = 0.0;
  for (const Problem& pr : random_set(10, 0.3)) {
    worst = std::max(worst, response_match(pr.plant, pr.topology, 0.3,
                                           log_grid(1e-2, 1e2, 20)));
  }
  return {worst <= 1e-6, "max relative difference " + fmt(worst)};
}

Outcome stability() {
  std::vector<Problem> set{testing::four_agent_instance(2, 0.1)};
  for (Problem& pr : random_set(10, 0.1)) set.push_back(std::move(pr));
  double worst = 0.0;
  for (const Problem& pr : set) {
    const DecentralizedController K = synthesize_all(pr.plant, pr.topology, 0.1);
    const double h = dividing_step(0.1, 1e-3 * slowest_time_constant(pr.plant, K));
    worst = std::max(worst, spectral_radius(augment(discretize(pr.plant, K, h)).Ad));
  }
  return {worst < 1.0, "max ρ(Ad) = 1 − " + fmt(1.0 - worst)};
}

Outcome cost_ordering() {
  const std::vector<double> taus{0.0, 0.1, 0.2, 0.3, 0.4};
  const double h = 0.01;
  int violations = 0;
  double worst_slack_use = 0.0;
  for (const Problem& pr : random_set(5, 0.0)) {
    const std::vector<SweepRow> rows = cost_sweep(pr.plant, pr.topology, taus, h);
    double slack = 0.0;
    for (double tau : {0.0, 0.4}) {
      slack = std::max(slack, 10.0 * richardson(pr.plant,
                                                synthesize_all(pr.plant, pr.topology, tau),
                                                h).error);
    }
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const double lo = rows[k].centralized_ref - rows[k].cost;
      const double hi = rows[k].cost - rows[k].decoupled_ref;
      const double dec = k > 0 ? rows[k - 1].cost - rows[k].cost : 0.0;
      for (double v : {lo, hi, dec}) {
        if (v > slack) ++violations;
        if (v > 0.0) worst_slack_use = std::max(worst_slack_use, v / slack);
      }
    }
  }
  return {violations == 0, std::to_string(violations) +
                               " violations; largest excursion " +
                               fmt(worst_slack_use) + " × tolerance"};
}

Outcome optimality() {
  double worst = std::numeric_limits<double>::infinity();
  for (const Problem& pr : random_set(5, 0.2)) {
    const DecentralizedController K = synthesize_all(pr.plant, pr.topology, 0.2);
    worst = std::min(worst,
                     perturbation_check(pr.plant, K, 0.005, 1e-4, 10, 7).min_change());
  }
  return {worst >= -1e-6, "min relative cost change " + fmt(worst)};
}

Outcome numerics() {
  // `floor` is the cancellation error ε‖e^{Hτ}‖‖e^{−Hτ}‖ of the block with the
  // largest tail; the literal two-term response cannot resolve less.
  double care = 0.0, symp = 0.0, tail = 0.0, floor = 0.0;
  for (double tau : {0.3, 1.0}) {
    std::vector<Problem> set{testing::four_agent_instance(3, tau)};
    for (Problem& pr : random_set(10, tau)) set.push_back(std::move(pr));
    for (const Problem& pr : set) {
      for (const AgentController& c :
           synthesize_all(pr.plant, pr.topology, tau).agents) {
        care = std::max({care, c.regulator_residual, c.estimator_residual});
        symp = std::max(symp, c.symplectic_error);
        const double t = std::max(c.fir_u.tail_ratio(), c.fir_b.tail_ratio());
        if (t > tail) {
          tail = t;
          const MatrixXd Ht = c.fir_u.A * tau;
          floor = std::numeric_limits<double>::epsilon() *
                  op_norm(expm(Ht)) * op_norm(expm(MatrixXd(-Ht)));
        }
      }
    }
  }
  return {care <= 1e-8 && symp <= 1e-8 && tail <= 1e-9,
          "CARE " + fmt(care) + ", symplectic " + fmt(symp) + ", FIR tail " +
              fmt(tail) + " (cancellation floor " + fmt(floor) + ")"};
}

Outcome cross_method() {
  const double h = 0.02;
  int ok = 0;
  double worst = 0.0;
  std::vector<Problem> set{testing::four_agent_instance(4, 0.2)};
  for (Problem& pr : random_set(4, 0.2)) set.push_back(std::move(pr));
  for (const Problem& pr : set) {
    const ClosedLoopModel m =
        discretize(pr.plant, synthesize_all(pr.plant, pr.topology, 0.2), h);
    const AugmentedDiscreteLoop L = augment(m);
    const double exact = h2_norm(L);
    const int burn = default_burn_in(L);
    const MonteCarloResult mc =
        monte_carlo_cost(m, 30, burn * h + 600.0, burn, 1000);
    const double diff = std::abs(mc.cost - exact);
    worst = std::max(worst, diff / exact);
    if (diff <= 3.0 * mc.stderr_ && diff <= 0.05 * exact) ++ok;
  }
  return {ok == static_cast<int>(set.size()),
          std::to_string(ok) + "/" + std::to_string(set.size()) +
              " instances; max relative difference " + fmt(worst)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> allow, only;
  app.add_option("--allow-fail", allow,
                 "Criteria whose failure does not affect the exit status");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"zero-delay reduction", zero_delay_reduction},
      {"infinite-delay limit", infinite_delay_limit},
      {"structure", structure},
      {"agent realization matches aggregated form", response_equivalence},
      {"discrete closed-loop stability", stability},
      {"cost ordering", cost_ordering},
      {"optimality stationarity", optimality},
      {"numerics", numerics},
      {"Monte Carlo vs Lyapunov", cross_method},
  };
  const std::set<int> allowed(allow.begin(), allow.end());
  const std::set<int> selected(only.begin(), only.end());
  int hard_failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << id << ": " << (o.passed ? "PASS" : "FAIL")
              << "  " << criteria[k].first << "  (" << o.detail << ", "
              << fmt(secs) << " s)";
    if (!o.passed && allowed.count(id)) std::cout << "  [known limitation]";
    std::cout << std::endl;
    if (!o.passed && !allowed.count(id)) ++hard_failures;
  }
  return hard_failures == 0 ? 0 : 1;
}
