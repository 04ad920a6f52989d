#include "montecarlo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <sstream>
#include <thread>

namespace marketfx::montecarlo {

namespace {

struct RepRow {
  EstimateReport report;
  int resamples = 0;
};

double mean_of(const std::vector<double>& xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / xs.size();
}

double sd_of(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / (xs.size() - 1));
}

EstimandStats make_stats(const std::string& name, const std::vector<double>& xs, double truth,
                         double cov = std::numeric_limits<double>::quiet_NaN()) {
  EstimandStats s;
  s.name = name;
  s.truth = truth;
  s.mean = mean_of(xs);
  s.sd = sd_of(xs, s.mean);
  s.bias_est_minus_truth = s.mean - truth;
  s.bias_truth_minus_est = truth - s.mean;
  s.coverage = cov;
  s.mc_standard_error = s.sd / std::sqrt(static_cast<double>(xs.size()));
  return s;
}

bool wanted(const ReplicationPlan& plan, const std::string& name) {
  if (plan.estimands.empty()) return true;
  return std::find(plan.estimands.begin(), plan.estimands.end(), name) != plan.estimands.end();
}

}  // namespace

double coverage(const std::vector<std::array<double, 2>>& intervals, double truth) {
  if (intervals.empty()) throw std::invalid_argument("coverage needs at least one interval");
  int hits = 0;
  for (const auto& ci : intervals)
    if (ci[0] <= truth && truth <= ci[1]) ++hits;
  return static_cast<double>(hits) / intervals.size();
}

MonteCarloSummary run_replications(const ReplicationPlan& plan,
                                   const std::function<void(int, const EstimateReport&)>& sink) {
  if (plan.num_reps < 1) throw std::invalid_argument("num_reps must be at least 1");
  experiment::validate_design(plan.design);

  const bool continuous = plan.scenario.treatment_kind == model::TreatmentKind::Continuous;

  // truth oracle, computed once up front
  MonteCarloSummary out;
  out.scenario_id = plan.scenario.id;
  out.n = plan.n;
  out.num_reps = plan.num_reps;
  out.base_seed = plan.base_seed;
  out.pi = plan.design.pi;
  out.h_n = plan.design.h_n(plan.n);
  out.xi_n = continuous ? plan.design.xi_n(plan.n) : 0.0;
  out.truth_source = plan.scenario.id == "tech-intervention" ? "closed-form" : "numeric-oracle";
  {
    Scenario oracle_sc = plan.scenario;
    if (continuous) oracle_sc.continuous.eta = plan.design.eta;
    out.truth = equilibrium::true_effects(oracle_sc, plan.design.pi, plan.solver);
  }

  const int max_failures = std::max(1, plan.num_reps / 100);
  std::vector<RepRow> rows(plan.num_reps);
  std::atomic<int> next{0};
  std::atomic<int> failures{0};
  std::atomic<bool> aborted{false};
  std::string first_error;
  std::mutex error_mutex;

  auto worker = [&]() {
    while (!aborted.load()) {
      const int r = next.fetch_add(1);
      if (r >= plan.num_reps) break;
      // resample with fresh sub-seeds on failure, counting each failure
      for (int attempt = 0;; ++attempt) {
        const std::uint64_t seed =
            derive_seed(derive_seed(plan.base_seed, static_cast<std::uint64_t>(r)),
                        static_cast<std::uint64_t>(attempt));
        try {
          const auto ds =
              experiment::run_experiment(plan.scenario, plan.n, plan.design, seed, plan.solver);
          rows[r].report = estimators::estimate(ds, plan.level);
          rows[r].resamples = attempt;
          break;
        } catch (const std::exception& e) {
          if (failures.fetch_add(1) + 1 > max_failures) {
            {
              std::lock_guard<std::mutex> lock(error_mutex);
              if (first_error.empty()) first_error = e.what();
            }
            aborted.store(true);
            break;
          }
        }
      }
    }
  };

  int nthreads = plan.threads > 0 ? plan.threads
                                  : static_cast<int>(std::thread::hardware_concurrency());
  nthreads = std::max(1, std::min(nthreads, plan.num_reps));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (aborted.load())
    throw std::runtime_error("more than 1% of replications failed; last error: " + first_error);
  out.failed_rep_count = failures.load();

  if (sink)
    for (int r = 0; r < plan.num_reps; ++r) sink(r, rows[r].report);

  // aggregate in replication order (schedule-invariant)
  auto column = [&](auto&& get) {
    std::vector<double> xs(plan.num_reps);
    for (int r = 0; r < plan.num_reps; ++r) xs[r] = get(rows[r].report);
    return xs;
  };

  if (!continuous) {
    if (wanted(plan, "ADE")) {
      std::vector<std::array<double, 2>> cis(plan.num_reps);
      for (int r = 0; r < plan.num_reps; ++r) cis[r] = rows[r].report.ci_ade;
      out.stats.push_back(make_stats("ADE",
                                     column([](const EstimateReport& e) { return e.tau_ade_hat; }),
                                     out.truth.tau_ade_star,
                                     coverage(cis, out.truth.tau_ade_star)));
    }
    if (wanted(plan, "AIE")) {
      std::vector<std::array<double, 2>> cis(plan.num_reps);
      for (int r = 0; r < plan.num_reps; ++r) cis[r] = rows[r].report.ci_aie;
      out.stats.push_back(make_stats("AIE",
                                     column([](const EstimateReport& e) { return e.tau_aie_hat; }),
                                     out.truth.tau_aie_star,
                                     coverage(cis, out.truth.tau_aie_star)));
    }
  } else {
    if (wanted(plan, "MPE"))
      out.stats.push_back(make_stats("MPE",
                                     column([](const EstimateReport& e) { return e.tau_mpe_hat; }),
                                     out.truth.tau_mpe_star));
    if (wanted(plan, "DPE"))
      out.stats.push_back(make_stats("DPE",
                                     column([](const EstimateReport& e) { return e.tau_dpe_hat; }),
                                     out.truth.tau_dpe_star));
    if (wanted(plan, "IPE"))
      out.stats.push_back(make_stats("IPE",
                                     column([](const EstimateReport& e) { return e.tau_ipe_hat; }),
                                     out.truth.tau_ipe_star));
    for (int j = 0; j < plan.scenario.num_goods; ++j) {
      const std::string name = "dp_deta_" + std::to_string(j + 1);
      if (!wanted(plan, name)) continue;
      out.stats.push_back(make_stats(
          name, column([j](const EstimateReport& e) { return e.dpdeta_hat[j]; }),
          out.truth.dpdpi[j]));
    }
  }
  return out;
}

std::pair<std::vector<double>, std::vector<double>> density_data(
    const std::vector<double>& estimates, double bandwidth) {
  const int n = static_cast<int>(estimates.size());
  if (n < 2) throw std::invalid_argument("density estimation needs at least 2 points");
  const double mean = mean_of(estimates);
  const double sd = sd_of(estimates, mean);
  if (!(sd > 0.0)) throw std::invalid_argument("density estimation needs non-degenerate input");

  double bw = bandwidth;
  if (bw <= 0.0) {
    // Silverman's rule of thumb
    std::vector<double> sorted = estimates;
    std::sort(sorted.begin(), sorted.end());
    const double q1 = sorted[static_cast<int>(0.25 * (n - 1))];
    const double q3 = sorted[static_cast<int>(0.75 * (n - 1))];
    const double spread = std::min(sd, (q3 - q1) / 1.34);
    bw = 0.9 * (spread > 0.0 ? spread : sd) * std::pow(n, -0.2);
  }

  const auto [lo_it, hi_it] = std::minmax_element(estimates.begin(), estimates.end());
  const double lo = *lo_it - 3.0 * bw, hi = *hi_it + 3.0 * bw;
  const int grid_size = 512;
  std::vector<double> grid(grid_size), dens(grid_size, 0.0);
  const double norm = 1.0 / (n * bw * std::sqrt(2.0 * M_PI));
  for (int g = 0; g < grid_size; ++g) {
    grid[g] = lo + (hi - lo) * g / (grid_size - 1);
    double acc = 0.0;
    for (double x : estimates) {
      const double t = (grid[g] - x) / bw;
      acc += std::exp(-0.5 * t * t);
    }
    dens[g] = norm * acc;
  }
  return {grid, dens};
}

nlohmann::json summary_to_json(const MonteCarloSummary& s) {
  nlohmann::json j;
  j["scenario"] = s.scenario_id;
  j["n"] = s.n;
  j["num_reps"] = s.num_reps;
  j["base_seed"] = s.base_seed;
  j["pi"] = s.pi;
  j["h_n"] = s.h_n;
  if (s.xi_n > 0.0) j["xi_n"] = s.xi_n;
  j["truth_source"] = s.truth_source;
  j["failed_rep_count"] = s.failed_rep_count;
  j["p_star"] = std::vector<double>(s.truth.p_star.data(),
                                    s.truth.p_star.data() + s.truth.p_star.size());
  j["estimands"] = nlohmann::json::array();
  for (const auto& st : s.stats) {
    nlohmann::json row;
    row["name"] = st.name;
    row["truth"] = st.truth;
    row["mean"] = st.mean;
    row["sd"] = st.sd;
    row["bias_est_minus_truth"] = st.bias_est_minus_truth;
    row["bias_truth_minus_est"] = st.bias_truth_minus_est;
    if (std::isfinite(st.coverage)) row["coverage"] = st.coverage;
    row["mc_standard_error"] = st.mc_standard_error;
    j["estimands"].push_back(row);
  }
  return j;
}

std::string summary_to_csv(const MonteCarloSummary& s) {
  std::ostringstream out;
  out.precision(17);
  out << "estimand,truth,mean,sd,bias_est_minus_truth,bias_truth_minus_est,coverage,"
         "mc_standard_error\n";
  for (const auto& st : s.stats) {
    out << st.name << ',' << st.truth << ',' << st.mean << ',' << st.sd << ','
        << st.bias_est_minus_truth << ',' << st.bias_truth_minus_est << ',';
    if (std::isfinite(st.coverage)) out << st.coverage;
    out << ',' << st.mc_standard_error << "\n";
  }
  return out.str();
}

}  // namespace marketfx::montecarlo
