#pragma once

#include <array>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "estimators.hpp"

namespace marketfx::montecarlo {

using estimators::EstimateReport;
using experiment::Design;
using model::Scenario;
using model::Vec;

struct ReplicationPlan {
  Scenario scenario;
  Design design;
  int n = 2500;
  int num_reps = 1000;
  std::uint64_t base_seed = 1;
  int threads = 0;  // 0 = hardware concurrency
  double level = 0.95;
  // empty = all estimands applicable to the treatment kind
  std::vector<std::string> estimands;
  equilibrium::SolverSettings solver;
};

struct EstimandStats {
  std::string name;
  double truth = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  double bias_est_minus_truth = 0.0;
  double bias_truth_minus_est = 0.0;
  double coverage = std::numeric_limits<double>::quiet_NaN();  // NaN when no CI exists
  double mc_standard_error = 0.0;                              // sd / sqrt(num_reps)
};

struct MonteCarloSummary {
  std::string scenario_id;
  int n = 0;
  int num_reps = 0;
  std::uint64_t base_seed = 0;
  double pi = 0.5;
  double h_n = 0.0;
  double xi_n = 0.0;
  std::string truth_source;  // "closed-form" or "numeric-oracle"
  int failed_rep_count = 0;
  std::vector<EstimandStats> stats;
  equilibrium::MeanFieldSolution truth;

  const EstimandStats* find(const std::string& name) const {
    for (const auto& s : stats)
      if (s.name == name) return &s;
    return nullptr;
  }
};

// Runs num_reps seeded experiments (per-replication seed derived from
// base_seed and the replication index) and aggregates bias/sd/coverage
// against the mean-field oracle.  Deterministic for a given plan regardless
// of thread count.  Replications whose estimators fail (degenerate arms,
// singular first stage) are resampled with a fresh sub-seed; if more than 1%
// of num_reps fail, the run errors out.
//
// `sink`, when set, receives every accepted report in replication order
// after the parallel phase completes.
MonteCarloSummary run_replications(const ReplicationPlan& plan,
                                   const std::function<void(int, const EstimateReport&)>& sink = {});

// Fraction of intervals containing the truth.
double coverage(const std::vector<std::array<double, 2>>& intervals, double truth);

// Gaussian-kernel density on a 512-point grid spanning the data range plus
// 3 bandwidths on each side.  bandwidth <= 0 selects Silverman's rule.
std::pair<std::vector<double>, std::vector<double>> density_data(
    const std::vector<double>& estimates, double bandwidth = 0.0);

nlohmann::json summary_to_json(const MonteCarloSummary& summary);
std::string summary_to_csv(const MonteCarloSummary& summary);

}  // namespace marketfx::montecarlo
