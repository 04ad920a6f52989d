#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include "json.hpp"
#include <string>
#include <vector>

#include "rng.hpp"

namespace marketfx::model {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class TreatmentKind { Binary, Continuous };

// Parameters of a continuous (local-perturbation) treatment: units receive
// w = eta +/- xi_n with xi_n = xi_scale * n^(-xi_exponent).
struct ContinuousTreatment {
  double eta = 0.0;
  double xi_scale = 1.0;
  double xi_exponent = 1.0 / 3.0;
};

// One sampled agent: latent randomness plus evaluable structural functions.
// `w` is the treatment value this unit would receive (0/1 for binary
// scenarios, a subsidy level for continuous ones); `p` is the J-dim price the
// unit faces (market price plus its own perturbation).
struct UnitDraw {
  std::vector<double> latent;
  std::function<double(double w, const Vec& p)> outcome;
  std::function<Vec(double w, const Vec& p)> demand;
  std::function<Vec(double w, const Vec& p)> supply;

  // For step-function scenarios: the prices in coordinate `j` at which some
  // indicator of this unit flips, holding the other coordinates of `p` fixed
  // (the entry p[j] itself is ignored).  Null for smooth scenarios.
  std::function<std::vector<double>(int j, double w, const Vec& p)> thresholds;

  Vec excess(double w, const Vec& p) const { return demand(w, p) - supply(w, p); }
};

// A market blueprint: agent type distribution, number of goods, price box,
// treatment semantics, and (for built-ins) closed-form mean-field functions.
struct Scenario {
  std::string id;
  int num_goods = 1;
  Vec price_lower, price_upper;
  TreatmentKind treatment_kind = TreatmentKind::Binary;
  ContinuousTreatment continuous;
  nlohmann::json params;

  // true iff unit demand/supply are step functions of price
  bool has_breakpoints = true;

  std::function<UnitDraw(Rng&)> sampler;

  // Mean-field structural functions: expected demand/supply/outcome at
  // treatment value w and price p.  Exact closed forms for built-ins;
  // Monte Carlo integration for custom scenarios.
  std::function<Vec(double w, const Vec& p)> mf_demand;
  std::function<Vec(double w, const Vec& p)> mf_supply;
  std::function<double(double w, const Vec& p)> mf_outcome;
};

struct Population {
  std::string scenario_id;
  std::uint64_t seed = 0;
  int num_goods = 1;
  Vec price_lower, price_upper;
  bool has_breakpoints = true;
  std::vector<UnitDraw> units;

  int n() const { return static_cast<int>(units.size()); }
};

// Built-in ids: "tech-intervention", "goat-hay-subsidy", "smooth-logistic".
// Unknown ids and out-of-range parameters raise std::invalid_argument.
Scenario make_scenario(const std::string& id, const nlohmann::json& params = nlohmann::json::object());

// Validate a user-supplied (custom) scenario: box ordering, exponent range,
// and the Assumption-3 boundary signs / nonnegativity probed on a grid of
// sampled units.  Throws std::invalid_argument on violation.
void validate_scenario(const Scenario& scenario, int probe_units = 64, int grid_points = 50);

Population sample_population(const Scenario& scenario, int n, std::uint64_t seed);

}  // namespace marketfx::model
