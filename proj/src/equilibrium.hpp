#pragma once

#include <stdexcept>
#include <vector>

#include "model.hpp"

namespace marketfx::equilibrium {

using model::Mat;
using model::Population;
using model::Scenario;
using model::Vec;

struct SolverSettings {
  double tolerance = 1e-10;  // mean-field clearing residual (inf-norm)
  int max_iters = 2000;
  double damping = 0.5;  // lambda of the fixed-point map p <- p + lambda z(p)
  bool breakpoint_refinement = true;
};

// Thrown when an equilibrium solve does not converge; carries diagnostics.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& msg, Vec last_iterate, double residual, double contraction)
      : std::runtime_error(msg),
        last_iterate(std::move(last_iterate)),
        residual(residual),
        contraction_estimate(contraction) {}
  Vec last_iterate;
  double residual;
  double contraction_estimate;
};

struct MeanFieldSolution {
  double pi = 0.5;
  Vec p_star;
  Mat z_jacobian;  // H = grad_p z at p_star
  Vec dpdpi;       // binary: d p*/d pi;  continuous: d p*/d eta
  double tau_ade_star = 0.0;
  double tau_aie_star = 0.0;
  // continuous designs only
  double tau_mpe_star = 0.0;
  double tau_dpe_star = 0.0;
  double tau_ipe_star = 0.0;
  Vec grad_y;  // grad_p of the mixture mean outcome at p_star
  double sigma2_D = 0.0;
  double sigma2_I = 0.0;
  Vec gamma;
  double residual_var = 0.0;  // v^2 of Theorem 4
  double clearing_residual = 0.0;
};

struct ContractionReport {
  double max_norm = 0.0;  // max over the grid of ||I + grad_p z||_2
  bool contraction = false;
};

// Expected excess demand z_pi(p).  Binary scenarios mix the w=0/1 arms with
// weight pi; continuous scenarios mix the eta -/+ xi arms (xi = 0 evaluates
// at eta itself, the mean-field limit).
Vec mean_field_excess_demand(const Scenario& sc, double pi, const Vec& p, double xi = 0.0);

// Central-difference Jacobian of p -> mean_field_excess_demand.
Mat mean_field_jacobian(const Scenario& sc, double pi, const Vec& p, double xi = 0.0);

// Damped fixed-point iteration with a Newton polish; populates p_star,
// z_jacobian and clearing_residual only.
MeanFieldSolution solve_mean_field_price(const Scenario& sc, double pi,
                                         const SolverSettings& settings = {});

ContractionReport check_contraction(const Scenario& sc, double pi, int grid_points = 50);

// dp*/dpi (binary) or dp*/deta (continuous) via the implicit function theorem.
Vec price_sensitivity(const Scenario& sc, double pi, const MeanFieldSolution& mfs);

// Full oracle: effects, sensitivities and asymptotic variances (the latter by
// seeded Monte Carlo integration over the type distribution at the frozen
// mean-field price).
MeanFieldSolution true_effects(const Scenario& sc, double pi, const SolverSettings& settings = {},
                               int variance_mc_draws = 1000000);

struct FiniteSamplePrice {
  Vec p;
  double objective = 0.0;  // achieved ||mean excess demand||_2
};

// argmin over the price box of ||(1/n) sum_i Z_i(W_i, p + U_i)||_2.
// Step-function populations: per-coordinate breakpoint scan (candidates are
// unit thresholds shifted by -U_ij, midpoints of consecutive thresholds, and
// the box ends), iterated across coordinates to a fixed point; ties broken
// toward the smallest price.  Smooth populations: damped fixed point plus
// Newton on the mean excess demand.
FiniteSamplePrice solve_finite_sample_price(const Population& pop, const std::vector<double>& W,
                                            const Mat& U, const SolverSettings& settings = {});

}  // namespace marketfx::equilibrium
