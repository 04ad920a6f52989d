#include "equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "rng.hpp"

namespace marketfx::equilibrium {

namespace {

constexpr double kFdStep = 1e-6;       // price finite-difference step
constexpr double kTreatFdStep = 1e-5;  // treatment finite-difference step
constexpr double kEtaStep = 1e-4;      // eta step for marginal policy effects
constexpr double kCondLimit = 1e8;
constexpr std::uint64_t kOracleSeed = 0x6f7261636c65ull;

Vec clamp_to_box(Vec p, const Vec& lo, const Vec& hi) {
  for (int j = 0; j < p.size(); ++j) p[j] = std::clamp(p[j], lo[j], hi[j]);
  return p;
}

double spectral_norm(const Mat& m) {
  return Eigen::JacobiSVD<Mat>(m).singularValues()(0);
}

// Solve H x = b, rejecting near-singular H.
Vec solve_checked(const Mat& h, const Vec& b) {
  Eigen::JacobiSVD<Mat> svd(h, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smax = svd.singularValues()(0);
  const double smin = svd.singularValues()(svd.singularValues().size() - 1);
  if (!(smin > 0.0) || smax / smin > kCondLimit)
    throw std::runtime_error("excess-demand Jacobian is numerically singular (condition number " +
                             std::to_string(smin > 0.0 ? smax / smin : INFINITY) + ")");
  return svd.solve(b);
}

// Arm treatment values for the pi-mixture: (w0, w1) with weights (1-pi, pi).
std::pair<double, double> arm_values(const Scenario& sc, double xi) {
  if (sc.treatment_kind == model::TreatmentKind::Binary) return {0.0, 1.0};
  return {sc.continuous.eta - xi, sc.continuous.eta + xi};
}

}  // namespace

Vec mean_field_excess_demand(const Scenario& sc, double pi, const Vec& p, double xi) {
  if (!(pi >= 0.0 && pi <= 1.0)) throw std::invalid_argument("pi must lie in [0, 1]");
  if (p.size() != sc.num_goods) throw std::invalid_argument("price dimension mismatch");
  for (int j = 0; j < p.size(); ++j) {
    if (p[j] < sc.price_lower[j] - 1e-3 || p[j] > sc.price_upper[j] + 1e-3)
      throw std::invalid_argument("price outside the scenario box");
  }
  auto [w0, w1] = arm_values(sc, xi);
  Vec z0 = sc.mf_demand(w0, p) - sc.mf_supply(w0, p);
  if (w1 == w0) return z0;
  Vec z1 = sc.mf_demand(w1, p) - sc.mf_supply(w1, p);
  return pi * z1 + (1.0 - pi) * z0;
}

Mat mean_field_jacobian(const Scenario& sc, double pi, const Vec& p, double xi) {
  const int J = sc.num_goods;
  Mat h(J, J);
  for (int k = 0; k < J; ++k) {
    Vec pp = p, pm = p;
    pp[k] += kFdStep;
    pm[k] -= kFdStep;
    h.col(k) = (mean_field_excess_demand(sc, pi, pp, xi) -
                mean_field_excess_demand(sc, pi, pm, xi)) /
               (2.0 * kFdStep);
  }
  return h;
}

MeanFieldSolution solve_mean_field_price(const Scenario& sc, double pi,
                                         const SolverSettings& settings) {
  if (!(settings.tolerance > 0.0)) throw std::invalid_argument("tolerance must be positive");
  if (!(settings.damping > 0.0 && settings.damping <= 1.0))
    throw std::invalid_argument("damping must lie in (0, 1]");

  Vec p = 0.5 * (sc.price_lower + sc.price_upper);
  Vec z = mean_field_excess_demand(sc, pi, p);
  double res = z.lpNorm<Eigen::Infinity>();

  // damped fixed point on f(p) = p + lambda z(p); a contraction under
  // Assumption 4.2
  const double fp_target = std::max(settings.tolerance, 1e-6);
  for (int it = 0; it < settings.max_iters && res > fp_target; ++it) {
    p = clamp_to_box(p + settings.damping * z, sc.price_lower, sc.price_upper);
    z = mean_field_excess_demand(sc, pi, p);
    res = z.lpNorm<Eigen::Infinity>();
  }

  // Newton polish down to the requested residual
  for (int it = 0; it < 50 && res > settings.tolerance; ++it) {
    const Mat h = mean_field_jacobian(sc, pi, p);
    Vec step;
    try {
      step = solve_checked(h, Vec(-z));
    } catch (const std::runtime_error&) {
      break;
    }
    // backtracking keeps the polish from leaving the fixed point's basin
    double scale = 1.0;
    for (int bt = 0; bt < 30; ++bt, scale *= 0.5) {
      const Vec cand = clamp_to_box(p + scale * step, sc.price_lower, sc.price_upper);
      const Vec zc = mean_field_excess_demand(sc, pi, cand);
      if (zc.lpNorm<Eigen::Infinity>() < res) {
        p = cand;
        z = zc;
        res = z.lpNorm<Eigen::Infinity>();
        break;
      }
      if (bt == 29) it = 50;  // no improvement possible
    }
  }

  if (res > settings.tolerance) {
    const double contraction = spectral_norm(
        Mat::Identity(sc.num_goods, sc.num_goods) + mean_field_jacobian(sc, pi, p));
    throw SolverError("mean-field solver did not reach tolerance (residual " +
                          std::to_string(res) + ", contraction estimate " +
                          std::to_string(contraction) + ")",
                      p, res, contraction);
  }

  MeanFieldSolution mfs;
  mfs.pi = pi;
  mfs.p_star = p;
  mfs.z_jacobian = mean_field_jacobian(sc, pi, p);
  mfs.clearing_residual = res;
  return mfs;
}

ContractionReport check_contraction(const Scenario& sc, double pi, int grid_points) {
  if (grid_points < 2) throw std::invalid_argument("grid_points must be at least 2");
  const int J = sc.num_goods;
  ContractionReport rep;
  std::vector<int> idx(J, 0);
  const Mat eye = Mat::Identity(J, J);
  while (true) {
    Vec p(J);
    for (int j = 0; j < J; ++j) {
      const double t = static_cast<double>(idx[j]) / (grid_points - 1);
      p[j] = sc.price_lower[j] + t * (sc.price_upper[j] - sc.price_lower[j]);
    }
    rep.max_norm = std::max(rep.max_norm, spectral_norm(eye + mean_field_jacobian(sc, pi, p)));
    int j = 0;
    for (; j < J; ++j) {
      if (++idx[j] < grid_points) break;
      idx[j] = 0;
    }
    if (j == J) break;
  }
  rep.contraction = rep.max_norm < 1.0;
  return rep;
}

Vec price_sensitivity(const Scenario& sc, double pi, const MeanFieldSolution& mfs) {
  if (mfs.p_star.size() != sc.num_goods)
    throw std::invalid_argument("mean-field solution does not match the scenario");
  const Mat h = mfs.z_jacobian.size() > 0 ? mfs.z_jacobian
                                          : mean_field_jacobian(sc, pi, mfs.p_star);
  Vec dz_dtheta(sc.num_goods);
  if (sc.treatment_kind == model::TreatmentKind::Binary) {
    dz_dtheta = (sc.mf_demand(1.0, mfs.p_star) - sc.mf_supply(1.0, mfs.p_star)) -
                (sc.mf_demand(0.0, mfs.p_star) - sc.mf_supply(0.0, mfs.p_star));
  } else {
    const double eta = sc.continuous.eta;
    dz_dtheta = ((sc.mf_demand(eta + kTreatFdStep, mfs.p_star) -
                  sc.mf_supply(eta + kTreatFdStep, mfs.p_star)) -
                 (sc.mf_demand(eta - kTreatFdStep, mfs.p_star) -
                  sc.mf_supply(eta - kTreatFdStep, mfs.p_star))) /
                (2.0 * kTreatFdStep);
  }
  return -solve_checked(h, dz_dtheta);
}

MeanFieldSolution true_effects(const Scenario& sc, double pi, const SolverSettings& settings,
                               int variance_mc_draws) {
  if (variance_mc_draws < 1000)
    throw std::invalid_argument("variance oracle needs at least 1000 Monte Carlo draws");
  MeanFieldSolution mfs = solve_mean_field_price(sc, pi, settings);
  const int J = sc.num_goods;
  const Vec& p = mfs.p_star;
  const bool binary = sc.treatment_kind == model::TreatmentKind::Binary;
  auto [w0, w1] = arm_values(sc, 0.0);

  mfs.dpdpi = price_sensitivity(sc, pi, mfs);

  // grad_p of the mixture mean outcome at p*
  auto mix_outcome = [&](const Vec& pp) {
    return binary ? pi * sc.mf_outcome(w1, pp) + (1.0 - pi) * sc.mf_outcome(w0, pp)
                  : sc.mf_outcome(sc.continuous.eta, pp);
  };
  mfs.grad_y.resize(J);
  Vec a(J);  // grad_p [y(w1,.) - y(w0,.)]
  for (int k = 0; k < J; ++k) {
    Vec pp = p, pm = p;
    pp[k] += kFdStep;
    pm[k] -= kFdStep;
    mfs.grad_y[k] = (mix_outcome(pp) - mix_outcome(pm)) / (2.0 * kFdStep);
    a[k] = ((sc.mf_outcome(w1, pp) - sc.mf_outcome(w0, pp)) -
            (sc.mf_outcome(w1, pm) - sc.mf_outcome(w0, pm))) /
           (2.0 * kFdStep);
  }

  if (binary) {
    mfs.tau_ade_star = sc.mf_outcome(1.0, p) - sc.mf_outcome(0.0, p);
    mfs.tau_aie_star = mfs.grad_y.dot(mfs.dpdpi);
  } else {
    // marginal policy effect via a central difference of the solved system,
    // decomposed into direct and indirect parts via the IFT
    const double eta = sc.continuous.eta;
    Scenario plus = sc, minus = sc;
    plus.continuous.eta = eta + kEtaStep;
    minus.continuous.eta = eta - kEtaStep;
    const MeanFieldSolution mp = solve_mean_field_price(plus, pi, settings);
    const MeanFieldSolution mm = solve_mean_field_price(minus, pi, settings);
    mfs.tau_mpe_star = (plus.mf_outcome(eta + kEtaStep, mp.p_star) -
                        minus.mf_outcome(eta - kEtaStep, mm.p_star)) /
                       (2.0 * kEtaStep);
    mfs.tau_dpe_star =
        (sc.mf_outcome(eta + kEtaStep, p) - sc.mf_outcome(eta - kEtaStep, p)) / (2.0 * kEtaStep);
    mfs.tau_ipe_star = mfs.grad_y.dot(mfs.dpdpi);
  }

  // gamma and kappa for the variance oracles
  mfs.gamma = solve_checked(mfs.z_jacobian, mfs.grad_y);
  const Vec kappa = -solve_checked(mfs.z_jacobian.transpose(), a);  // -H^{-T} a

  if (!(pi > 0.0 && pi < 1.0)) {
    // degenerate assignment: effects are still defined, the HT variance
    // oracles are not
    mfs.sigma2_D = mfs.sigma2_I = mfs.residual_var =
        std::numeric_limits<double>::quiet_NaN();
    return mfs;
  }

  // Monte Carlo over the type distribution at the frozen p*.  Conditional on
  // the unit, the treatment mixture moments are exact, so only the type
  // integral is sampled.
  Rng rng(kOracleSeed);
  double sum_g = 0.0, sum_g2 = 0.0, sum_r2 = 0.0;
  for (int i = 0; i < variance_mc_draws; ++i) {
    const model::UnitDraw u = sc.sampler(rng);
    const double y1 = u.outcome(w1, p), y0 = u.outcome(w0, p);
    const Vec z1 = u.excess(w1, p), z0 = u.excess(w0, p);
    // influence of the direct-effect estimator (appendix form):
    // G = s_i Y_i - a' H^{-1} Z_i with s_i the signed HT weight
    const double g1 = y1 / pi + kappa.dot(z1);
    const double g0 = -y0 / (1.0 - pi) + kappa.dot(z0);
    sum_g += pi * g1 + (1.0 - pi) * g0;
    sum_g2 += pi * g1 * g1 + (1.0 - pi) * g0 * g0;
    const double r1 = y1 - z1.dot(mfs.gamma), r0 = y0 - z0.dot(mfs.gamma);
    sum_r2 += pi * r1 * r1 + (1.0 - pi) * r0 * r0;
  }
  const double mean_g = sum_g / variance_mc_draws;
  mfs.sigma2_D = sum_g2 / variance_mc_draws - mean_g * mean_g;
  mfs.residual_var = sum_r2 / variance_mc_draws;
  mfs.sigma2_I = mfs.residual_var * mfs.dpdpi.squaredNorm();
  return mfs;
}

namespace {

// One coordinate of the breakpoint scan: minimize ||mean excess demand||_2
// over p[j] in its box interval, holding the other coordinates fixed.
double scan_coordinate(const Population& pop, const std::vector<double>& W, const Mat& U,
                       const Vec& p, int j) {
  const int n = pop.n(), J = pop.num_goods;
  const double lj = pop.price_lower[j], uj = pop.price_upper[j];

  auto unit_z = [&](int i, double x) {
    Vec q = p + U.row(i).transpose();
    q[j] = x + U(i, j);
    return pop.units[i].excess(W[i], q);
  };
  auto full_mean = [&](double x) {
    Vec z = Vec::Zero(J);
    for (int i = 0; i < n; ++i) z += unit_z(i, x);
    return Vec(z / n);
  };

  // thresholds in market-price space (unit thresholds shifted by -U_ij)
  std::vector<std::pair<double, int>> events;
  events.reserve(2 * n);
  for (int i = 0; i < n; ++i) {
    Vec q = p + U.row(i).transpose();
    for (double t : pop.units[i].thresholds(j, W[i], q)) {
      const double tm = t - U(i, j);
      if (tm > lj && tm < uj) events.emplace_back(tm, i);
    }
  }
  std::sort(events.begin(), events.end());

  // For small n, evaluate every candidate from scratch: bitwise identical to
  // an exhaustive scan.  Otherwise maintain the mean incrementally, touching
  // only the units that flip at each threshold.
  const bool exact = n <= 64;

  Vec zbar = full_mean(lj);
  double best_x = lj, best_obj = zbar.squaredNorm();
  auto consider = [&](double x, const Vec& z) {
    const double o = z.squaredNorm();
    if (o < best_obj) {  // ties keep the earlier (smaller) price
      best_obj = o;
      best_x = x;
    }
  };

  std::size_t k = 0;
  double prev = lj;
  while (k < events.size()) {
    const double t = events[k].first;
    std::size_t k2 = k;
    while (k2 < events.size() && events[k2].first == t) ++k2;
    if (exact) {
      zbar = full_mean(t);
    } else {
      for (std::size_t e = k; e < k2; ++e) {
        const int i = events[e].second;
        zbar += (unit_z(i, t) - unit_z(i, prev)) / n;
      }
    }
    consider(t, zbar);

    const double nxt = k2 < events.size() ? events[k2].first : uj;
    const double rep = 0.5 * (t + nxt);  // midpoint of the following segment
    if (rep > t && rep < nxt) {
      if (exact) {
        zbar = full_mean(rep);
      } else {
        for (std::size_t e = k; e < k2; ++e) {
          const int i = events[e].second;
          zbar += (unit_z(i, rep) - unit_z(i, t)) / n;
        }
      }
      consider(rep, zbar);
      prev = rep;
    } else {
      prev = t;
    }
    k = k2;
  }
  if (exact) zbar = full_mean(uj);
  consider(uj, zbar);  // constant on the last segment in the incremental path
  return best_x;
}

FiniteSamplePrice solve_smooth(const Population& pop, const std::vector<double>& W, const Mat& U,
                               const SolverSettings& settings) {
  const int n = pop.n(), J = pop.num_goods;
  auto mean_excess = [&](const Vec& p) {
    Vec z = Vec::Zero(J);
    for (int i = 0; i < n; ++i)
      z += pop.units[i].excess(W[i], Vec(p + U.row(i).transpose()));
    return Vec(z / n);
  };

  Vec p = 0.5 * (pop.price_lower + pop.price_upper);
  Vec z = mean_excess(p);
  Vec best_p = p;
  double best_obj = z.norm();
  auto track = [&](const Vec& pp, const Vec& zz) {
    const double o = zz.norm();
    if (o < best_obj) {
      best_obj = o;
      best_p = pp;
    }
  };

  for (int it = 0; it < settings.max_iters && z.lpNorm<Eigen::Infinity>() > 1e-7; ++it) {
    p = clamp_to_box(p + settings.damping * z, pop.price_lower, pop.price_upper);
    z = mean_excess(p);
    track(p, z);
  }
  for (int it = 0; it < 50 && z.lpNorm<Eigen::Infinity>() > settings.tolerance; ++it) {
    Mat h(J, J);
    for (int c = 0; c < J; ++c) {
      Vec pp = p, pm = p;
      pp[c] += kFdStep;
      pm[c] -= kFdStep;
      h.col(c) = (mean_excess(pp) - mean_excess(pm)) / (2.0 * kFdStep);
    }
    Vec step;
    try {
      step = solve_checked(h, Vec(-z));
    } catch (const std::runtime_error&) {
      break;
    }
    const Vec cand = clamp_to_box(p + step, pop.price_lower, pop.price_upper);
    const Vec zc = mean_excess(cand);
    if (zc.norm() >= z.norm()) break;
    p = cand;
    z = zc;
    track(p, z);
  }
  return {best_p, best_obj};
}

}  // namespace

FiniteSamplePrice solve_finite_sample_price(const Population& pop, const std::vector<double>& W,
                                            const Mat& U, const SolverSettings& settings) {
  const int n = pop.n(), J = pop.num_goods;
  if (static_cast<int>(W.size()) != n) throw std::invalid_argument("W length must equal n");
  if (U.rows() != n || U.cols() != J)
    throw std::invalid_argument("U must be an n x J matrix");

  if (!pop.has_breakpoints) return solve_smooth(pop, W, U, settings);

  auto mean_excess = [&](const Vec& p) {
    Vec z = Vec::Zero(J);
    for (int i = 0; i < n; ++i)
      z += pop.units[i].excess(W[i], Vec(p + U.row(i).transpose()));
    return Vec(z / n);
  };
  auto objective = [&](const Vec& p) { return mean_excess(p).norm(); };

  Vec p = 0.5 * (pop.price_lower + pop.price_upper);
  Vec best_p = p;
  // seeded with +inf so the first scan pass always installs a candidate
  // price (the start point is not a candidate under the tie rule)
  double best_obj = std::numeric_limits<double>::infinity();

  // The per-coordinate scans are globally optimal in one dimension but the
  // joint surface is a nonconvex staircase, and coordinate descent from an
  // arbitrary point can settle in a distant basin.  A damped fixed point on
  // the empirical mean excess demand (a staircase approximation of the
  // contractive mean-field map) first moves the iterate into the clearing
  // region.
  if (J > 1) {
    Vec q = p;
    for (int it = 0; it < 400; ++it) {
      const Vec z = mean_excess(q);
      if (z.norm() < best_obj) {
        best_obj = z.norm();
        best_p = q;
      }
      if (z.lpNorm<Eigen::Infinity>() < 1e-3) break;
      q = clamp_to_box(Vec(q + settings.damping * z), pop.price_lower, pop.price_upper);
    }
    p = q;
  }

  const int max_passes = 50;
  for (int pass = 0; pass < max_passes; ++pass) {
    const Vec prev = p;
    for (int j = 0; j < J; ++j) p[j] = scan_coordinate(pop, W, U, p, j);
    const double obj = objective(p);
    if (obj < best_obj) {
      best_obj = obj;
      best_p = p;
    }
    if (p == prev) break;
  }
  return {best_p, best_obj};
}

}  // namespace marketfx::equilibrium
