#include "model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace marketfx::model {

namespace {

using nlohmann::json;

double get_param(const json& params, const char* key, double fallback) {
  if (params.is_object() && params.contains(key)) return params.at(key).get<double>();
  return fallback;
}

Vec get_vec_param(const json& params, const char* key, const Vec& fallback) {
  if (params.is_object() && params.contains(key)) {
    auto v = params.at(key).get<std::vector<double>>();
    if (static_cast<int>(v.size()) != fallback.size())
      throw std::invalid_argument(std::string("parameter '") + key + "' has wrong dimension");
    return Eigen::Map<const Vec>(v.data(), v.size());
  }
  return fallback;
}

// clamp((x - lo) / (hi - lo), 0, 1): uniform cdf
double ucdf(double x, double lo, double hi) {
  return std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// 5-point Gauss-Legendre on [a, b]; exact for polynomials of degree <= 9.
template <typename F>
double gauss5(F&& f, double a, double b) {
  static const double xs[5] = {-0.9061798459386640, -0.5384693101056831, 0.0,
                               0.5384693101056831, 0.9061798459386640};
  static const double ws[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                               0.4786286704993665, 0.2369268850561891};
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  double acc = 0.0;
  for (int k = 0; k < 5; ++k) acc += ws[k] * f(c + h * xs[k]);
  return acc * h;
}

// Integrate f (piecewise polynomial with kinks at `cuts`) exactly over [a, b].
template <typename F>
double piecewise_integral(F&& f, double a, double b, std::vector<double> cuts) {
  cuts.push_back(a);
  cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double lo = std::clamp(cuts[k], a, b), hi = std::clamp(cuts[k + 1], a, b);
    if (hi > lo) acc += gauss5(f, lo, hi);
  }
  return acc;
}

void check_box(const Vec& lower, const Vec& upper) {
  if (lower.size() != upper.size() || lower.size() < 1)
    throw std::invalid_argument("price box dimensions do not match");
  for (int j = 0; j < lower.size(); ++j) {
    if (!(0.0 < lower[j] && lower[j] < upper[j]))
      throw std::invalid_argument("price box requires 0 < lower < upper component-wise");
  }
}

void check_continuous(const ContinuousTreatment& ct) {
  if (!(ct.xi_exponent > 0.25 && ct.xi_exponent < 0.5))
    throw std::invalid_argument("xi_exponent must lie strictly inside (1/4, 1/2)");
  if (!(ct.xi_scale > 0.0)) throw std::invalid_argument("xi_scale must be positive");
}

// --- tech-intervention -----------------------------------------------------
//
// One good.  Buyer values V ~ U(v_lo, v_hi), seller costs C ~ U(c_lo, c_hi).
// D = 1{V > p}; a treated seller produces `supply_mult` units at the same
// cost: S = m(w) 1{C < p}, m(w) = 1 + (supply_mult - 1) w.  Outcome is seller
// profit Y = m(w) (p - C) 1{C < p}.
Scenario make_tech(const json& params) {
  Scenario sc;
  sc.id = "tech-intervention";
  sc.num_goods = 1;
  sc.treatment_kind = TreatmentKind::Binary;
  sc.has_breakpoints = true;

  const double v_lo = get_param(params, "v_lo", 7.0), v_hi = get_param(params, "v_hi", 12.0);
  const double c_lo = get_param(params, "c_lo", 5.0), c_hi = get_param(params, "c_hi", 10.0);
  const double mult = get_param(params, "supply_mult", 1.2);
  if (!(v_lo < v_hi && c_lo < c_hi)) throw std::invalid_argument("uniform supports need lo < hi");
  if (!(mult > 0.0)) throw std::invalid_argument("supply_mult must be positive");

  sc.price_lower = get_vec_param(params, "price_lower", Vec::Constant(1, c_lo + 0.01));
  sc.price_upper = get_vec_param(params, "price_upper", Vec::Constant(1, v_hi - 0.01));
  check_box(sc.price_lower, sc.price_upper);
  sc.params = {{"v_lo", v_lo}, {"v_hi", v_hi}, {"c_lo", c_lo}, {"c_hi", c_hi},
               {"supply_mult", mult}};

  auto m_of = [mult](double w) { return 1.0 + (mult - 1.0) * w; };

  sc.sampler = [=](Rng& rng) {
    const double v = rng.uniform(v_lo, v_hi);
    const double c = rng.uniform(c_lo, c_hi);
    UnitDraw u;
    u.latent = {v, c};
    u.demand = [v](double, const Vec& p) { return Vec::Constant(1, v > p[0] ? 1.0 : 0.0); };
    u.supply = [c, m_of](double w, const Vec& p) {
      return Vec::Constant(1, c < p[0] ? m_of(w) : 0.0);
    };
    u.outcome = [c, m_of](double w, const Vec& p) {
      return c < p[0] ? m_of(w) * (p[0] - c) : 0.0;
    };
    u.thresholds = [v, c](int, double, const Vec&) { return std::vector<double>{v, c}; };
    return u;
  };

  sc.mf_demand = [=](double, const Vec& p) {
    return Vec::Constant(1, ucdf(v_hi + v_lo - p[0], v_lo, v_hi));  // P(V > p)
  };
  sc.mf_supply = [=](double w, const Vec& p) {
    return Vec::Constant(1, m_of(w) * ucdf(p[0], c_lo, c_hi));
  };
  // E[(p - C)+] for C ~ U(c_lo, c_hi)
  auto expected_margin = [=](double p) {
    if (p <= c_lo) return 0.0;
    if (p >= c_hi) return p - 0.5 * (c_lo + c_hi);
    return (p - c_lo) * (p - c_lo) / (2.0 * (c_hi - c_lo));
  };
  sc.mf_outcome = [=](double w, const Vec& p) { return m_of(w) * expected_margin(p[0]); };
  return sc;
}

// --- goat-hay-subsidy ------------------------------------------------------
//
// Two goods (0 = goat, 1 = hay).  Unit i bundles a farmer and a goat buyer.
// The farmer can raise one goat (cost C^G, buying one unit of hay as input)
// or grow hay (cost C^H), whichever is more profitable, or do nothing:
//   rawG = p^G + w - C^G - p^H,   rawH = p^H - C^H,
//   S^G = 1{rawG > max(rawH, 0)}, S^H = 1{rawH > max(rawG, 0)}.
// The goat buyer has value V: D^G = 1{V > p^G}; hay demand comes from goat
// farmers, D^H = S^G.  Outcome is goat-farming profit Y = S^G * rawG; the
// subsidy w is paid per goat raised.
Scenario make_goat_hay(const json& params) {
  Scenario sc;
  sc.id = "goat-hay-subsidy";
  sc.num_goods = 2;
  sc.treatment_kind = TreatmentKind::Continuous;
  sc.has_breakpoints = true;

  const double cg_lo = get_param(params, "cg_lo", 5.0), cg_hi = get_param(params, "cg_hi", 10.0);
  const double ch_lo = get_param(params, "ch_lo", 2.0), ch_hi = get_param(params, "ch_hi", 5.0);
  const double v_lo = get_param(params, "v_lo", 7.0), v_hi = get_param(params, "v_hi", 15.0);
  if (!(cg_lo < cg_hi && ch_lo < ch_hi && v_lo < v_hi))
    throw std::invalid_argument("uniform supports need lo < hi");

  Vec lo(2), hi(2);
  lo << cg_lo + 0.01, ch_lo + 0.01;
  hi << v_hi - 0.01, cg_hi - 0.01;
  sc.price_lower = get_vec_param(params, "price_lower", lo);
  sc.price_upper = get_vec_param(params, "price_upper", hi);
  check_box(sc.price_lower, sc.price_upper);

  sc.continuous.eta = get_param(params, "eta", 0.0);
  sc.continuous.xi_scale = get_param(params, "xi_scale", 2.0);
  sc.continuous.xi_exponent = get_param(params, "xi_exponent", 1.0 / 3.0);
  check_continuous(sc.continuous);
  sc.params = {{"cg_lo", cg_lo}, {"cg_hi", cg_hi}, {"ch_lo", ch_lo}, {"ch_hi", ch_hi},
               {"v_lo", v_lo},   {"v_hi", v_hi}};

  sc.sampler = [=](Rng& rng) {
    const double cg = rng.uniform(cg_lo, cg_hi);
    const double ch = rng.uniform(ch_lo, ch_hi);
    const double v = rng.uniform(v_lo, v_hi);
    UnitDraw u;
    u.latent = {cg, ch, v};
    auto choices = [cg, ch](double w, const Vec& p) {
      const double raw_g = p[0] + w - cg - p[1];
      const double raw_h = p[1] - ch;
      const bool sg = raw_g > std::max(raw_h, 0.0);
      const bool sh = raw_h > std::max(raw_g, 0.0);
      return std::pair<bool, bool>(sg, sh);
    };
    u.demand = [v, choices](double w, const Vec& p) {
      auto [sg, sh] = choices(w, p);
      Vec d(2);
      d << (v > p[0] ? 1.0 : 0.0), (sg ? 1.0 : 0.0);
      return d;
    };
    u.supply = [choices](double w, const Vec& p) {
      auto [sg, sh] = choices(w, p);
      Vec s(2);
      s << (sg ? 1.0 : 0.0), (sh ? 1.0 : 0.0);
      return s;
    };
    u.outcome = [cg, choices](double w, const Vec& p) {
      auto [sg, sh] = choices(w, p);
      return sg ? p[0] + w - cg - p[1] : 0.0;
    };
    u.thresholds = [cg, ch, v](int j, double w, const Vec& p) {
      if (j == 0) {
        // flips of D^G and of rawG = max(rawH, 0) as p^G varies
        return std::vector<double>{v, cg - w + p[1] + std::max(p[1] - ch, 0.0)};
      }
      // flips of rawH = 0, rawG = 0 and rawG = rawH as p^H varies
      const double a = p[0] + w - cg;
      return std::vector<double>{ch, a, 0.5 * (a + ch)};
    };
    return u;
  };

  // Mean-field expectations.  With A = p^G + w - p^H and B = p^H:
  //   S^G = 1{C^G < A - max(B - C^H, 0)},  S^H = 1{C^H < B - max(A - C^G, 0)}.
  // The inner uniform cdf/partial expectation is piecewise polynomial in the
  // outer cost, so piecewise Gauss-Legendre integrates it exactly.
  const double ch_den = ch_hi - ch_lo, cg_den = cg_hi - cg_lo;
  auto exp_supply_goat = [=](double w, const Vec& p) {
    const double A = p[0] + w - p[1], B = p[1];
    auto f = [&](double ch) { return ucdf(A - std::max(B - ch, 0.0), cg_lo, cg_hi) / ch_den; };
    return piecewise_integral(f, ch_lo, ch_hi, {B, cg_lo - A + B, cg_hi - A + B});
  };
  auto exp_supply_hay = [=](double w, const Vec& p) {
    const double A = p[0] + w - p[1], B = p[1];
    auto f = [&](double cg) { return ucdf(B - std::max(A - cg, 0.0), ch_lo, ch_hi) / cg_den; };
    return piecewise_integral(f, cg_lo, cg_hi, {A, A - B + ch_lo, A - B + ch_hi});
  };
  auto exp_outcome = [=](double w, const Vec& p) {
    const double A = p[0] + w - p[1], B = p[1];
    // E[(A - C^G) 1{C^G < t}] for C^G ~ U(cg_lo, cg_hi), t = A - max(B-ch, 0)
    auto partial = [&](double t) {
      const double ub = std::clamp(t, cg_lo, cg_hi);
      return ((A - cg_lo) * (A - cg_lo) - (A - ub) * (A - ub)) / (2.0 * cg_den);
    };
    auto f = [&](double ch) { return partial(A - std::max(B - ch, 0.0)) / ch_den; };
    return piecewise_integral(f, ch_lo, ch_hi, {B, cg_lo - A + B, cg_hi - A + B});
  };

  sc.mf_demand = [=](double w, const Vec& p) {
    Vec d(2);
    d << ucdf(v_hi + v_lo - p[0], v_lo, v_hi), exp_supply_goat(w, p);
    return d;
  };
  sc.mf_supply = [=](double w, const Vec& p) {
    Vec s(2);
    s << exp_supply_goat(w, p), exp_supply_hay(w, p);
    return s;
  };
  sc.mf_outcome = [=](double w, const Vec& p) { return exp_outcome(w, p); };
  return sc;
}

// --- smooth-logistic -------------------------------------------------------
//
// One good with logistic (smooth) demand and supply; not a paper scenario.
// Exists so that gradients of z can be probed by finite differences and so
// the smooth finite-sample solver path is exercised.
Scenario make_smooth_logistic(const json& params) {
  Scenario sc;
  sc.id = "smooth-logistic";
  sc.num_goods = 1;
  sc.treatment_kind = TreatmentKind::Binary;
  sc.has_breakpoints = false;

  const double a_d = get_param(params, "demand_loc", 10.0);
  const double a_s = get_param(params, "supply_loc", 7.0);
  const double s = get_param(params, "scale", 1.0);
  const double shift = get_param(params, "demand_shift", 0.5);
  const double spread = get_param(params, "latent_spread", 1.0);
  if (!(s > 0.0) || !(spread > 0.0))
    throw std::invalid_argument("scale and latent_spread must be positive");

  sc.price_lower = get_vec_param(params, "price_lower", Vec::Constant(1, 5.01));
  sc.price_upper = get_vec_param(params, "price_upper", Vec::Constant(1, 11.99));
  check_box(sc.price_lower, sc.price_upper);
  sc.params = {{"demand_loc", a_d}, {"supply_loc", a_s}, {"scale", s},
               {"demand_shift", shift}, {"latent_spread", spread}};

  sc.sampler = [=](Rng& rng) {
    const double dd = rng.uniform(-spread, spread);
    const double ds = rng.uniform(-spread, spread);
    UnitDraw u;
    u.latent = {dd, ds};
    u.demand = [=](double w, const Vec& p) {
      return Vec::Constant(1, logistic((a_d + shift * w + dd - p[0]) / s));
    };
    u.supply = [=](double, const Vec& p) {
      return Vec::Constant(1, logistic((p[0] - a_s - ds) / s));
    };
    u.outcome = [=](double, const Vec& p) {
      return logistic((p[0] - a_s - ds) / s) * (p[0] - a_s - ds);
    };
    u.thresholds = nullptr;
    return u;
  };

  // E[logistic((c + d)/s)] over d ~ U(-spread, spread), in closed form.
  auto avg_logistic = [=](double c) {
    return s / (2.0 * spread) *
           (softplus((c + spread) / s) - softplus((c - spread) / s));
  };
  sc.mf_demand = [=](double w, const Vec& p) {
    return Vec::Constant(1, avg_logistic(a_d + shift * w - p[0]));
  };
  sc.mf_supply = [=](double, const Vec& p) {
    return Vec::Constant(1, avg_logistic(p[0] - a_s));
  };
  sc.mf_outcome = [=](double, const Vec& p) {
    auto f = [&](double ds) {
      const double t = p[0] - a_s - ds;
      return logistic(t / s) * t / (2.0 * spread);
    };
    // composite Gauss-Legendre; the integrand is analytic so this is
    // accurate to near machine precision
    const int panels = 12;
    double acc = 0.0;
    for (int k = 0; k < panels; ++k) {
      const double a = -spread + 2.0 * spread * k / panels;
      const double b = -spread + 2.0 * spread * (k + 1) / panels;
      acc += gauss5(f, a, b);
    }
    return acc;
  };
  return sc;
}

}  // namespace

Scenario make_scenario(const std::string& id, const json& params) {
  // exponent constraints apply to any scenario the moment the caller sets
  // them, binary designs included
  if (params.is_object() && params.contains("xi_exponent")) {
    const double a = params.at("xi_exponent").get<double>();
    if (!(a > 0.25 && a < 0.5))
      throw std::invalid_argument("xi_exponent must lie strictly inside (1/4, 1/2)");
  }
  Scenario sc;
  if (id == "tech-intervention") {
    sc = make_tech(params);
  } else if (id == "goat-hay-subsidy") {
    sc = make_goat_hay(params);
  } else if (id == "smooth-logistic") {
    sc = make_smooth_logistic(params);
  } else {
    throw std::invalid_argument("unknown scenario id: " + id);
  }
  validate_scenario(sc);
  return sc;
}

void validate_scenario(const Scenario& sc, int probe_units, int grid_points) {
  check_box(sc.price_lower, sc.price_upper);
  if (sc.num_goods != sc.price_lower.size())
    throw std::invalid_argument("num_goods does not match price box dimension");
  if (sc.treatment_kind == TreatmentKind::Continuous) check_continuous(sc.continuous);
  if (!sc.sampler || !sc.mf_demand || !sc.mf_supply || !sc.mf_outcome)
    throw std::invalid_argument("scenario is missing sampler or mean-field callbacks");

  const int J = sc.num_goods;
  const Vec mid = 0.5 * (sc.price_lower + sc.price_upper);
  const double w_lo = sc.treatment_kind == TreatmentKind::Binary ? 0.0 : sc.continuous.eta;
  const double w_hi = sc.treatment_kind == TreatmentKind::Binary ? 1.0 : sc.continuous.eta;

  // Assumption 3 boundary signs, checked on the mean-field functions: excess
  // demand for good j is nonnegative at the lower box face and nonpositive at
  // the upper one (other coordinates at the box midpoint).
  for (double w : {w_lo, w_hi}) {
    for (int j = 0; j < J; ++j) {
      Vec p = mid;
      p[j] = sc.price_lower[j];
      const double z_lo = sc.mf_demand(w, p)[j] - sc.mf_supply(w, p)[j];
      p[j] = sc.price_upper[j];
      const double z_hi = sc.mf_demand(w, p)[j] - sc.mf_supply(w, p)[j];
      if (z_lo < -1e-9 || z_hi > 1e-9)
        throw std::invalid_argument("scenario violates boundary sign conditions for good " +
                                    std::to_string(j));
    }
  }

  // Probe sampled units on a price grid: demand/supply nonnegative and bounded.
  Rng rng(0x5eedful);
  for (int k = 0; k < probe_units; ++k) {
    UnitDraw u = sc.sampler(rng);
    for (int g = 0; g < grid_points; ++g) {
      const double t = grid_points == 1 ? 0.5 : static_cast<double>(g) / (grid_points - 1);
      const Vec p = sc.price_lower + t * (sc.price_upper - sc.price_lower);
      for (double w : {w_lo, w_hi}) {
        const Vec d = u.demand(w, p), s = u.supply(w, p);
        if (d.minCoeff() < 0.0 || s.minCoeff() < 0.0)
          throw std::invalid_argument("unit demand/supply must be nonnegative");
        if (!d.allFinite() || !s.allFinite() || !std::isfinite(u.outcome(w, p)))
          throw std::invalid_argument("unit functions must be finite on the price box");
      }
    }
  }
}

Population sample_population(const Scenario& sc, int n, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("population size must be at least 2");
  Population pop;
  pop.scenario_id = sc.id;
  pop.seed = seed;
  pop.num_goods = sc.num_goods;
  pop.price_lower = sc.price_lower;
  pop.price_upper = sc.price_upper;
  pop.has_breakpoints = sc.has_breakpoints;
  pop.units.reserve(n);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) pop.units.push_back(sc.sampler(rng));
  return pop;
}

}  // namespace marketfx::model
