#include "gpgrid/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "gpgrid/asymptotics.hpp"
#include "gpgrid/errors.hpp"
#include "gpgrid/gp.hpp"
#include "gpgrid/parallel.hpp"
#include "gpgrid/prediction.hpp"
#include "gpgrid/random.hpp"
#include "gpgrid/toeplitz.hpp"
#include "gpgrid/version.hpp"

namespace gpgrid {
namespace {

using Json = nlohmann::ordered_json;

constexpr std::pair<ExperimentKind, std::string_view> kKindNames[] = {
    {ExperimentKind::kEstimate, "estimate"}, {ExperimentKind::kAsymvar, "asymvar"},
    {ExperimentKind::kToeplitz, "toeplitz"}, {ExperimentKind::kEpsSweep, "eps-sweep"},
    {ExperimentKind::kMap, "map"},           {ExperimentKind::kJoint, "joint"},
    {ExperimentKind::kPredict, "predict"},   {ExperimentKind::kNormality, "normality"},
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    const std::string item = trim(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (!item.empty()) out.push_back(item);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string kind_name(ExperimentKind k) { return std::string(to_string(k)); }

// Per-kind defaults layered over default_settings().
Settings kind_defaults(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kEstimate:
      return {{"n", "400"}, {"replicates", "100"}, {"estimators", "ml,cv"}, {"eps", "0"}};
    case ExperimentKind::kNormality:
      return {{"n", "400"}, {"replicates", "500"}, {"estimators", "ml,cv"}, {"eps", "0.25"}};
    case ExperimentKind::kPredict:
      return {{"n", "100"}, {"replicates", "32"}, {"eps", "0,0.45"}};
    case ExperimentKind::kMap:
      return {{"n", "1024"}, {"replicates", "16"}, {"eps", "0"}};
    case ExperimentKind::kJoint:
      return {{"free", "both"}, {"ell0", "0.73"}, {"nu0", "2.5"}, {"eps", "0,0.45"}, {"estimators", "ml,cv"}};
    case ExperimentKind::kEpsSweep:
      return {{"eps", "0,0.05,0.1,0.15,0.2,0.25,0.3,0.35,0.4,0.45"}, {"estimators", "ml,cv"}};
    case ExperimentKind::kAsymvar:
      return {{"eps", "0"}, {"estimators", "ml,cv"}};
    case ExperimentKind::kToeplitz:
      return {{"eps", "0"}};
  }
  return {};
}

bool grid_kind(ExperimentKind k) { return k == ExperimentKind::kMap || k == ExperimentKind::kPredict; }

template <class T>
bool parse_number(const std::string& text, T& out) {
  std::istringstream is(text);
  is >> out;
  return !is.fail() && (is >> std::ws).eof();
}

std::vector<double> linspace(double a, double b, int k) {
  std::vector<double> v(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) v[i] = k == 1 ? a : a + (b - a) * i / (k - 1);
  return v;
}

}  // namespace

std::string_view to_string(ExperimentKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<ExperimentKind> experiment_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

Settings parse_settings(std::istream& is) {
  Settings out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("line " + std::to_string(lineno) + ": expected key = value, got '" + t + "'");
    }
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw std::invalid_argument("line " + std::to_string(lineno) + ": empty key");
    out[key] = trim(std::string_view(t).substr(eq + 1));
  }
  return out;
}

Settings load_settings(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config file '" + path + "'");
  try {
    return parse_settings(f);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

const std::map<std::string, std::string>& default_settings() {
  static const std::map<std::string, std::string> d = {
      {"family", "matern"},
      {"free", "ell"},
      {"ell0", "1"},
      {"nu0", "1.5"},
      {"sigma2", "1"},
      {"points", ""},
      {"ell_range", "0.3,3"},
      {"nu_range", "0.5,5"},
      {"resolution", "5"},
      {"eps", "0"},
      {"estimators", "ml"},
      {"n", "1024"},
      {"replicates", "32"},
      {"seed", "1"},
      {"out", ""},
      {"threads", "0"},
      {"delta", "0.02"},
      {"map", "local"},
      {"mode", "error"},
      {"ell_box", "0.05,10"},
      {"nu_box", "0.2,10"},
      {"sigma2_box", "0.01,100"},
      {"starts", "8"},
      {"max_iterations", "200"},
      {"quad_nodes", "8"},
      {"spectral_grid", "8192"},
      {"asym_n", "1024"},
      {"asym_replicates", "16"},
      {"budget_minutes", "0"},
  };
  return d;
}

std::unique_ptr<CovarianceModel> ExperimentConfig::model_at(const ParamPoint& p) const {
  if (family == "variance") return std::make_unique<ScaledMaternModel>(MaternParams{p.ell, p.nu});
  if (free == "nu") return std::make_unique<MaternModel>(MaternFree::kNu, MaternParams{p.ell, p.nu});
  if (free == "both") return std::make_unique<MaternModel>(MaternFree::kBoth, MaternParams{p.ell, p.nu});
  return std::make_unique<MaternModel>(MaternFree::kEll, MaternParams{p.ell, p.nu});
}

Eigen::VectorXd ExperimentConfig::theta_at(const ParamPoint& p) const {
  if (family == "variance") return Eigen::VectorXd::Constant(1, sigma2);
  if (free == "nu") return Eigen::VectorXd::Constant(1, p.nu);
  if (free == "both") return Eigen::Vector2d(p.ell, p.nu);
  return Eigen::VectorXd::Constant(1, p.ell);
}

ParamBox ExperimentConfig::box() const {
  if (family == "variance") {
    return {Eigen::VectorXd::Constant(1, sigma2_lo), Eigen::VectorXd::Constant(1, sigma2_hi)};
  }
  if (free == "nu") return {Eigen::VectorXd::Constant(1, nu_lo), Eigen::VectorXd::Constant(1, nu_hi)};
  if (free == "both") return {Eigen::Vector2d(ell_lo, nu_lo), Eigen::Vector2d(ell_hi, nu_hi)};
  return {Eigen::VectorXd::Constant(1, ell_lo), Eigen::VectorXd::Constant(1, ell_hi)};
}

ExperimentConfig settings_to_config(ExperimentKind kind, const Settings& settings, Diagnostics& diag) {
  Settings s(default_settings().begin(), default_settings().end());
  for (const auto& [k, v] : kind_defaults(kind)) s[k] = v;
  for (const auto& [k, v] : settings) {
    if (k == "kind") continue;
    if (!default_settings().contains(k)) {
      diag.errors.push_back("unknown key '" + k + "'");
      continue;
    }
    s[k] = v;
  }

  ExperimentConfig c;
  c.kind = kind;
  c.resolved = s;
  c.resolved["kind"] = kind_name(kind);

  const auto get = [&]<class T>(const std::string& key, T& out) {
    if (!parse_number(s.at(key), out)) diag.errors.push_back(key + ": cannot parse '" + s.at(key) + "'");
  };
  const auto get_list = [&](const std::string& key) {
    std::vector<double> v;
    for (const auto& item : split(s.at(key), ',')) {
      double x = 0.0;
      if (!parse_number(item, x)) {
        diag.errors.push_back(key + ": cannot parse '" + item + "'");
        continue;
      }
      v.push_back(x);
    }
    return v;
  };
  const auto get_pair = [&](const std::string& key, double& lo, double& hi) {
    const auto v = get_list(key);
    if (v.size() != 2) {
      diag.errors.push_back(key + ": expected 'low,high'");
      return;
    }
    lo = v[0];
    hi = v[1];
  };

  c.family = s.at("family");
  c.free = s.at("free");
  if (c.family == "variance" && c.free == "ell") c.free = "sigma2";
  c.map_type = s.at("map");
  c.predict_mode = s.at("mode");
  c.out = s.at("out");
  get("sigma2", c.sigma2);
  long long n = 0;
  get("n", n);
  c.n = static_cast<Eigen::Index>(n);
  get("replicates", c.replicates);
  get("seed", c.seed);
  get("threads", c.threads);
  get("delta", c.delta);
  get("starts", c.optimizer.starts);
  get("max_iterations", c.optimizer.max_iterations);
  get("quad_nodes", c.quad_nodes);
  get("spectral_grid", c.spectral_grid);
  long long an = 0;
  get("asym_n", an);
  c.asym_n = static_cast<Eigen::Index>(an);
  get("asym_replicates", c.asym_replicates);
  get("budget_minutes", c.budget_minutes);
  get_pair("ell_box", c.ell_lo, c.ell_hi);
  get_pair("nu_box", c.nu_lo, c.nu_hi);
  get_pair("sigma2_box", c.sigma2_lo, c.sigma2_hi);
  c.eps = get_list("eps");

  for (const auto& e : split(s.at("estimators"), ',')) {
    try {
      const EstimatorKind k = estimator_from_string(e);
      if (std::find(c.estimators.begin(), c.estimators.end(), k) == c.estimators.end()) c.estimators.push_back(k);
    } catch (const std::invalid_argument&) {
      diag.errors.push_back("estimators: unknown estimator '" + e + "' (use ml, cv)");
    }
  }

  if (!s.at("points").empty()) {
    for (const auto& item : split(s.at("points"), ',')) {
      const auto parts = split(item, ':');
      ParamPoint p;
      if (parts.size() != 2 || !parse_number(parts[0], p.ell) || !parse_number(parts[1], p.nu)) {
        diag.errors.push_back("points: expected ell:nu, got '" + item + "'");
        continue;
      }
      c.points.push_back(p);
    }
  } else if (grid_kind(kind)) {
    double el = 0, eh = 0, nl = 0, nh = 0;
    int res = 0;
    get_pair("ell_range", el, eh);
    get_pair("nu_range", nl, nh);
    get("resolution", res);
    if (res < 1) {
      diag.errors.push_back("resolution must be >= 1");
    } else {
      for (double l : linspace(el, eh, res)) {
        for (double v : linspace(nl, nh, res)) c.points.push_back({l, v});
      }
    }
  } else {
    ParamPoint p;
    get("ell0", p.ell);
    get("nu0", p.nu);
    c.points.push_back(p);
  }
  return c;
}

namespace {

struct CostModel {
  double flops_per_second;
  double kernel_seconds = 1.5e-7;

  double kernel(double evaluations, bool nu_free) const { return evaluations * kernel_seconds * (nu_free ? 5.0 : 1.0); }
  double dense(double flops) const { return flops / flops_per_second; }

  double trace(double n, int p, bool cv, bool nu_free) const {
    return kernel(0.5 * n * n, nu_free) + dense(n * n * n * (1.0 + 2.0 * p + (cv ? 2.0 * p : 0.0)));
  }
  double estimate(double n, int p, EstimatorKind k, const OptimizerBudget& b, bool nu_free) const {
    const double evals = b.starts * 25.0;
    const double per = kernel(0.5 * n * n, nu_free) + dense(n * n * n * (k == EstimatorKind::kML ? 1.0 : 1.0 + 2.0 * p));
    return evals * per;
  }
  double prediction(double n, int nodes) const {
    const double m = n * (nodes + 1.0);
    return kernel(m * n + 0.5 * n * n, false) + dense(n * n * n / 3.0 + 2.0 * m * n * n);
  }
};

}  // namespace

Diagnostics validate(const ExperimentConfig& c) {
  Diagnostics d;
  const auto err = [&](std::string m) { d.errors.push_back(std::move(m)); };
  const auto warn = [&](std::string m) { d.warnings.push_back(std::move(m)); };

  if (c.family != "matern" && c.family != "variance") err("family must be 'matern' or 'variance'");
  if (c.family == "matern" && c.free != "ell" && c.free != "nu" && c.free != "both") {
    err("free must be ell, nu or both for the matern family");
  }
  if (c.family == "variance" && c.free != "sigma2") err("the variance family has the single parameter sigma2");
  if (c.n < 2) err("n must be at least 2");
  if (c.replicates < 1) err("replicates must be at least 1");
  if (c.threads < 0) err("threads must be >= 0");
  if (c.estimators.empty()) err("estimators: list is empty");
  if (c.optimizer.starts < 1) err("starts must be >= 1");
  if (c.optimizer.max_iterations < 1) err("max_iterations must be >= 1");
  if (c.quad_nodes < 1) err("quad_nodes must be >= 1");
  if (c.spectral_grid < 8) err("spectral_grid must be >= 8");
  if (c.asym_n < 2 || c.asym_replicates < 1) err("asym_n must be >= 2 and asym_replicates >= 1");
  if (c.budget_minutes < 0.0) err("budget_minutes must be >= 0");
  if (c.points.empty()) err("no parameter points");

  if (c.eps.empty()) err("eps: the epsilon list is empty");
  for (double e : c.eps) {
    if (e >= 0.5) {
      err("eps = " + num(e) +
          " rejected: epsilon must be below 1/2. At 1/2 two neighbouring points can coincide (minimal spacing "
          "1 - 2 eps = 0), so R_theta becomes singular");
    } else if (e < 0.0) {
      err("eps = " + num(e) + " rejected: epsilon must be >= 0");
    }
  }
  if (!(c.delta > 0.0) || 2.0 * c.delta >= 0.5) err("delta must satisfy 0 < 2 delta < 0.5");

  bool box_ok = true;
  if (!(c.ell_lo > 0.0 && c.ell_lo < c.ell_hi)) err("ell_box must satisfy 0 < low < high"), box_ok = false;
  if (!(c.nu_lo > 0.0 && c.nu_lo < c.nu_hi)) err("nu_box must satisfy 0 < low < high"), box_ok = false;
  if (!(c.sigma2_lo > 0.0 && c.sigma2_lo < c.sigma2_hi)) err("sigma2_box must satisfy 0 < low < high"), box_ok = false;

  const bool family_ok = (c.family == "matern" && (c.free == "ell" || c.free == "nu" || c.free == "both")) ||
                         (c.family == "variance" && c.free == "sigma2");
  if (box_ok && family_ok) {
    const ParamBox box = c.box();
    for (const auto& p : c.points) {
      if (!(p.ell > 0.0) || !(p.nu > 0.0)) {
        err("point (" + num(p.ell) + ", " + num(p.nu) + "): ell and nu must be positive");
        continue;
      }
      const Eigen::VectorXd th = c.theta_at(p);
      const std::string where = "theta0 at (ell0, nu0) = (" + num(p.ell) + ", " + num(p.nu) + ")";
      if (!box.contains(th)) {
        err(where + " lies outside the parameter box");
      } else if (!box.interior(th)) {
        warn(where + " lies on the box boundary; the asymptotic theory assumes an interior theta0");
      }
    }
  }

  const int p = c.family == "variance" || c.free != "both" ? 1 : 2;
  const bool has_cv = std::find(c.estimators.begin(), c.estimators.end(), EstimatorKind::kCV) != c.estimators.end();
  switch (c.kind) {
    case ExperimentKind::kToeplitz:
      if (p != 1) err("toeplitz closed forms need one free parameter (free = ell or nu)");
      if (std::any_of(c.eps.begin(), c.eps.end(), [](double e) { return e != 0.0; })) {
        warn("toeplitz closed forms hold at eps = 0 only; the eps list is ignored");
      }
      break;
    case ExperimentKind::kJoint:
      if (c.family != "matern" || c.free != "both") err("joint criteria need free = both");
      break;
    case ExperimentKind::kNormality:
      if (p != 1) err("normality study needs one free parameter");
      if (c.replicates < 8) err("normality study needs at least 8 replicates");
      break;
    case ExperimentKind::kMap:
      if (c.map_type != "local" && c.map_type != "global") err("map must be 'local' or 'global'");
      if (c.map_type == "local" && c.eps.size() != 1) err("local map takes a single centre epsilon");
      if (c.map_type == "local" && !c.eps.empty() && c.eps.front() + c.delta >= 0.5) {
        err("local map: eps + delta must stay below 1/2");
      }
      if (c.map_type == "global" &&
          std::none_of(c.eps.begin(), c.eps.end(), [](double e) { return e > 0.0; })) {
        err("global map needs at least one positive epsilon to compare against eps = 0");
      }
      break;
    case ExperimentKind::kPredict:
      if (c.predict_mode != "error" && c.predict_mode != "impact") err("mode must be 'error' or 'impact'");
      if (c.family != "matern") err("predict needs the matern family");
      break;
    default:
      break;
  }

  // Dry-run cost.
  const CostModel cm{2e10 * resolve_threads(c.threads)};
  const bool nu_free = c.family == "matern" && c.free != "ell";
  const double n = static_cast<double>(c.n);
  const double nodes = static_cast<double>(c.points.size());
  const double reps = c.replicates;
  double seconds = 0.0;
  std::int64_t cells = 0;
  double facts = 0.0;
  const auto reps_at = [&](double e) { return e == 0.0 ? 1.0 : reps; };
  switch (c.kind) {
    case ExperimentKind::kEstimate:
      cells = static_cast<std::int64_t>(nodes * c.eps.size());
      for (std::size_t i = 0; i < c.eps.size(); ++i) {
        for (auto k : c.estimators) {
          seconds += nodes * reps * cm.estimate(n, p, k, c.optimizer, nu_free);
          facts += nodes * reps * c.optimizer.starts * 25.0;
        }
      }
      break;
    case ExperimentKind::kAsymvar:
    case ExperimentKind::kJoint:
    case ExperimentKind::kEpsSweep:
      cells = static_cast<std::int64_t>(nodes * c.eps.size());
      for (double e : c.eps) {
        seconds += nodes * reps_at(e) * cm.trace(n, p, has_cv, nu_free);
        facts += nodes * reps_at(e);
      }
      break;
    case ExperimentKind::kMap:
      cells = static_cast<std::int64_t>(nodes);
      if (c.map_type == "local") {
        const double r = c.eps.empty() || c.eps.front() == 0.0 ? 1.0 + 2.0 * reps : 3.0 * reps;
        seconds += nodes * r * cm.trace(n, p, has_cv, nu_free);
        facts += nodes * r;
      } else {
        double r = 1.0;
        for (double e : c.eps) r += e > 0.0 ? reps : 0.0;
        seconds += nodes * r * cm.trace(n, p, has_cv, nu_free);
        facts += nodes * r;
      }
      break;
    case ExperimentKind::kToeplitz:
      cells = static_cast<std::int64_t>(nodes);
      seconds += nodes * (static_cast<double>(c.spectral_grid) * 200.0 * 12.0 * 1e-9 + 0.01);
      break;
    case ExperimentKind::kPredict:
      cells = static_cast<std::int64_t>(nodes * c.eps.size());
      for (double e : c.eps) {
        if (c.predict_mode == "error") {
          seconds += nodes * reps_at(e) * cm.prediction(n, c.quad_nodes);
          facts += nodes * reps_at(e);
        } else {
          for (auto k : c.estimators) {
            seconds += nodes * reps * (cm.prediction(n, c.quad_nodes) + cm.estimate(n, p, k, c.optimizer, nu_free));
            facts += nodes * reps * (2.0 + c.optimizer.starts * 25.0);
          }
        }
      }
      break;
    case ExperimentKind::kNormality:
      cells = static_cast<std::int64_t>(nodes * c.eps.size());
      for (std::size_t i = 0; i < c.eps.size(); ++i) {
        seconds += nodes * c.asym_replicates * cm.trace(static_cast<double>(c.asym_n), p, has_cv, nu_free);
        facts += nodes * c.asym_replicates;
        for (auto k : c.estimators) {
          seconds += nodes * reps * cm.estimate(n, p, k, c.optimizer, nu_free);
          facts += nodes * reps * c.optimizer.starts * 25.0;
        }
      }
      break;
  }
  d.cost.largest_matrix = c.kind == ExperimentKind::kNormality ? std::max(c.n, c.asym_n) : c.n;
  if (c.kind == ExperimentKind::kToeplitz) d.cost.largest_matrix = 0;
  d.cost.cells = cells;
  d.cost.factorizations = static_cast<std::int64_t>(facts);
  d.cost.projected_seconds = seconds;
  return d;
}

void print_diagnostics(std::ostream& os, const Diagnostics& d) {
  for (const auto& e : d.errors) os << "error: " << e << '\n';
  for (const auto& w : d.warnings) os << "warning: " << w << '\n';
  os << "cost: " << d.cost.cells << " cells, largest matrix " << d.cost.largest_matrix << " x "
     << d.cost.largest_matrix << ", about " << d.cost.factorizations << " factorizations, projected wall time "
     << num(d.cost.projected_seconds) << " s\n";
  os << (d.ok() ? "config OK\n" : "config rejected\n");
}

double anderson_darling_normal(std::vector<double> z) {
  if (z.empty()) throw std::invalid_argument("anderson_darling_normal: empty sample");
  std::sort(z.begin(), z.end());
  const auto n = static_cast<double>(z.size());
  const auto cdf = [](double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); };
  const auto sf = [](double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); };
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double lo = std::max(cdf(z[i]), 1e-300);
    const double hi = std::max(sf(z[z.size() - 1 - i]), 1e-300);
    s += (2.0 * static_cast<double>(i) + 1.0) * (std::log(lo) + std::log(hi));
  }
  return -n - s / n;
}

std::vector<NormalityStudy> normality_study(const CovarianceModel& model, const Eigen::VectorXd& theta0,
                                            Eigen::Index n, double epsilon, int n_replicates, std::uint64_t seed,
                                            const std::vector<EstimatorKind>& kinds, const ParamBox& box,
                                            const OptimizerBudget& budget, Eigen::Index asym_n, int asym_replicates,
                                            int threads) {
  if (model.num_params() != 1) throw std::invalid_argument("normality_study: one free parameter only");
  if (n_replicates < 2) throw std::invalid_argument("normality_study: need at least 2 replicates");
  const bool want_cv = std::find(kinds.begin(), kinds.end(), EstimatorKind::kCV) != kinds.end();
  ReportOptions opts;
  opts.include_cv = want_cv;
  opts.threads = threads;
  const AsymptoticReport ref = asym_report(model, theta0, epsilon, asym_n, asym_replicates, seed, opts);

  std::vector<std::vector<EstimateResult>> est(static_cast<std::size_t>(n_replicates));
  parallel_for(
      est.size(),
      [&](std::size_t r) {
        const PerturbedDesign design = sample_design(n, 1, epsilon, derive_seed(seed, 2 * r));
        const GpDataset data = simulate_dataset(model, theta0, design, derive_seed(seed, 2 * r + 1));
        for (auto k : kinds) est[r].push_back(estimate(model, data, k, box, budget));
      },
      threads);

  std::vector<NormalityStudy> out;
  for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
    NormalityStudy s;
    s.kind = kinds[ki];
    s.n = n;
    s.epsilon = epsilon;
    s.theta0 = theta0;
    s.seed = seed;
    s.asym_var = kinds[ki] == EstimatorKind::kML ? ref.asym_cov_ml(0, 0) : ref.asym_cov_cv(0, 0);
    for (const auto& rep : est) {
      const EstimateResult& e = rep[ki];
      if (!e.converged) {
        ++s.excluded;
        continue;
      }
      s.boundary_hits += e.boundary_hit ? 1 : 0;
      s.theta_hat.push_back(e.theta_hat[0]);
    }
    const auto m = static_cast<double>(s.theta_hat.size());
    if (m >= 2) {
      const double root_n = std::sqrt(static_cast<double>(n));
      std::vector<double> z;
      double mean = 0.0;
      for (double t : s.theta_hat) mean += root_n * (t - theta0[0]) / m;
      double ss = 0.0;
      int covered = 0;
      const double half = 1.6448536269514722 * std::sqrt(s.asym_var);
      for (double t : s.theta_hat) {
        const double u = root_n * (t - theta0[0]);
        ss += (u - mean) * (u - mean);
        covered += std::abs(u) <= half ? 1 : 0;
        z.push_back(u / std::sqrt(s.asym_var));
      }
      s.empirical_var = ss / (m - 1.0);
      s.coverage90 = covered / m;
      s.ad_statistic = anderson_darling_normal(z);
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

struct CellFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BudgetExceeded : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Runner {
 public:
  Runner(const ExperimentConfig& c, std::ostream& log)
      : c_(c), log_(log), start_(std::chrono::steady_clock::now()) {}

  void run() {
    switch (c_.kind) {
      case ExperimentKind::kEstimate: run_estimate(); break;
      case ExperimentKind::kAsymvar: run_asymvar(); break;
      case ExperimentKind::kToeplitz: run_toeplitz(); break;
      case ExperimentKind::kEpsSweep: run_eps_sweep(); break;
      case ExperimentKind::kMap: c_.map_type == "global" ? run_global_map() : run_local_map(); break;
      case ExperimentKind::kJoint: run_joint(); break;
      case ExperimentKind::kPredict: c_.predict_mode == "impact" ? run_impact() : run_predict(); break;
      case ExperimentKind::kNormality: run_normality(); break;
    }
  }

  std::string csv() const { return csv_.str(); }
  std::size_t rows() const { return rows_; }
  Json& results() { return results_; }
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  static std::string where(const ParamPoint& p, double eps) {
    return "cell (ell0=" + num(p.ell) + ", nu0=" + num(p.nu) + ", eps=" + num(eps) + ")";
  }

  template <class F>
  void cell(const std::string& name, F&& body) {
    log_ << name << " ..." << std::flush;
    try {
      body();
    } catch (const NumericalError& e) {
      log_ << " failed\n";
      throw CellFailure(name + ": " + e.what());
    }
    log_ << " done (" << num(elapsed()) << " s)\n";
    if (c_.budget_minutes > 0.0 && elapsed() > 60.0 * c_.budget_minutes) {
      throw BudgetExceeded("budget of " + num(c_.budget_minutes) + " min exceeded after " + name);
    }
  }

  void header(const std::string& h) { csv_ << h << '\n'; }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) csv_ << (i ? "," : "") << fields[i];
    csv_ << '\n';
    ++rows_;
  }

  bool has(EstimatorKind k) const {
    return std::find(c_.estimators.begin(), c_.estimators.end(), k) != c_.estimators.end();
  }

  ReportOptions opts() const {
    ReportOptions o;
    o.include_cv = has(EstimatorKind::kCV);
    o.threads = c_.threads;
    return o;
  }

  std::vector<std::string> param_names() const { return c_.model_at(c_.points.front())->param_names(); }

  void run_estimate() {
    std::string h = "ell0,nu0,epsilon,n,replicate,seed,estimator";
    for (const auto& p : param_names()) h += "," + p + "_hat";
    header(h + ",objective,converged,boundary_hit,evaluations");
    const ParamBox box = c_.box();
    for (const auto& pt : c_.points) {
      const auto model = c_.model_at(pt);
      const Eigen::VectorXd th0 = c_.theta_at(pt);
      for (double e : c_.eps) {
        std::vector<std::vector<EstimateResult>> est(static_cast<std::size_t>(c_.replicates));
        cell(where(pt, e), [&] {
          parallel_for(
              est.size(),
              [&](std::size_t r) {
                const PerturbedDesign design = sample_design(c_.n, 1, e, derive_seed(c_.seed, 2 * r));
                const GpDataset data = simulate_dataset(*model, th0, design, derive_seed(c_.seed, 2 * r + 1));
                for (auto k : c_.estimators) est[r].push_back(estimate(*model, data, k, box, c_.optimizer));
              },
              c_.threads);
        });
        for (std::size_t r = 0; r < est.size(); ++r) {
          for (const auto& res : est[r]) {
            std::vector<std::string> f = {num(pt.ell), num(pt.nu),        num(e),
                                          std::to_string(c_.n), std::to_string(r), std::to_string(c_.seed),
                                          std::string(to_string(res.kind))};
            for (Eigen::Index k = 0; k < res.theta_hat.size(); ++k) f.push_back(num(res.theta_hat[k]));
            f.push_back(num(res.objective_at_opt));
            f.push_back(res.converged ? "1" : "0");
            f.push_back(res.boundary_hit ? "1" : "0");
            f.push_back(std::to_string(res.evaluations));
            row(f);
          }
        }
      }
    }
  }

  AsymptoticReport report(const CovarianceModel& m, const Eigen::VectorXd& th0, double e) const {
    return asym_report(m, th0, e, c_.n, c_.replicates, c_.seed, opts());
  }

  void run_asymvar() {
    std::ostringstream h;
    write_report_csv_header(h, param_names().size());
    csv_ << "ell0,nu0," << h.str();
    results_["reports"] = Json::array();
    for (const auto& pt : c_.points) {
      const auto model = c_.model_at(pt);
      for (double e : c_.eps) {
        AsymptoticReport r;
        cell(where(pt, e), [&] { r = report(*model, c_.theta_at(pt), e); });
        csv_ << num(pt.ell) << ',' << num(pt.nu) << ',';
        write_report_csv_row(csv_, r);
        ++rows_;
        std::ostringstream js;
        write_report_json(js, r);
        results_["reports"].push_back(Json::parse(js.str()));
      }
    }
  }

  void run_toeplitz() {
    header("ell0,nu0,param,theta0,m,n_max,tail_bound,sigma_ml,sigma_cv1,sigma_cv2,V_ml,V_cv,d2_sigma_ml,var_ratio_ml");
    results_["spectra"] = Json::array();
    for (const auto& pt : c_.points) {
      const auto model = c_.model_at(pt);
      const Eigen::VectorXd th0 = c_.theta_at(pt);
      SpectralSequences s;
      ClosedFormSigmas cf;
      double d2 = 0.0;
      cell(where(pt, 0.0), [&] {
        s = build_spectra(*model, th0, c_.spectral_grid);
        cf = closed_form_sigmas(s);
        d2 = closed_form_d2_sigma_ml(s);
      });
      row({num(pt.ell), num(pt.nu), model->param_names()[0], num(th0[0]), std::to_string(s.m),
           std::to_string(s.n_max), num(s.tail_bound), num(cf.ml), num(cf.cv1), num(cf.cv2), num(cf.var_ml()),
           cf.cv2 > 0.0 ? num(cf.var_cv()) : "inf", num(d2), num(-d2 / cf.ml)});
      std::ostringstream js;
      write_spectra_json(js, s);
      results_["spectra"].push_back(Json::parse(js.str()));
    }
  }

  void run_eps_sweep() {
    header("ell0,nu0,param,epsilon,n,replicates,seed,V_ml,ratio_ml,V_cv,ratio_cv");
    const bool cv = has(EstimatorKind::kCV);
    for (const auto& pt : c_.points) {
      const auto model = c_.model_at(pt);
      const auto names = model->param_names();
      std::vector<AsymptoticReport> reps;
      for (double e : c_.eps) {
        cell(where(pt, e), [&] { reps.push_back(report(*model, c_.theta_at(pt), e)); });
      }
      for (std::size_t k = 0; k < names.size(); ++k) {
        const auto ki = static_cast<Eigen::Index>(k);
        for (const auto& r : reps) {
          const double vml = r.asym_cov_ml(ki, ki);
          std::vector<std::string> f = {num(pt.ell),
                                        num(pt.nu),
                                        names[k],
                                        num(r.epsilon),
                                        std::to_string(r.n),
                                        std::to_string(r.n_replicates),
                                        std::to_string(r.seed),
                                        num(vml),
                                        num(reps.front().asym_cov_ml(ki, ki) / vml)};
          if (cv) {
            const double vcv = r.asym_cov_cv(ki, ki);
            f.push_back(num(vcv));
            f.push_back(num(reps.front().asym_cov_cv(ki, ki) / vcv));
          } else {
            f.insert(f.end(), {"", ""});
          }
          row(f);
        }
      }
    }
  }

  void run_local_map() {
    header("ell0,nu0,param,epsilon,n,replicates,seed,delta,ratio_ml,ratio_ml_se,ratio_cv,ratio_cv_se,"
           "closed_form_ratio_ml");
    const double e0 = c_.eps.front();
    results_["curvatures"] = Json::array();
    for (const auto& pt : c_.points) {
      const auto model = c_.model_at(pt);
      const Eigen::VectorXd th0 = c_.theta_at(pt);
      EpsCurvature cur;
      double closed = std::numeric_limits<double>::quiet_NaN();
      cell(where(pt, e0), [&] {
        cur = eps_second_derivative(*model, th0, c_.n, c_.replicates, c_.seed, c_.delta, e0, opts());
        if (e0 == 0.0 && model->num_params() == 1) {
          closed = closed_form_var_ratio_ml(build_spectra(*model, th0, c_.spectral_grid));
        }
      });
      const auto names = model->param_names();
      for (std::size_t k = 0; k < names.size(); ++k) {
        const auto ki = static_cast<Eigen::Index>(k);
        row({num(pt.ell), num(pt.nu), names[k], num(e0), std::to_string(cur.n), std::to_string(cur.n_replicates),
             std::to_string(c_.seed), num(c_.delta), num(cur.var_ratio_ml[ki]), num(cur.var_ratio_ml_se[ki]),
             cur.has_cv ? num(cur.var_ratio_cv[ki]) : "", cur.has_cv ? num(cur.var_ratio_cv_se[ki]) : "",
             std::isnan(closed) ? "" : num(closed)});
      }
      std::ostringstream js;
      write_curvature_json(js, cur);
      results_["curvatures"].push_back(Json::parse(js.str()));
    }
  }

  void run_global_map() {
    header("ell0,nu0,param,epsilon,n,replicates,seed,V_ml_0,V_ml_eps,ratio_ml,V_cv_0,V_cv_eps,ratio_cv,cv_over_ml");
    const bool cv = has(EstimatorKind::kCV);
    for (const auto& pt : c_.points) {
      const auto model = c_.model_at(pt);
      const Eigen::VectorXd th0 = c_.theta_at(pt);
      AsymptoticReport base;
      cell(where(pt, 0.0), [&] { base = report(*model, th0, 0.0); });
      for (double e : c_.eps) {
        if (e == 0.0) continue;
        AsymptoticReport r;
        cell(where(pt, e), [&] { r = report(*model, th0, e); });
        const auto names = model->param_names();
        for (std::size_t k = 0; k < names.size(); ++k) {
          const auto ki = static_cast<Eigen::Index>(k);
          const double v0 = base.asym_cov_ml(ki, ki);
          const double ve = r.asym_cov_ml(ki, ki);
          std::vector<std::string> f = {num(pt.ell), num(pt.nu), names[k], num(e), std::to_string(r.n),
                                        std::to_string(r.n_replicates), std::to_string(c_.seed), num(v0), num(ve),
                                        num(v0 / ve)};
          if (cv) {
            const double c0 = base.asym_cov_cv(ki, ki);
            const double ce = r.asym_cov_cv(ki, ki);
            f.insert(f.end(), {num(c0), num(ce), num(c0 / ce), num(ce / ve)});
          } else {
            f.insert(f.end(), {"", "", "", ""});
          }
          row(f);
        }
      }
    }
  }

  void run_joint() {
    header("ell0,nu0,epsilon,n,replicates,seed,estimator,V_ell,V_nu,C,D");
    for (const auto& pt : c_.points) {
      const auto model = c_.model_at(pt);
      for (double e : c_.eps) {
        AsymptoticReport r;
        cell(where(pt, e), [&] { r = report(*model, c_.theta_at(pt), e); });
        for (auto k : c_.estimators) {
          const CovCriteria& cc = k == EstimatorKind::kML ? r.ml : r.cv;
          row({num(pt.ell), num(pt.nu), num(e), std::to_string(r.n), std::to_string(r.n_replicates),
               std::to_string(c_.seed), std::string(to_string(k)), num(cc.v[0]), num(cc.v[1]), num(cc.c),
               num(cc.d)});
        }
      }
    }
  }

  void run_predict() {
    write_prediction_csv_header(csv_);
    const MaternModel model = MaternModel::joint();
    for (const auto& pt : c_.points) {
      for (double e : c_.eps) {
        PredictionErrorReport r;
        cell(where(pt, e), [&] {
          r = prediction_error_report(model, Eigen::Vector2d(pt.ell, pt.nu), c_.n, e, c_.replicates, c_.seed,
                                      c_.quad_nodes, c_.threads);
        });
        write_prediction_csv_row(csv_, r, pt.ell, pt.nu);
        ++rows_;
      }
    }
  }

  void run_impact() {
    header("ell0,nu0,param,epsilon,n,replicates,seed,estimator,median_abs_diff,mean_e_true,excluded");
    const ParamBox box = c_.box();
    for (const auto& pt : c_.points) {
      const auto model = c_.model_at(pt);
      const std::string names = [&] {
        std::string s;
        for (const auto& p : model->param_names()) s += (s.empty() ? "" : "+") + p;
        return s;
      }();
      for (double e : c_.eps) {
        for (auto k : c_.estimators) {
          ImpactStudy st;
          cell(where(pt, e), [&] {
            st = estimation_impact_on_prediction(*model, c_.theta_at(pt), c_.n, e, k, box, c_.replicates, c_.seed,
                                                 c_.optimizer, c_.threads);
          });
          const bool any = !st.replicates.empty();
          row({num(pt.ell), num(pt.nu), names, num(e), std::to_string(c_.n), std::to_string(c_.replicates),
               std::to_string(c_.seed), std::string(to_string(k)), any ? num(st.median_abs_difference()) : "nan",
               any ? num(st.mean_e_true()) : "nan", std::to_string(st.excluded)});
        }
      }
    }
  }

  void run_normality() {
    header("ell0,nu0,param,epsilon,n,replicates,seed,estimator,asym_var,empirical_var,variance_ratio,coverage90,"
           "ad_statistic,ad_pass_1pct,excluded,boundary_hits");
    results_["studies"] = Json::array();
    for (const auto& pt : c_.points) {
      const auto model = c_.model_at(pt);
      for (double e : c_.eps) {
        std::vector<NormalityStudy> st;
        cell(where(pt, e), [&] {
          st = normality_study(*model, c_.theta_at(pt), c_.n, e, c_.replicates, c_.seed, c_.estimators, c_.box(),
                               c_.optimizer, c_.asym_n, c_.asym_replicates, c_.threads);
        });
        for (const auto& s : st) {
          row({num(pt.ell), num(pt.nu), model->param_names()[0], num(e), std::to_string(c_.n),
               std::to_string(c_.replicates), std::to_string(c_.seed), std::string(to_string(s.kind)),
               num(s.asym_var), num(s.empirical_var), num(s.variance_ratio()), num(s.coverage90),
               num(s.ad_statistic), s.ad_statistic < kAndersonDarling1Pct ? "1" : "0", std::to_string(s.excluded),
               std::to_string(s.boundary_hits)});
          results_["studies"].push_back({{"ell0", pt.ell},
                                         {"nu0", pt.nu},
                                         {"epsilon", e},
                                         {"estimator", to_string(s.kind)},
                                         {"theta_hat", s.theta_hat}});
        }
      }
    }
  }

  const ExperimentConfig& c_;
  std::ostream& log_;
  std::chrono::steady_clock::time_point start_;
  std::ostringstream csv_;
  std::size_t rows_ = 0;
  Json results_ = Json::object();
};

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string sidecar_path(const std::string& csv) {
  std::filesystem::path p(csv);
  if (p.extension() == ".json") return csv + ".meta.json";
  return p.replace_extension(".json").string();
}

}  // namespace

RunResult run(const ExperimentConfig& config, std::ostream& log) {
  RunResult res;
  const Diagnostics diag = validate(config);
  if (!diag.ok()) {
    res.code = ExitCode::kConfigError;
    res.message = diag.errors.front();
    return res;
  }
  for (const auto& w : diag.warnings) log << "warning: " << w << '\n';
  if (config.budget_minutes > 0.0 && diag.cost.projected_seconds > 60.0 * config.budget_minutes) {
    res.code = ExitCode::kBudgetExceeded;
    res.message = "projected wall time " + num(diag.cost.projected_seconds) + " s exceeds the budget of " +
                  num(config.budget_minutes) + " min";
    return res;
  }

  const std::string started = utc_now();
  Runner runner(config, log);
  std::string status = "ok";
  try {
    runner.run();
  } catch (const CellFailure& e) {
    res.code = ExitCode::kNumericalFailure;
    res.message = e.what();
    status = "numerical_failure";
  } catch (const BudgetExceeded& e) {
    res.code = ExitCode::kBudgetExceeded;
    res.message = e.what();
    status = "budget_exceeded";
  }
  res.rows = runner.rows();
  res.wall_seconds = runner.elapsed();

  const std::string out = config.out.empty() ? "gpgrid_" + kind_name(config.kind) + ".csv" : config.out;
  if (out == "-") {
    std::cout << runner.csv();
    res.csv_path = "-";
  } else {
    if (const auto dir = std::filesystem::path(out).parent_path(); !dir.empty()) {
      std::filesystem::create_directories(dir);
    }
    std::ofstream f(out, std::ios::binary);
    f << runner.csv();
    res.csv_path = out;
    res.json_path = sidecar_path(out);

    Json side;
    side["tool"] = "gpgrid";
    side["version"] = kVersion;
    side["experiment"] = kind_name(config.kind);
    side["status"] = status;
    if (!res.message.empty()) side["message"] = res.message;
    side["config"] = config.resolved;
    side["seeds"] = {{"base", config.seed},
                     {"streams",
                      "every cell uses the base seed; replicate r draws its design from derive_seed(seed, r) for "
                      "trace and prediction-error experiments and from derive_seed(seed, 2r) with observations "
                      "from derive_seed(seed, 2r + 1) for estimation experiments"}};
    side["threads"] = resolve_threads(config.threads);
    side["started_utc"] = started;
    side["wall_seconds"] = res.wall_seconds;
    side["projected_seconds"] = diag.cost.projected_seconds;
    side["rows"] = res.rows;
    side["csv"] = out;
    side["results"] = runner.results();
    std::ofstream j(res.json_path, std::ios::binary);
    j << side.dump(2) << '\n';
  }
  return res;
}

std::string run_to_string(const ExperimentConfig& config) {
  const Diagnostics diag = validate(config);
  if (!diag.ok()) throw std::invalid_argument(diag.errors.front());
  std::ostringstream sink;
  Runner runner(config, sink);
  runner.run();
  return runner.csv();
}

}  // namespace gpgrid
