#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gpgrid/errors.hpp"
#include "gpgrid/experiments.hpp"
#include "gpgrid/version.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<long long> n;
  std::optional<int> replicates;
  std::vector<std::string> eps;
  std::optional<std::string> out;
  std::optional<int> threads;
  std::optional<std::string> points;
  std::optional<std::string> free;
  std::optional<std::string> estimators;
  std::optional<std::string> map;
  std::optional<std::string> mode;
  std::optional<std::string> kind;
  bool fine = false;
  std::vector<std::string> set;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "key = value config file (flags win)");
  app->add_option("--seed", f.seed, "base seed (u64)");
  app->add_option("--n", f.n, "design size");
  app->add_option("--replicates", f.replicates, "Monte Carlo replicates");
  app->add_option("--eps", f.eps, "epsilon values")->delimiter(',');
  app->add_option("--out", f.out, "CSV output path ('-' for stdout)");
  app->add_option("--threads", f.threads, "worker threads (0: GPGRID_THREADS or all cores)");
  app->add_option("--points", f.points, "parameter points ell:nu,ell:nu,...");
  app->add_option("--free", f.free, "free parameters: ell, nu, both");
  app->add_option("--estimators", f.estimators, "ml, cv or ml,cv");
  app->add_flag("--fine", f.fine, "20 x 20 parameter grid instead of the coarse 5 x 5");
  app->add_option("--set", f.set, "any config key as key=value (repeatable)");
}

gpgrid::Settings collect(const Flags& f) {
  gpgrid::Settings s;
  if (!f.config.empty()) s = gpgrid::load_settings(f.config);
  for (const auto& kv : f.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    s[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  const auto put = [&](const char* key, const auto& opt) {
    if (opt) {
      if constexpr (std::is_same_v<std::decay_t<decltype(*opt)>, std::string>) {
        s[key] = *opt;
      } else {
        s[key] = std::to_string(*opt);
      }
    }
  };
  put("seed", f.seed);
  put("n", f.n);
  put("replicates", f.replicates);
  put("out", f.out);
  put("threads", f.threads);
  put("points", f.points);
  put("free", f.free);
  put("estimators", f.estimators);
  put("map", f.map);
  put("mode", f.mode);
  if (!f.eps.empty()) {
    std::string joined;
    for (const auto& e : f.eps) joined += (joined.empty() ? "" : ",") + e;
    s["eps"] = joined;
  }
  if (f.fine) s["resolution"] = "20";
  return s;
}

int run_kind(gpgrid::ExperimentKind kind, const Flags& f) {
  gpgrid::Diagnostics diag;
  gpgrid::ExperimentConfig cfg;
  try {
    cfg = gpgrid::settings_to_config(kind, collect(f), diag);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(gpgrid::ExitCode::kConfigError);
  }
  if (!diag.ok()) {
    gpgrid::print_diagnostics(std::cerr, diag);
    return static_cast<int>(gpgrid::ExitCode::kConfigError);
  }
  gpgrid::RunResult r;
  try {
    r = gpgrid::run(cfg, std::cerr);
  } catch (const gpgrid::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return static_cast<int>(gpgrid::ExitCode::kNumericalFailure);
  }
  switch (r.code) {
    case gpgrid::ExitCode::kOk:
      std::cerr << r.rows << " rows -> " << r.csv_path;
      if (!r.json_path.empty()) std::cerr << " (+ " << r.json_path << ")";
      std::cerr << " in " << r.wall_seconds << " s\n";
      break;
    case gpgrid::ExitCode::kConfigError: std::cerr << "config error: " << r.message << '\n'; break;
    case gpgrid::ExitCode::kNumericalFailure: std::cerr << "numerical failure in " << r.message << '\n'; break;
    case gpgrid::ExitCode::kBudgetExceeded: std::cerr << "budget exceeded: " << r.message << '\n'; break;
  }
  return static_cast<int>(r.code);
}

int run_validate(const Flags& f) {
  try {
    gpgrid::Settings s = collect(f);
    std::string kind_name = f.kind.value_or(s.contains("kind") ? s.at("kind") : "");
    const auto kind = gpgrid::experiment_from_string(kind_name);
    if (!kind) {
      std::cerr << "error: unknown or missing experiment kind '" << kind_name
                << "' (pass --kind or set kind = ... in the config)\n";
      return static_cast<int>(gpgrid::ExitCode::kConfigError);
    }
    gpgrid::Diagnostics parse_diag;
    const gpgrid::ExperimentConfig cfg = gpgrid::settings_to_config(*kind, s, parse_diag);
    gpgrid::Diagnostics diag = gpgrid::validate(cfg);
    diag.errors.insert(diag.errors.begin(), parse_diag.errors.begin(), parse_diag.errors.end());
    gpgrid::print_diagnostics(std::cout, diag);
    return diag.ok() ? 0 : static_cast<int>(gpgrid::ExitCode::kConfigError);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(gpgrid::ExitCode::kConfigError);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Asymptotic ML / CV covariance estimation on perturbed regular grids"};
  app.set_version_flag("--version", std::string(gpgrid::kVersion));
  app.require_subcommand(1);

  Flags flags;
  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"estimate", "replicated ML / CV estimation"},
      {"asymvar", "random-trace asymptotic covariance reports"},
      {"toeplitz", "closed forms on the regular grid (d = 1, one parameter)"},
      {"eps-sweep", "asymptotic variances along an epsilon list"},
      {"map", "local second-derivative or global ratio map over (ell0, nu0)"},
      {"joint", "V_ell, V_nu, C, D for joint estimation"},
      {"predict", "integrated prediction error or estimation impact"},
      {"normality", "replicated estimation against the asymptotic normal law"},
  };
  std::vector<std::pair<CLI::App*, gpgrid::ExperimentKind>> kinds;
  for (const auto& s : subs) {
    CLI::App* sc = app.add_subcommand(s.name, s.help);
    add_common(sc, flags);
    const auto kind = *gpgrid::experiment_from_string(s.name);
    if (kind == gpgrid::ExperimentKind::kMap) sc->add_option("--map", flags.map, "local or global");
    if (kind == gpgrid::ExperimentKind::kPredict) sc->add_option("--mode", flags.mode, "error or impact");
    kinds.emplace_back(sc, kind);
  }
  CLI::App* val = app.add_subcommand("validate", "check a config and print a cost estimate");
  add_common(val, flags);
  val->add_option("--kind", flags.kind, "experiment kind to validate");
  val->add_option("--map", flags.map, "local or global");
  val->add_option("--mode", flags.mode, "error or impact");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(gpgrid::ExitCode::kConfigError);
  }

  if (*val) return run_validate(flags);
  for (const auto& [sc, kind] : kinds) {
    if (*sc) return run_kind(kind, flags);
  }
  return static_cast<int>(gpgrid::ExitCode::kConfigError);
}
