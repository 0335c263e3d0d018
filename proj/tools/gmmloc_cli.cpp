// gmmloc command-line entry point.
//
//   gmmloc simulate  [--config F] [--seed N] [--out DIR] [--set key=value ...]
//   gmmloc fit-map   [common] [--cloud PATH]
//   gmmloc adapt     [common] [--map PATH]
//   gmmloc localize  [common] [--depth clean|degraded] [--map PATH]
//                    [--adapted-map PATH] [--correction PATH] [--label NAME]
//   gmmloc eval      [--truth P --est P] [--depth-a P --depth-b P]
//                    [--cloud-a P --cloud-b P] [--bins N] [--report PATH]
//
// Exit status: 0 success, 1 input error, 2 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "gmmloc/commands.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<long long> seed;
  std::string out = "out";
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "flat key = value config file");
    app->add_option("--seed", seed, "master seed (overrides the config)");
    app->add_option("--out", out, "output directory")->capture_default_str();
    app->add_option("--set", sets, "override a config key: key=value");
  }

  gmmloc::RunConfig load() const {
    gmmloc::RunConfig cfg;
    if (!config.empty()) cfg = gmmloc::RunConfig::from_file(config);
    for (const auto& s : sets) cfg.set_assignment(s);
    if (seed) cfg.set("seed", std::to_string(*seed));
    return cfg;
  }
};

std::optional<std::filesystem::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::filesystem::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GMM-map monocular localization back end"};
  app.require_subcommand(1);

  Common sim_c, fit_c, adapt_c, loc_c;
  auto* sim = app.add_subcommand("simulate", "render scene, trajectory and depth sequences");
  sim_c.attach(sim);

  auto* fit = app.add_subcommand("fit-map", "fit the GMM map to the scene point cloud");
  fit_c.attach(fit);
  std::string fit_cloud;
  fit->add_option("--cloud", fit_cloud, "point cloud (default <out>/cloud.xyz)");

  auto* adapt = app.add_subcommand("adapt", "jointly train map transform and depth correction");
  adapt_c.attach(adapt);
  std::string adapt_map;
  adapt->add_option("--map", adapt_map, "base map (default <out>/map.gmm)");

  auto* loc = app.add_subcommand("localize", "run the particle filter over the depth sequence");
  loc_c.attach(loc);
  gmmloc::cli::LocalizeOptions lopt;
  std::string loc_map, loc_adapted, loc_corr;
  loc->add_option("--depth", lopt.depth, "clean | degraded")->capture_default_str();
  loc->add_option("--map", loc_map, "map file (default <out>/map.gmm)");
  loc->add_option("--adapted-map", loc_adapted, "adapted map file");
  loc->add_option("--correction", loc_corr, "depth correction file");
  loc->add_option("--label", lopt.label, "name for the output files");

  auto* ev = app.add_subcommand("eval", "compare artifact files");
  std::string truth, est, da, db, ca, cb, report;
  int bins = 20;
  ev->add_option("--truth", truth, "ground-truth trajectory");
  ev->add_option("--est", est, "estimated trajectory");
  ev->add_option("--depth-a", da, "depth raster");
  ev->add_option("--depth-b", db, "depth raster");
  ev->add_option("--cloud-a", ca, "reference point cloud");
  ev->add_option("--cloud-b", cb, "adapted point cloud");
  ev->add_option("--bins", bins, "histogram bins")->capture_default_str();
  ev->add_option("--report", report, "also write the report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*sim) {
      const auto r = gmmloc::cli::cmd_simulate(sim_c.load(), sim_c.out);
      std::printf("simulated %zu frames into %s\n", r.frames, sim_c.out.c_str());
    } else if (*fit) {
      const auto r = gmmloc::cli::cmd_fit_map(fit_c.load(), fit_c.out, opt_path(fit_cloud));
      for (std::size_t i = 0; i < r.avg_loglik.size(); ++i)
        std::printf("em %zu avg_loglik %.9g\n", i, r.avg_loglik[i]);
    } else if (*adapt) {
      const auto r = gmmloc::cli::cmd_adapt(adapt_c.load(), adapt_c.out, opt_path(adapt_map));
      std::printf("loss %.9g -> %.9g, mean displacement %.9g m, median c2c %.9g m\n",
                  r.train.loss_history.front(), r.train.loss_history.back(),
                  r.mean_displacement, r.median_c2c);
    } else if (*loc) {
      lopt.map = opt_path(loc_map);
      lopt.adapted_map = opt_path(loc_adapted);
      lopt.correction = opt_path(loc_corr);
      const auto r = gmmloc::cli::cmd_localize(loc_c.load(), loc_c.out, lopt);
      std::printf("%s position_rmse %.9g\n", r.label.c_str(), r.rmse);
    } else if (*ev) {
      gmmloc::cli::EvalOptions eo{opt_path(truth), opt_path(est), opt_path(da),
                                  opt_path(db),    opt_path(ca),  opt_path(cb), bins};
      std::cout << gmmloc::cli::cmd_eval(eo, opt_path(report));
    }
  } catch (const gmmloc::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 2;
  } catch (const gmmloc::InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
