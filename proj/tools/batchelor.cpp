// Command-line driver for the simulation and analysis pipeline.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "batchelor/harness.hpp"

namespace {

enum Exit { kOk = 0, kBadConfig = 1, kRuntime = 2, kCheckFailed = 3 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  unsigned workers = 1;
  std::string out;
};

batchelor::ExperimentConfig resolve(const Common& c) {
  batchelor::ExperimentConfig cfg =
      c.config.empty() ? batchelor::ExperimentConfig{} : batchelor::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  cfg.validate();
  return cfg;
}

void log(const std::string& stage, const batchelor::json& j) { std::cerr << stage << ": " << j.dump() << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Passive scalar blob simulation and nodal-line statistics"};
  app.require_subcommand(1, 0);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config, "JSON experiment configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", common.seed, "override the master seed");
  app.add_option("--workers", common.workers, "worker threads")->check(CLI::Range(1u, 1024u));
  app.add_option("--out", common.out, "output directory (overrides the config)");

  auto* calibrate = app.add_subcommand("calibrate", "estimate the Lyapunov exponent");
  auto* simulate = app.add_subcommand("simulate", "evolve blobs and render the snapshot");
  bool resume = false;
  simulate->add_flag("--resume", resume, "continue from checkpoint.bin when it matches the config");
  auto* contours = app.add_subcommand("contours", "extract zero-level isolines");
  auto* fractal = app.add_subcommand("fractal", "box-counting dimensions");
  auto* pdf = app.add_subcommand("pdf", "size and perimeter PDFs");
  auto* loewner = app.add_subcommand("loewner", "driving functions and kappa");
  auto* report = app.add_subcommand("report", "collect stage outputs into report.json");
  bool check = false;
  report->add_flag("--check", check, "exit 3 unless every headline check passes");
  auto* all = app.add_subcommand("all", "every stage in order");
  all->add_flag("--resume", resume, "continue the simulation from checkpoint.bin");
  auto* dump = app.add_subcommand("config", "print the effective configuration");

  CLI11_PARSE(app, argc, argv);

  batchelor::ExperimentConfig cfg;
  try {
    cfg = resolve(common);
  } catch (const std::exception& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kBadConfig;
  }

  try {
    const unsigned w = common.workers;
    if (*dump) {
      std::cout << cfg.to_json().dump(2) << '\n';
      return kOk;
    }
    if (*calibrate) log("calibrate", batchelor::stage_calibrate(cfg).to_json());
    if (*simulate || *all) log("simulate", batchelor::stage_simulate(cfg, w, resume));
    if (*contours || *all) log("contours", batchelor::stage_contours(cfg, w));
    if (*fractal || *all) log("fractal", batchelor::stage_fractal(cfg, w));
    if (*pdf || *all) log("pdf", batchelor::stage_pdf(cfg));
    if (*loewner || *all) log("loewner", batchelor::stage_loewner(cfg, w));
    if (*report || *all) {
      const batchelor::json r = batchelor::stage_report(cfg);
      bool ok = true;
      for (const auto& c : r["checks"]) {
        const bool pass = c["pass"].is_boolean() && c["pass"].get<bool>();
        ok = ok && pass;
        std::cout << (pass ? "PASS " : "FAIL ") << c["name"].get<std::string>() << ": "
                  << c["detail"].get<std::string>() << '\n';
      }
      for (const auto& f : r["flags"]) std::cout << "flag: " << f.get<std::string>() << '\n';
      if (check && !ok) return kCheckFailed;
    }
  } catch (const batchelor::config_error& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
