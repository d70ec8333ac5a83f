// wassdiff <study> --config path.json [--seed N] [--out dir] [--threads K]
//
// Exit status: 0 when every check passes, 2 when a check fails, 1 on configuration or
// runtime errors.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "wassdiff/wassdiff.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Runs diffusion sampler studies and writes report.json, CSV tables and SVG plots."};
  std::string study;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  int threads = 1;
  app.add_option("study", study, "Study to run")
      ->required()
      ->check(CLI::IsMember(wassdiff::study_names()));
  app.add_option("--config", config_path, "JSON configuration file")->required();
  auto* seed_opt = app.add_option("--seed", seed, "Override the configured seed");
  auto* out_opt = app.add_option("--out", out_dir, "Output directory");
  app.add_option("--threads", threads, "Worker threads (results do not depend on it)")
      ->check(CLI::Range(1, 1024));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    wassdiff::ConfigOverrides overrides;
    if (*seed_opt) overrides.seed = seed;
    if (*out_opt) overrides.out_dir = out_dir;
    overrides.threads = threads;
    const auto config = wassdiff::load_config(config_path, study, overrides);
    const auto result = wassdiff::run_study(config);
    wassdiff::write_outputs(result, config.out_dir);
    for (const auto& c : result.checks) {
      std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << " value=" << wassdiff::format_number(c.value)
                << "\n";
    }
    std::cout << (result.all_pass() ? "all checks passed" : "some checks failed") << "; report written to "
              << (config.out_dir / "report.json").string() << "\n";
    return result.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
