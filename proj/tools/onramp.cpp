#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "onramp/pipeline.hpp"

int main(int argc, char** argv) {
  using namespace onramp::pipeline;
  CLI::App app{"on-ramp merging behavior toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  app.add_option("--config", config_path, "pipeline config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);

  struct Sub { const char* name; const char* help; int (*run)(const PipelineConfig&, std::ostream&); };
  const Sub subs[] = {
      {"synth", "write a synthetic scene under <out>/scene", cmd_synth},
      {"extract", "extract merging events", cmd_extract},
      {"fit", "fit one NHMM per event", cmd_fit},
      {"cluster", "segment primitives and cluster them", cmd_cluster},
      {"report", "write report tables", cmd_report},
      {"run-all", "run every stage in order", cmd_run_all},
  };
  for (const auto& s : subs) app.add_subcommand(s.name, s.help);

  CLI11_PARSE(app, argc, argv);

  PipelineConfig cfg;
  try {
    if (!config_path.empty()) cfg = load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (jobs) cfg.jobs = *jobs;
    check_bounds(cfg);
  } catch (const onramp::Error& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
  for (const auto& s : subs)
    if (app.got_subcommand(s.name)) return s.run(cfg, std::cerr);
  return 1;
}
