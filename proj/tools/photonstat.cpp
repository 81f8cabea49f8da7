#include <iostream>

#include "CLI11.hpp"
#include "photonstat/app.hpp"

namespace app = photonstat::app;

int main(int argc, char** argv) {
  CLI::App cli{"Photon-stream simulation and TCSPC analysis"};
  cli.require_subcommand(1);

  app::Options opt;
  std::string config, out, stream;
  std::uint64_t seed = 0;
  auto common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", config, "JSON run configuration");
    if (config_required) c->required();
    sub->add_option("--out", out, "output file (simulate) or directory");
    sub->add_option("--seed", seed, "override sim.seed");
    sub->add_flag("--quiet", opt.quiet, "suppress progress messages");
  };

  auto* simulate = cli.add_subcommand("simulate", "simulate a photon stream (.phst)");
  common(simulate, true);
  auto* analyze = cli.add_subcommand("analyze", "analyze a stream into CSV/JSON/SVG reports");
  analyze->add_option("stream", stream, "input .phst file")->required();
  common(analyze, false);
  auto* saturate = cli.add_subcommand("saturate", "simulate a fluence series and fit saturation");
  common(saturate, true);
  auto* selftest = cli.add_subcommand("selftest", "run oracle-equivalence and analytic-limit checks");
  selftest->add_flag("--quiet", opt.quiet, "print failures only");

  CLI11_PARSE(cli, argc, argv);

  if (!config.empty()) opt.config = config;
  if (!out.empty()) opt.out = out;
  for (auto* sub : {simulate, analyze, saturate})
    if (sub->parsed() && sub->count("--seed")) opt.seed = seed;

  if (simulate->parsed()) return app::cmd_simulate(opt, std::cout, std::cerr);
  if (analyze->parsed()) return app::cmd_analyze(stream, opt, std::cout, std::cerr);
  if (saturate->parsed()) return app::cmd_saturate(opt, std::cout, std::cerr);
  return app::cmd_selftest(opt, std::cout, std::cerr);
}
