#include <iostream>
#include <string>

#include <omp.h>

#include "CLI11.hpp"
#include "heatshape/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Heat-equation boundary integral solver on a perturbed annulus"};
  app.require_subcommand(1);
  app.set_version_flag("--version", heatshape::version);

  struct Args {
    std::string scenario, out;
    int threads = 0;
  };
  Args args;
  const std::pair<const char*, const char*> tasks[] = {
      {"solve", "Solve for the layer densities"},
      {"dtn", "Compute the outer Neumann trace"},
      {"shape-diff", "Shape derivative of the outer Neumann trace along a direction"},
      {"verify", "Manufactured-solution convergence study"},
      {"invert", "Reconstruct the inner curve from synthetic outer Cauchy data"},
  };
  for (const auto& [name, help] : tasks) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--scenario", args.scenario, "Scenario or manifest JSON")->required();
    sub->add_option("--out", args.out, "Output directory")->required();
    sub->add_option("--threads", args.threads, "Worker threads (0 = auto)")->check(CLI::NonNegativeNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : heatshape::exit_validation;
  }
  if (args.threads > 0) omp_set_num_threads(args.threads);
  const std::string task = app.get_subcommands().front()->get_name();
  return heatshape::run_task(task, args.scenario, args.out, args.threads, std::cerr);
}
