#include "radsim/acceptance.hpp"

#include "CLI11.hpp"

#include <fmt/format.h>

#include <cstdio>

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria, one line per criterion"};
  radsim::acceptance::Options opt;
  std::string scratch = "acceptance_scratch";
  app.add_option("--spins", opt.n_spins, "spins per walk");
  app.add_option("--replicates", opt.replicates, "full-structure replicates");
  app.add_option("--seed", opt.seed, "master seed");
  app.add_option("--threads", opt.threads, "worker threads (0 = all cores)");
  app.add_option("--scratch", scratch, "directory for determinism runs");
  app.add_option("--only", opt.only, "criterion groups to run (C1 C2 C3 C6 C7 C8)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  opt.scratch = scratch;
  opt.on_result = [](const radsim::acceptance::Result& r) {
    fmt::print("{}\n", radsim::acceptance::format_line(r));
    std::fflush(stdout);
  };
  radsim::acceptance::Suite suite(opt);
  suite.run();
  std::size_t passed = 0, failed = 0;
  for (const auto& r : suite.results())
    if (!r.informational) (r.pass ? passed : failed) += 1;
  fmt::print("{} passed, {} failed\n", passed, failed);
  return failed == 0 ? 0 : 1;
}
