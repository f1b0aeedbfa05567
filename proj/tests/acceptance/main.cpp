#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "acceptance.hpp"
#include "xfreq/error.hpp"
#include "xfreq/parallel.hpp"

using namespace xfreq::acceptance;

namespace {

struct Criterion {
  int number;
  const char* name;
  Outcome (*run)(const Options&);
};

const std::vector<Criterion> kCriteria = {
    {1, "gradient exactness", gradient_exactness},
    {2, "renderer oracle equivalence", renderer_oracle},
    {3, "physics oracle identities", physics_identities},
    {4, "overfit reconstruction", overfit_reconstruction},
    {5, "multi-frequency fit", multifrequency_fit},
    {6, "sparse-frequency monotonicity", sparse_monotonicity},
    {7, "ablation ordering", ablation_ordering},
    {8, "determinism and persistence", determinism_persistence},
    {9, "metric correctness", metric_correctness},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> which;
  Options o;
  std::string work = std::filesystem::temp_directory_path() / "xfreq_acceptance";
  std::string cli = XFREQ_CLI_PATH;
  std::string data = XFREQ_TEST_DATA;
  app.add_option("--criterion", which, "Criteria to run (default: all)")->check(CLI::Range(1, 9));
  app.add_flag("--full", o.full_budget, "Run criteria 5-7 at their stated experiment size");
  app.add_option("--work-dir", work, "Scratch directory");
  app.add_option("--cli", cli, "Path to the xfreq executable");
  CLI11_PARSE(app, argc, argv);
  o.work_dir = work;
  o.cli = cli;
  o.data_dir = data;
  xfreq::set_thread_count(1);

  bool all_pass = true;
  for (const auto& c : kCriteria) {
    if (!which.empty() && std::find(which.begin(), which.end(), c.number) == which.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = c.run(o);
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char timing[64];
    std::snprintf(timing, sizeof timing, " [%.1f s]", secs);
    std::cout << "criterion " << c.number << " (" << c.name << "): " << (r.pass ? "PASS" : "FAIL") << " - "
              << r.detail << timing << std::endl;
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}
