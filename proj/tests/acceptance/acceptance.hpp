#pragma once

#include <filesystem>
#include <functional>
#include <string>

namespace xfreq::acceptance {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  bool full_budget = false;  // run criteria 5-7 at the stated experiment size
  std::filesystem::path work_dir;
  std::filesystem::path cli;
  std::filesystem::path data_dir;
};

Outcome gradient_exactness(const Options& o);
Outcome renderer_oracle(const Options& o);
Outcome physics_identities(const Options& o);
Outcome overfit_reconstruction(const Options& o);
Outcome multifrequency_fit(const Options& o);
Outcome sparse_monotonicity(const Options& o);
Outcome ablation_ordering(const Options& o);
Outcome determinism_persistence(const Options& o);
Outcome metric_correctness(const Options& o);

}  // namespace xfreq::acceptance
