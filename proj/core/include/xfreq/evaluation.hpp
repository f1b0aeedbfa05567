#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "xfreq/io.hpp"
#include "xfreq/metrics.hpp"
#include "xfreq/training.hpp"

namespace xfreq {

enum class SplitMode { Random, Lofo, Sparse };

/// Parsed form of random:<test fraction>:<seed> | lofo:<GHz> | sparse:<GHz list>@<target GHz>.
struct SplitSpec {
  SplitMode mode = SplitMode::Random;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  double held_out = 0.0;              // Hz, lofo
  std::vector<double> train_bands;    // Hz, sparse
  double target = 0.0;                // Hz, sparse

  static SplitSpec parse(const std::string& text);
  std::string to_string() const;
};

struct SplitPlan {
  SplitSpec spec;
  std::vector<std::size_t> train;  // dataset positions
  std::vector<std::size_t> test;

  /// Throws InvalidSplit when train and test overlap, when a held-out band
  /// leaks into training, or when either side is empty.
  void check(const Dataset& data) const;
};

SplitPlan make_split(const Dataset& data, const SplitSpec& spec);

/// True when two carrier frequencies name the same band.
bool same_band(double a, double b);

struct EvalRow {
  std::string id;
  double frequency;
  double ssim;
  double psnr;
};

struct EvalReport {
  std::string label;
  std::string split;
  std::string variant;
  std::uint64_t seed = 0;
  std::size_t train_samples = 0;
  std::vector<EvalRow> rows;  // sorted by id
  double mean_ssim = 0.0;
  double median_ssim = 0.0;
  double ssim_at_90 = 0.0;  // nearest-rank 90% CDF level
  double mean_psnr = 0.0;
  double median_psnr = 0.0;
  std::vector<CdfPoint> ssim_cdf;
  std::vector<CdfPoint> psnr_cdf;

  static EvalReport from_scores(std::vector<SampleScore> scores);
  std::string rows_csv() const;
  std::string summary_yaml() const;
  static std::string cdf_csv(const std::vector<CdfPoint>& points);
  void write(const std::filesystem::path& dir) const;
};

/// Fresh model for a run configuration over the dataset's room.
Model initial_model(const io::RunConfig& cfg, const Dataset& data);

struct SplitRun {
  Model model;
  EvalReport report;
};

using LogFn = std::function<void(const LogRow&)>;

/// Trains on plan.train from a fresh model and evaluates on plan.test.
SplitRun run_split(const Dataset& data, const SplitPlan& plan, const io::RunConfig& cfg, const LogFn& on_log = {});

/// Same as run_split with the named model variant.
SplitRun ablate(const Dataset& data, const SplitPlan& plan, const io::RunConfig& cfg, const std::string& variant,
                const LogFn& on_log = {});

}  // namespace xfreq
