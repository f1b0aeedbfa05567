#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>

#include "xfreq/evaluation.hpp"

using namespace xfreq;

namespace {

const std::vector<double> kBands = {1e9, 10e9, 24.25e9, 37e9, 60e9, 94e9};

Dataset banded_dataset(int tx_per_band = 3) {
  Dataset d;
  d.grid = AngularGrid(12, 24);
  d.rx.center = Vec3(2.5, 2.0, 1.5);
  d.bounds = Box{Vec3(0, 0, 0), Vec3(5, 4, 3)};
  for (int t = 0; t < tx_per_band; ++t) {
    for (double f : kBands) {
      std::vector<double> v(d.grid.size(), 0.1);
      v[static_cast<std::size_t>(t)] = 1.0;
      std::ostringstream id;
      id << "tx" << t << "_f" << f / 1e9;
      d.samples.push_back({id.str(), TxDescriptor{Vec3(1.0 + t, 1.0, 1.0), f}, PASMap(d.grid, v)});
    }
  }
  return d;
}

std::optional<Errc> code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("split spec parsing") {
  const auto r = SplitSpec::parse("random:0.2:7");
  CHECK(r.mode == SplitMode::Random);
  CHECK(r.test_fraction == 0.2);
  CHECK(r.seed == 7);
  CHECK(r.to_string() == "random:0.2:7");

  const auto l = SplitSpec::parse("lofo:24.25");
  CHECK(l.mode == SplitMode::Lofo);
  CHECK(l.held_out == doctest::Approx(24.25e9));
  CHECK(l.to_string() == "lofo:24.25");

  const auto s = SplitSpec::parse("sparse:10,37@24.25");
  CHECK(s.mode == SplitMode::Sparse);
  REQUIRE(s.train_bands.size() == 2);
  CHECK(s.train_bands[1] == doctest::Approx(37e9));
  CHECK(s.target == doctest::Approx(24.25e9));
  CHECK(SplitSpec::parse(s.to_string()).to_string() == s.to_string());

  for (const char* bad : {"", "random", "random:0.2", "random:1.5:1", "random:0.2:-1", "random:0.2:1.5",
                          "lofo:", "lofo:abc", "lofo:-3", "sparse:10,37", "sparse:@24", "sparse:10,,37@24",
                          "kfold:3", "random:0.2:1:extra"})
    CHECK_MESSAGE(code_of([&] { SplitSpec::parse(bad); }) == Errc::InvalidSplitSpec, std::string(bad));
}

TEST_CASE("random split is deterministic and disjoint") {
  const auto d = banded_dataset();
  const auto a = make_split(d, SplitSpec::parse("random:0.2:3"));
  const auto b = make_split(d, SplitSpec::parse("random:0.2:3"));
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(a.test.size() == 4);  // round(0.2 * 18)
  CHECK(a.train.size() + a.test.size() == d.samples.size());
  std::set<std::size_t> all(a.train.begin(), a.train.end());
  for (auto i : a.test) CHECK(all.insert(i).second);
  const auto c = make_split(d, SplitSpec::parse("random:0.2:4"));
  CHECK(c.test != a.test);
  CHECK(code_of([&] { make_split(d, SplitSpec::parse("random:0.01:1")); }) == Errc::InvalidSplit);
}

TEST_CASE("lofo excludes the held-out band from training") {
  const auto d = banded_dataset();
  const auto p = make_split(d, SplitSpec::parse("lofo:24.25"));
  CHECK(p.test.size() == 3);
  CHECK(p.train.size() == 15);
  for (auto i : p.train) CHECK_FALSE(same_band(d.samples[i].tx.frequency, 24.25e9));
  for (auto i : p.test) CHECK(same_band(d.samples[i].tx.frequency, 24.25e9));
  CHECK(code_of([&] { make_split(d, SplitSpec::parse("lofo:5")); }) == Errc::InvalidSplit);

  auto leaky = p;
  leaky.train.push_back(p.test[0]);
  CHECK(code_of([&] { leaky.check(d); }) == Errc::InvalidSplit);
}

TEST_CASE("sparse split keeps only the listed bands") {
  const auto d = banded_dataset();
  const auto p = make_split(d, SplitSpec::parse("sparse:10,37@24.25"));
  CHECK(p.train.size() == 6);
  CHECK(p.test.size() == 3);
  for (auto i : p.train) {
    const double f = d.samples[i].tx.frequency;
    CHECK((same_band(f, 10e9) || same_band(f, 37e9)));
  }
  const auto wide = make_split(d, SplitSpec::parse("sparse:1,10,37,60,94@24.25"));
  CHECK(wide.train.size() == 15);
  CHECK(wide.test == p.test);
  CHECK(code_of([&] { make_split(d, SplitSpec::parse("sparse:10,37@94")); }) == Errc::InvalidSplit);
  CHECK(code_of([&] { make_split(d, SplitSpec::parse("sparse:10,24.25,37@24.25")); }) == Errc::InvalidSplit);

  auto leaky = p;
  leaky.train.push_back(p.test[0]);
  CHECK(code_of([&] { leaky.check(d); }) == Errc::InvalidSplit);
  Dataset empty;
  CHECK(code_of([&] { make_split(empty, SplitSpec::parse("lofo:1")); }) == Errc::EmptyDataset);
}

TEST_CASE("report statistics and files") {
  std::vector<SampleScore> scores;
  for (int i = 100; i >= 1; --i) {
    std::ostringstream id;
    id << "s" << (i < 10 ? "00" : i < 100 ? "0" : "") << i;
    scores.push_back({id.str(), 1e9, i / 100.0, static_cast<double>(i)});
  }
  auto r = EvalReport::from_scores(scores);
  CHECK(r.rows.front().id == "s001");
  CHECK(r.rows.back().id == "s100");
  CHECK(r.mean_ssim == doctest::Approx(0.505));
  CHECK(r.median_ssim == doctest::Approx(0.50));
  CHECK(r.ssim_at_90 == doctest::Approx(0.90));
  CHECK(r.mean_psnr == doctest::Approx(50.5));
  CHECK_FALSE(r.ssim_cdf.empty());
  CHECK(code_of([] { EvalReport::from_scores({}); }) == Errc::EmptyList);

  r.label = "eval";
  r.split = "random:0.2:1";
  r.variant = "full";
  const auto dir = std::filesystem::temp_directory_path() / "xfreq_test_report";
  std::filesystem::remove_all(dir);
  r.write(dir);
  const auto csv = slurp(dir / "samples.csv");
  CHECK(csv.rfind("id,frequency_ghz,ssim,psnr_db\ns001,1,0.01", 0) == 0);
  const auto yaml = slurp(dir / "summary.yaml");
  CHECK(yaml.find("cdf_90: 0.9") != std::string::npos);
  CHECK(yaml.find("split: \"random:0.2:1\"") != std::string::npos);
  CHECK(slurp(dir / "cdf_ssim.csv").rfind("fraction,threshold\n", 0) == 0);
  CHECK(std::filesystem::exists(dir / "cdf_psnr.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("run_split trains on train samples only and scores the test side") {
  const auto d = banded_dataset(1);
  auto cfg = io::RunConfig::desk_scale();
  cfg.model.gaussians = 8;
  cfg.network.hidden_width = 8;
  cfg.network.head_width = 8;
  cfg.network.latent_dim = 4;
  cfg.train.iterations = 3;
  const auto plan = make_split(d, SplitSpec::parse("lofo:24.25"));
  const auto a = run_split(d, plan, cfg);
  CHECK(a.report.rows.size() == 1);
  CHECK(a.report.rows[0].id == "tx0_f24.25");
  CHECK(a.report.train_samples == 5);
  CHECK(a.report.split == "lofo:24.25");
  const auto b = ablate(d, plan, cfg, "no_aos");
  CHECK(b.report.variant == "no_aos");
  CHECK(b.report.label == "ablate");
  CHECK(b.report.seed == a.report.seed);
  CHECK(code_of([&] { ablate(d, plan, cfg, "bogus"); }) == Errc::UnknownVariant);
  const auto again = run_split(d, plan, cfg);
  CHECK(again.report.rows[0].ssim == a.report.rows[0].ssim);
}
