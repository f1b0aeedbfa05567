#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xfreq/evaluation.hpp"
#include "xfreq/io.hpp"
#include "xfreq/parallel.hpp"

namespace fs = std::filesystem;
using namespace xfreq;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct Common {
  bool deterministic = false;
  int threads = 0;
  bool paper_scale = false;
};

void apply_threads(const Common& c) {
  int n = c.threads;
  if (n <= 0) {
    if (const char* env = std::getenv("XFREQ_THREADS")) {
      try {
        n = std::stoi(env);
      } catch (const std::exception&) {
        fail(Errc::ConfigError, std::string("XFREQ_THREADS is not an integer: ") + env);
      }
    }
  }
  if (c.deterministic) n = 1;
  set_thread_count(n);
}

io::RunConfig base_config(const Common& c) {
  return c.paper_scale ? io::RunConfig::paper_scale() : io::RunConfig::desk_scale();
}

io::RunConfig load_run_config(const Common& c, const std::string& path) {
  io::RunConfig cfg = path.empty() ? base_config(c) : io::load_config(path, base_config(c));
  if (c.deterministic) {
    cfg.train.deterministic = true;
    cfg.render.deterministic = true;
  }
  return cfg;
}

void print_log(const LogRow& r, std::ostream* csv) {
  std::cout << "iter " << r.iteration << " loss " << std::setprecision(6) << r.loss << " l1 " << r.l1 << " 1-ssim "
            << r.ssim_term << " psnr " << r.psnr << " (" << std::setprecision(4) << r.wall_ms / 1000.0 << " s)"
            << std::endl;
  if (csv) *csv << r.iteration << ',' << std::setprecision(17) << r.loss << ',' << r.l1 << ',' << r.ssim_term << ','
                << r.psnr << '\n';
}

std::string split_summary(const Dataset& data, const SplitPlan& plan) {
  std::ostringstream os;
  os << "split " << plan.spec.to_string() << ": " << plan.train.size() << " train, " << plan.test.size() << " test";
  if (plan.spec.mode != SplitMode::Random) {
    const double banned = plan.spec.mode == SplitMode::Lofo ? plan.spec.held_out : plan.spec.target;
    bool clean = true;
    for (auto i : plan.train) clean = clean && !same_band(data.samples[i].tx.frequency, banned);
    os << "; train excludes " << banned / 1e9 << " GHz: " << (clean ? "yes" : "NO");
  }
  return os.str();
}

std::vector<std::size_t> all_indices(const Dataset& d) {
  std::vector<std::size_t> v(d.samples.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

// ---- generate ----

struct GenerateArgs {
  std::string scene;
  std::string out;
  bool export_csv = false;
};

int cmd_generate(const Common& c, const GenerateArgs& a) {
  apply_threads(c);
  const std::string text = io::read_text(a.scene);
  auto scene = io::parse_scene(text, a.scene);
  if (c.paper_scale) scene.grid = AngularGrid(90, 360);
  const auto m = io::generate_dataset(scene, io::fnv1a_hex(text), a.out);
  if (a.export_csv) {
    for (const auto& s : m.samples) {
      const fs::path p = fs::path(a.out) / s.path;
      io::export_csv(fs::path(p).replace_extension(".csv"), io::read_pas_grid(p).map);
    }
  }
  std::cout << "wrote " << m.samples.size() << " samples (" << m.grid.rows() << "x" << m.grid.cols() << ") to "
            << a.out << "\n";
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string manifest;
  std::string config;
  std::string out;
  std::string resume;
  std::string split;
  std::string log;
  std::optional<std::uint64_t> iterations;
  std::optional<std::uint64_t> stop_at;
};

int cmd_train(const Common& c, const TrainArgs& a) {
  apply_threads(c);
  io::Checkpoint ck;
  if (!a.resume.empty()) {
    if (!a.config.empty()) fail(Errc::ConfigError, "--config cannot be combined with --resume");
    ck = io::read_checkpoint(a.resume);
    if (c.deterministic) {
      ck.config.train.deterministic = true;
      ck.config.render.deterministic = true;
    }
  } else {
    ck.config = load_run_config(c, a.config);
  }
  if (a.iterations) ck.config.train.iterations = *a.iterations;
  if (!a.split.empty()) {
    if (!a.resume.empty() && a.split != ck.config.split)
      fail(Errc::ConfigError, "--split differs from the split stored in the checkpoint");
    ck.config.split = SplitSpec::parse(a.split).to_string();
  }
  ck.config.validate();

  const Dataset data = io::load_dataset(a.manifest);
  std::vector<std::size_t> train_idx = all_indices(data);
  if (!ck.config.split.empty()) {
    const auto plan = make_split(data, SplitSpec::parse(ck.config.split));
    std::cout << split_summary(data, plan) << "\n";
    train_idx = plan.train;
  }
  const Dataset train = data.subset(train_idx);

  if (a.resume.empty()) {
    ck.model = initial_model(ck.config, data);
    ck.optimizer = OptimizerState::zeros_like(ck.model);
    ck.rx = data.rx;
    ck.grid = data.grid;
  } else if (!(ck.grid == data.grid)) {
    fail(Errc::GridMismatch, "checkpoint grid does not match the dataset grid");
  }

  Trainer trainer(train, ck.model, ck.config.train, ck.config.render);
  trainer.optimizer() = ck.optimizer;
  trainer.set_iteration(ck.iteration);
  if (!ck.rng_state.empty()) io::set_rng_state(trainer.rng(), ck.rng_state);

  auto save = [&](const Trainer& t) {
    io::Checkpoint out = ck;
    out.model = t.model();
    out.optimizer = t.optimizer();
    out.iteration = t.iteration();
    out.rng_state = io::rng_state(t.rng());
    io::write_checkpoint(a.out, out);
  };

  std::ofstream csv;
  if (!a.log.empty()) {
    const bool append = !a.resume.empty() && fs::exists(a.log);
    csv.open(a.log, append ? std::ios::app : std::ios::trunc);
    if (!csv) fail(Errc::IoError, "cannot open log file " + a.log);
    if (!append) csv << "iteration,loss,l1,one_minus_ssim,psnr_db\n";
  }
  const std::uint64_t until = a.stop_at ? std::min(*a.stop_at, ck.config.train.iterations) : ck.config.train.iterations;
  if (trainer.iteration() < until) {
    trainer.run(until, [&](const LogRow& r) { print_log(r, csv.is_open() ? &csv : nullptr); }, save,
                ck.config.checkpoint_interval);
  }
  save(trainer);
  std::cout << "checkpoint at iteration " << trainer.iteration() << " written to " << a.out << "\n";
  return 0;
}

// ---- render ----

struct RenderArgs {
  std::string checkpoint;
  std::vector<double> tx;
  double frequency_ghz = 0.0;
  std::string out;
  bool extrapolate = false;
  bool export_csv = false;
};

int cmd_render(const Common& c, const RenderArgs& a) {
  apply_threads(c);
  const auto ck = io::read_checkpoint(a.checkpoint);
  RenderOptions opts = ck.config.render;
  if (c.deterministic) opts.deterministic = true;
  opts.allow_extrapolation = a.extrapolate;
  const TxDescriptor tx{Vec3(a.tx[0], a.tx[1], a.tx[2]), a.frequency_ghz * 1e9};
  tx.validate();
  const PASMap map = render(ck.model, tx, ck.rx, ck.grid, opts);
  io::write_pas_grid(a.out, tx, map);
  if (a.export_csv) io::export_csv(fs::path(a.out).replace_extension(".csv"), map);
  const auto k = map.argmax();
  const auto& g = map.grid();
  const int row = static_cast<int>(k / static_cast<std::size_t>(g.cols()));
  const int col = static_cast<int>(k % static_cast<std::size_t>(g.cols()));
  std::cout << "max power at azimuth " << g.cell_azimuth(col) << " deg, elevation " << g.cell_elevation(row)
            << " deg\n";
  return 0;
}

// ---- eval ----

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string split;
  std::string out;
};

int cmd_eval(const Common& c, const EvalArgs& a) {
  apply_threads(c);
  const auto ck = io::read_checkpoint(a.checkpoint);
  const Dataset data = io::load_dataset(a.manifest);
  const std::string spec = a.split.empty() ? ck.config.split : a.split;
  if (spec.empty()) fail(Errc::InvalidSplitSpec, "no split given and the checkpoint was trained on every sample");
  const auto plan = make_split(data, SplitSpec::parse(spec));
  if (!ck.config.split.empty() && !a.split.empty()) {
    // The checkpoint saw its own training side; none of it may be scored here.
    const auto trained = make_split(data, SplitSpec::parse(ck.config.split));
    for (auto i : plan.test)
      if (std::find(trained.train.begin(), trained.train.end(), i) != trained.train.end())
        fail(Errc::InvalidSplit, "test sample '" + data.samples[i].id + "' was used to train the checkpoint");
  }
  std::cout << split_summary(data, plan) << "\n";
  RenderOptions opts = ck.config.render;
  if (c.deterministic) opts.deterministic = true;
  auto report = EvalReport::from_scores(score_samples(ck.model, data.subset(plan.test), opts));
  report.label = "eval";
  report.split = plan.spec.to_string();
  report.variant = ck.model.variant.name();
  report.seed = ck.config.train.seed;
  report.train_samples = plan.train.size();
  report.write(a.out);
  std::cout << "mean SSIM " << report.mean_ssim << ", median SSIM " << report.median_ssim << ", 90% CDF SSIM "
            << report.ssim_at_90 << ", median PSNR " << report.median_psnr << " dB\n";
  return 0;
}

// ---- ablate ----

struct AblateArgs {
  std::string manifest;
  std::string config;
  std::string variants = "full,no_freq_modulation,no_aos";
  std::string split = "random:0.2:0";
  std::string out;
  std::optional<std::uint64_t> iterations;
};

int cmd_ablate(const Common& c, const AblateArgs& a) {
  apply_threads(c);
  io::RunConfig cfg = load_run_config(c, a.config);
  if (a.iterations) cfg.train.iterations = *a.iterations;
  std::vector<std::string> variants;
  {
    std::stringstream ss(a.variants);
    for (std::string v; std::getline(ss, v, ',');) {
      (void)ModelVariant::from_name(v);
      variants.push_back(v);
    }
  }
  if (variants.empty()) fail(Errc::UnknownVariant, "no variants given");
  cfg.validate();
  const Dataset data = io::load_dataset(a.manifest);
  const auto plan = make_split(data, SplitSpec::parse(a.split));
  std::cout << split_summary(data, plan) << "\n";

  std::vector<EvalReport> reports;
  for (const auto& v : variants) {
    std::cout << "variant " << v << "\n";
    auto run = ablate(data, plan, cfg, v, [](const LogRow& r) { print_log(r, nullptr); });
    run.report.write(fs::path(a.out) / v);
    reports.push_back(std::move(run.report));
  }
  bool same_seed = true;
  for (const auto& r : reports) same_seed = same_seed && r.seed == reports.front().seed;
  if (!same_seed) fail(Errc::ConfigError, "variant runs used different seeds");

  std::ostringstream os;
  os << std::setprecision(10);
  os << "split: \"" << plan.spec.to_string() << "\"\n";
  os << "seed: " << reports.front().seed << "\n";
  os << "shared_seed: true\n";
  os << "variants:\n";
  for (const auto& r : reports)
    os << "  " << r.variant << ": {mean_ssim: " << r.mean_ssim << ", median_ssim: " << r.median_ssim
       << ", mean_psnr: " << r.mean_psnr << "}\n";
  const auto full = std::find_if(reports.begin(), reports.end(), [](const auto& r) { return r.variant == "full"; });
  if (full != reports.end()) {
    os << "ordering:\n";
    for (const auto& r : reports)
      if (r.variant != "full")
        os << "  full_above_" << r.variant << ": " << (full->mean_ssim > r.mean_ssim ? "true" : "false") << "\n";
  }
  fs::create_directories(a.out);
  std::ofstream(fs::path(a.out) / "summary.yaml") << os.str();
  std::cout << os.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-frequency radio field reconstruction with RF Gaussians"};
  app.require_subcommand(1);
  Common common;
  app.add_flag("--deterministic", common.deterministic, "Bit-reproducible execution (implies --threads 1)");
  app.add_option("--threads", common.threads, "Worker threads (default: XFREQ_THREADS or all cores)");
  app.add_flag("--paper-scale", common.paper_scale,
               "90x360 grid and 200k iterations; not expected to finish on a desktop");

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Synthesize a dataset from a scene file");
  gen->add_option("--scene", ga.scene, "Scene YAML")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", ga.out, "Output directory")->required();
  gen->add_flag("--export-csv", ga.export_csv, "Also write a CSV next to every grid file");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model on a dataset");
  train->add_option("--manifest", ta.manifest, "Dataset manifest.json")->required();
  train->add_option("--config", ta.config, "Run configuration YAML");
  train->add_option("--out", ta.out, "Checkpoint to write")->required();
  train->add_option("--resume", ta.resume, "Continue from this checkpoint");
  train->add_option("--split", ta.split, "Train on the training side of this split");
  train->add_option("--log", ta.log, "Append training rows to this CSV");
  train->add_option("--iterations", ta.iterations, "Override the configured iteration count");
  train->add_option("--stop-at", ta.stop_at, "Stop (and checkpoint) at this iteration");

  RenderArgs ra;
  auto* rend = app.add_subcommand("render", "Render a PAS map from a checkpoint");
  rend->add_option("--checkpoint", ra.checkpoint, "Checkpoint file")->required();
  rend->add_option("--tx", ra.tx, "Transmitter position x y z in meters")->required()->expected(3);
  rend->add_option("--frequency", ra.frequency_ghz, "Carrier frequency in GHz")->required();
  rend->add_option("--out", ra.out, "Output grid file")->required();
  rend->add_flag("--extrapolate", ra.extrapolate, "Allow frequencies outside the trained range");
  rend->add_flag("--export-csv", ra.export_csv, "Also write a CSV next to the grid file");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on the test side of a split");
  ev->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  ev->add_option("--manifest", ea.manifest, "Dataset manifest.json")->required();
  ev->add_option("--split", ea.split, "random:<frac>:<seed> | lofo:<GHz> | sparse:<GHz,...>@<GHz>");
  ev->add_option("--out", ea.out, "Report directory")->required();

  AblateArgs aa;
  auto* abl = app.add_subcommand("ablate", "Train and score several model variants on one split");
  abl->add_option("--manifest", aa.manifest, "Dataset manifest.json")->required();
  abl->add_option("--config", aa.config, "Run configuration YAML");
  abl->add_option("--variants", aa.variants, "Comma-separated variant names")->capture_default_str();
  abl->add_option("--split", aa.split, "Split spec")->capture_default_str();
  abl->add_option("--out", aa.out, "Output directory")->required();
  abl->add_option("--iterations", aa.iterations, "Override the configured iteration count");

  std::string pc_config;
  auto* pc = app.add_subcommand("print-config", "Print the effective run configuration");
  pc->add_option("--config", pc_config, "Run configuration YAML to merge over the defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (*gen) return cmd_generate(common, ga);
    if (*train) return cmd_train(common, ta);
    if (*rend) return cmd_render(common, ra);
    if (*ev) return cmd_eval(common, ea);
    if (*abl) return cmd_ablate(common, aa);
    if (*pc) {
      std::cout << io::config_to_yaml(load_run_config(common, pc_config));
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_validation_error(e.code()) ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
