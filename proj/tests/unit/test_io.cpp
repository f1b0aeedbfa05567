#include <doctest.h>

#include <fstream>
#include <sstream>

#include "micro_scene.hpp"
#include "xfreq/error.hpp"
#include "xfreq/io.hpp"

using namespace xfreq;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("xfreq_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string bytes_of(const fs::path& p) { return io::read_text(p); }

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::InvalidValue;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

const fs::path kScene = fs::path(XFREQ_TEST_DATA) / "small_scene.yaml";

}  // namespace

TEST_CASE("PAS grid file layout is fixed little-endian") {
  const auto dir = scratch("layout");
  AngularGrid g(2, 3);
  PASMap map(g, {0.0, 0.25, 0.5, 1.0, 0.125, 0.75});
  const TxDescriptor tx{Vec3(1.5, -2.0, 0.25), 24.25e9};
  io::write_pas_grid(dir / "a.xpas", tx, map);
  const std::string b = bytes_of(dir / "a.xpas");
  REQUIRE(b.size() == 4 + 2 * 3 + 8 * 4 + 4 * 6);
  CHECK(b.substr(0, 4) == "XPAS");
  auto u16 = [&](std::size_t at) { return static_cast<int>(static_cast<unsigned char>(b[at])) | (static_cast<unsigned char>(b[at + 1]) << 8); };
  CHECK(u16(4) == 1);
  CHECK(u16(6) == 2);
  CHECK(u16(8) == 3);
  double x;
  std::memcpy(&x, b.data() + 10, 8);
  CHECK(x == 1.5);
  std::memcpy(&x, b.data() + 34, 8);
  CHECK(x == 24.25e9);
  float v;
  std::memcpy(&v, b.data() + 42 + 4 * 3, 4);
  CHECK(v == 1.0f);
}

TEST_CASE("PAS grid round trip is bit exact") {
  const auto dir = scratch("roundtrip");
  AngularGrid g(7, 11);
  Rng rng(3);
  std::vector<double> vals(g.size());
  for (auto& v : vals) v = static_cast<float>(rng.uniform());
  PASMap map(g, vals);
  const TxDescriptor tx{Vec3(0.1, 0.2, 0.3), 37e9};
  io::write_pas_grid(dir / "a.xpas", tx, map);
  const auto back = io::read_pas_grid(dir / "a.xpas");
  CHECK(back.tx.position == tx.position);
  CHECK(back.tx.frequency == tx.frequency);
  CHECK(back.map.grid() == g);
  for (std::size_t i = 0; i < vals.size(); ++i) CHECK(back.map.values()[i] == vals[i]);
  io::write_pas_grid(dir / "b.xpas", back.tx, back.map);
  CHECK(bytes_of(dir / "a.xpas") == bytes_of(dir / "b.xpas"));
}

TEST_CASE("PAS grid reader rejects corrupt files") {
  const auto dir = scratch("corrupt");
  AngularGrid g(2, 2);
  io::write_pas_grid(dir / "ok.xpas", TxDescriptor{Vec3(1, 1, 1), 1e9}, PASMap(g, {1, 0, 0, 0}));
  std::string b = bytes_of(dir / "ok.xpas");

  auto write = [&](const std::string& name, const std::string& data) {
    std::ofstream(dir / name, std::ios::binary) << data;
    return dir / name;
  };
  std::string bad_magic = b;
  bad_magic[0] = 'Y';
  CHECK(code_of([&] { io::read_pas_grid(write("m.xpas", bad_magic)); }) == Errc::FormatError);
  std::string bad_version = b;
  bad_version[4] = 9;
  CHECK(code_of([&] { io::read_pas_grid(write("v.xpas", bad_version)); }) == Errc::FormatError);
  CHECK(code_of([&] { io::read_pas_grid(write("t.xpas", b.substr(0, b.size() - 2))); }) == Errc::FormatError);
  CHECK(code_of([&] { io::read_pas_grid(write("x.xpas", b + "zz")); }) == Errc::FormatError);
  std::string negative = b;
  const float minus = -1.0f;
  std::memcpy(negative.data() + 42, &minus, 4);
  CHECK(code_of([&] { io::read_pas_grid(write("n.xpas", negative)); }) == Errc::FormatError);
  CHECK(code_of([&] { io::read_pas_grid(dir / "missing.xpas"); }) == Errc::IoError);
}

TEST_CASE("CSV export lists every cell") {
  const auto dir = scratch("csv");
  AngularGrid g(2, 4);
  PASMap map(g, {0, 0.5, 1, 0, 0, 0, 0.25, 0});
  io::export_csv(dir / "m.csv", map);
  std::istringstream in(bytes_of(dir / "m.csv"));
  std::string line;
  std::getline(in, line);
  CHECK(line == "elevation_deg,azimuth_deg,power");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 8);
}

TEST_CASE("scene file parses into a valid scene") {
  const auto sf = io::load_scene(kScene);
  CHECK(sf.scene.room.max == Vec3(5, 4, 3));
  CHECK(sf.scene.rx.center == Vec3(2.5, 2.0, 0.5));
  CHECK(sf.scene.max_reflection_order == 2);
  CHECK(sf.tx_count == 2);
  CHECK(sf.frequencies == std::vector<double>{1e9, 24.25e9, 94e9});
  CHECK(sf.grid == AngularGrid(15, 60));
  CHECK(sf.seed == 11);
  CHECK(sf.scene.walls[1].name() == "glass");
}

TEST_CASE("scene errors carry line numbers") {
  const std::string text = "room:\n  min: [0, 0, 0]\n  max: [4, 4, 3]\nwalls: concrete\nrx:\n  center: [1, 1, 1]\n";
  const auto msg = message_of([&] { io::parse_scene(text, "s.yaml"); });
  CHECK(msg.find("s.yaml:4") != std::string::npos);
  CHECK(msg.find("concrete") != std::string::npos);

  const std::string typo = "room:\n  min: [0, 0, 0]\n  max: [4, 4, 3]\nwals: vacuum\n";
  const auto msg2 = message_of([&] { io::parse_scene(typo, "s.yaml"); });
  CHECK(msg2.find("s.yaml:4") != std::string::npos);
  CHECK(msg2.find("wals") != std::string::npos);

  CHECK(code_of([&] { io::parse_scene("room: [1, 2", "s.yaml"); }) == Errc::InvalidScene);
  const std::string inverted = "room:\n  min: [4, 0, 0]\n  max: [0, 4, 3]\nwalls: vacuum\nrx:\n  center: [1, 1, 1]\n";
  CHECK(code_of([&] { io::parse_scene(inverted); }) == Errc::InvalidScene);
}

TEST_CASE("config defaults, overrides and round trip") {
  const auto def = io::RunConfig::desk_scale();
  CHECK(def.model.gaussians == 2048);
  CHECK(def.train.iterations == 10000);
  CHECK(io::RunConfig::paper_scale().train.iterations == 200000);

  const auto c = io::parse_config("train:\n  iterations: 42\n  lr_means: 0.001\nmodel:\n  gaussians: 64\nvariant: no_aos\nsplit: \"lofo:24.25\"\n");
  CHECK(c.train.iterations == 42);
  CHECK(c.train.lr_means == 0.001);
  CHECK(c.model.gaussians == 64);
  CHECK(c.variant == "no_aos");
  CHECK(c.split == "lofo:24.25");
  CHECK(c.train.lr_network == def.train.lr_network);

  const auto yaml = io::config_to_yaml(c);
  const auto back = io::parse_config(yaml);
  CHECK(io::config_to_yaml(back) == yaml);
  CHECK(back.network.f_min == c.network.f_min);
  CHECK(back.train.ssim_weight == c.train.ssim_weight);
  CHECK(back.split == "lofo:24.25");
  CHECK(io::parse_config(io::config_to_yaml(def)).split.empty());
}

TEST_CASE("config validation") {
  const auto msg = message_of([] { io::parse_config("train:\n  iterations: 5\n  lr_mean: 0.1\n", "c.yaml"); });
  CHECK(msg.find("c.yaml:3") != std::string::npos);
  CHECK(msg.find("lr_mean") != std::string::npos);
  CHECK(code_of([] { io::parse_config("variant: fancy\n"); }) == Errc::ConfigError);
  CHECK(code_of([] { io::parse_config("train:\n  ssim_weight: 2\n"); }) == Errc::ConfigError);
  CHECK(code_of([] { io::parse_config("model:\n  gaussians: zero\n"); }) == Errc::ConfigError);
  CHECK(code_of([] { io::load_config("/nonexistent/c.yaml"); }) == Errc::IoError);
}

TEST_CASE("generate writes a consistent dataset") {
  const auto dir = scratch("generate");
  auto sf = io::load_scene(kScene);
  const auto m = io::generate_dataset(sf, "abc", dir / "d1");
  REQUIRE(m.samples.size() == 6);
  CHECK(m.samples[0].id == "tx000_f1");
  CHECK(m.samples[1].id == "tx000_f24.25");
  CHECK(m.samples[5].id == "tx001_f94");
  for (const auto& s : m.samples) {
    CHECK(sf.scene.room.strictly_contains(s.tx));
    for (int k = 0; k < 3; ++k) {
      CHECK(s.tx[k] - sf.scene.room.min[k] >= 0.5);
      CHECK(sf.scene.room.max[k] - s.tx[k] >= 0.5);
    }
    CHECK((s.tx - sf.scene.rx.center).norm() >= 0.5);
  }
  const auto loaded = io::load_manifest(dir / "d1" / "manifest.json");
  CHECK(io::manifest_to_json(loaded) == io::manifest_to_json(m));
  const auto ds = io::load_dataset(dir / "d1" / "manifest.json");
  CHECK(ds.samples.size() == 6);
  CHECK(ds.grid == AngularGrid(15, 60));
  CHECK(ds.samples[2].map.values()[ds.samples[2].map.argmax()] == 1.0);

  io::generate_dataset(sf, "abc", dir / "d2");
  for (const auto& s : m.samples) CHECK(bytes_of(dir / "d1" / s.path) == bytes_of(dir / "d2" / s.path));
  CHECK(bytes_of(dir / "d1" / "manifest.json") == bytes_of(dir / "d2" / "manifest.json"));
}

TEST_CASE("manifest validation names the offending file") {
  const auto dir = scratch("manifest");
  auto sf = io::load_scene(kScene);
  sf.tx_count = 1;
  sf.frequencies = {24.25e9};
  auto m = io::generate_dataset(sf, "abc", dir);
  io::write_pas_grid(dir / m.samples[0].path, TxDescriptor{m.samples[0].tx, 24.25e9},
                     PASMap(AngularGrid(3, 3), std::vector<double>(9, 1.0)));
  const auto msg = message_of([&] { io::load_manifest(dir / "manifest.json"); });
  CHECK(msg.find(m.samples[0].path) != std::string::npos);
  CHECK(msg.find("grid mismatch") != std::string::npos);

  m.samples.push_back(m.samples[0]);
  io::write_manifest(dir / "dup.json", m);
  CHECK(code_of([&] { io::load_manifest(dir / "dup.json"); }) == Errc::ManifestError);
  const auto missing = message_of([&] { io::load_manifest(dir / "nope.json"); });
  CHECK(missing.find("nope.json") != std::string::npos);
}

TEST_CASE("checkpoint round trip is bit exact") {
  io::Checkpoint c;
  c.config.model.gaussians = 4;
  c.config.network.hidden_width = 8;
  c.config.network.latent_dim = 4;
  c.config.network.head_width = 8;
  c.config.network.pos_bands = 4;
  c.model = testing::micro_model();
  c.model.version = 17;
  c.model.variant = ModelVariant::from_name("no_aos");
  c.iteration = 123;
  c.optimizer = OptimizerState::zeros_like(c.model);
  Rng rng(5);
  c.optimizer.step = 9;
  auto fill = [&](ModelGradients& g) {
    for (auto& x : g.geometry) {
      x.mean = Vec3(rng.normal(), rng.normal(), rng.normal());
      x.log_scales = Vec3(rng.normal(), rng.normal(), rng.normal());
      x.rotation = Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    }
    g.net.for_each_tensor([&](double* d, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) d[i] = rng.normal();
    });
  };
  fill(c.optimizer.m);
  fill(c.optimizer.v);
  for (int i = 0; i < 7; ++i) rng.next_u64();
  c.rng_state = io::rng_state(rng);
  c.rx = testing::micro_rx();
  c.grid = AngularGrid(8, 16);

  std::stringstream a;
  io::write_checkpoint(a, c);
  const auto back = io::read_checkpoint(a);
  std::stringstream b;
  io::write_checkpoint(b, back);
  CHECK(a.str() == b.str());
  CHECK(back.iteration == 123);
  CHECK(back.model.version == 17);
  CHECK(back.model.variant.name() == "no_aos");
  CHECK(back.optimizer.step == 9);
  CHECK(back.rx.center == c.rx.center);
  CHECK(back.grid == c.grid);

  Rng r2;
  io::set_rng_state(r2, back.rng_state);
  CHECK(r2.next_u64() == rng.next_u64());

  const auto tx = testing::micro_tx();
  const auto p1 = render(c.model, tx, testing::micro_rx(), AngularGrid(8, 16));
  const auto p2 = render(back.model, tx, testing::micro_rx(), AngularGrid(8, 16));
  for (std::size_t i = 0; i < p1.values().size(); ++i) CHECK(p1.values()[i] == p2.values()[i]);

  const auto dir = scratch("ckpt");
  io::write_checkpoint(dir / "c.bin", c);
  CHECK(bytes_of(dir / "c.bin") == a.str());
  CHECK_FALSE(fs::exists(dir / "c.bin.tmp"));

  std::string corrupt = a.str();
  corrupt[0] = 'Z';
  std::stringstream cs(corrupt);
  CHECK(code_of([&] { io::read_checkpoint(cs); }) == Errc::FormatError);
  std::stringstream trunc(a.str().substr(0, a.str().size() / 2));
  CHECK(code_of([&] { io::read_checkpoint(trunc); }) == Errc::FormatError);
}
