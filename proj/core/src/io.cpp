#include "xfreq/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "json.hpp"
#include "xfreq/error.hpp"

namespace xfreq::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

using json = nlohmann::json;

// ---- binary helpers ----

class BinWriter {
 public:
  explicit BinWriter(std::ostream& out) : out_(out) {}
  template <class T>
  void pod(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  void f64s(const double* p, std::size_t n) { bytes(p, n * sizeof(double)); }

 private:
  std::ostream& out_;
};

class BinReader {
 public:
  BinReader(std::istream& in, std::string origin) : in_(in), origin_(std::move(origin)) {}
  template <class T>
  T pod() {
    T v{};
    bytes(&v, sizeof v);
    return v;
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail(Errc::FormatError, origin_ + ": truncated file");
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > (std::uint64_t{1} << 32)) fail(Errc::FormatError, origin_ + ": implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  void f64s(double* p, std::size_t n) { bytes(p, n * sizeof(double)); }
  const std::string& origin() const { return origin_; }

 private:
  std::istream& in_;
  std::string origin_;
};

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoError, "cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());
  return in;
}

// ---- YAML helpers ----

class Yaml {
 public:
  explicit Yaml(std::string origin, Errc code) : origin_(std::move(origin)), code_(code) {}

  YAML::Node load(const std::string& text) const {
    try {
      return YAML::Load(text);
    } catch (const YAML::ParserException& e) {
      fail(code_, origin_ + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
    }
  }

  [[noreturn]] void error(const YAML::Node& n, const std::string& msg) const {
    const auto mark = n.Mark();
    const std::string where = mark.line >= 0 ? ":" + std::to_string(mark.line + 1) : "";
    fail(code_, origin_ + where + ": " + msg);
  }

  void expect_map(const YAML::Node& n, const std::string& what, std::initializer_list<const char*> keys) const {
    if (!n.IsMap()) error(n, what + " must be a mapping");
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& kv : n) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.contains(key)) error(kv.first, "unknown key '" + key + "' in " + what);
    }
  }

  template <class T>
  T as(const YAML::Node& n, const std::string& what) const {
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      error(n, "invalid value for " + what);
    }
  }

  template <class T>
  void opt(const YAML::Node& parent, const char* key, T& out) const {
    if (const auto n = parent[key]) out = as<T>(n, key);
  }

  Vec3 vec3(const YAML::Node& n, const std::string& what) const {
    if (!n.IsSequence() || n.size() != 3) error(n, what + " must be a list of 3 numbers");
    return Vec3(as<double>(n[0], what), as<double>(n[1], what), as<double>(n[2], what));
  }

  const std::string& origin() const { return origin_; }

 private:
  std::string origin_;
  Errc code_;
};

std::vector<physics::TablePoint> table(const Yaml& y, const YAML::Node& n, const std::string& what) {
  std::vector<physics::TablePoint> out;
  if (n.IsScalar()) {
    out.push_back({1e9, y.as<double>(n, what)});
    return out;
  }
  if (!n.IsSequence() || n.size() == 0) y.error(n, what + " must be a number or a list of [frequency_ghz, value] pairs");
  for (const auto& p : n) {
    if (!p.IsSequence() || p.size() != 2) y.error(p, what + " entries must be [frequency_ghz, value]");
    out.push_back({y.as<double>(p[0], what) * 1e9, y.as<double>(p[1], what)});
  }
  return out;
}

std::string ghz_label(double hz) {
  std::ostringstream os;
  os << std::setprecision(6) << hz / 1e9;
  return os.str();
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 json_vec(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) fail(Errc::ManifestError, what + " must be a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace

// ---- PAS grid files ----

void write_pas_grid(const fs::path& path, const TxDescriptor& tx, const PASMap& map) {
  const auto& g = map.grid();
  if (g.rows() > 0xffff || g.cols() > 0xffff) fail(Errc::InvalidGrid, "grid too large for the file format");
  auto out = open_out(path);
  BinWriter w(out);
  w.bytes("XPAS", 4);
  w.pod<std::uint16_t>(kPasGridVersion);
  w.pod<std::uint16_t>(static_cast<std::uint16_t>(g.rows()));
  w.pod<std::uint16_t>(static_cast<std::uint16_t>(g.cols()));
  for (int i = 0; i < 3; ++i) w.pod<double>(tx.position[i]);
  w.pod<double>(tx.frequency);
  std::vector<float> v(map.values().begin(), map.values().end());
  w.bytes(v.data(), v.size() * sizeof(float));
  if (!out) fail(Errc::IoError, "failed writing " + path.string());
}

namespace {

struct PasHeader {
  AngularGrid grid{1, 1};
  TxDescriptor tx;
};

PasHeader read_header(BinReader& r) {
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "XPAS", 4) != 0) fail(Errc::FormatError, r.origin() + ": not a PAS grid file (bad magic)");
  const auto version = r.pod<std::uint16_t>();
  if (version != kPasGridVersion) fail(Errc::FormatError, r.origin() + ": unsupported PAS grid version " + std::to_string(version));
  const auto rows = r.pod<std::uint16_t>();
  const auto cols = r.pod<std::uint16_t>();
  if (rows == 0 || cols == 0) fail(Errc::FormatError, r.origin() + ": empty grid");
  PasHeader h{AngularGrid(rows, cols), {}};
  for (int i = 0; i < 3; ++i) h.tx.position[i] = r.pod<double>();
  h.tx.frequency = r.pod<double>();
  return h;
}

}  // namespace

AngularGrid read_pas_grid_shape(const fs::path& path) {
  auto in = open_in(path);
  BinReader r(in, path.string());
  return read_header(r).grid;
}

PasGridData read_pas_grid(const fs::path& path) {
  auto in = open_in(path);
  BinReader r(in, path.string());
  const PasHeader h = read_header(r);
  std::vector<float> v(h.grid.size());
  r.bytes(v.data(), v.size() * sizeof(float));
  if (in.peek() != std::char_traits<char>::eof()) fail(Errc::FormatError, path.string() + ": trailing bytes after grid values");
  std::vector<double> values(v.begin(), v.end());
  for (double x : values) {
    if (!(x >= 0.0) || !std::isfinite(x)) fail(Errc::FormatError, path.string() + ": negative or non-finite value");
  }
  return {h.tx, PASMap(h.grid, std::move(values))};
}

void export_csv(const fs::path& path, const PASMap& map) {
  auto out = open_out(path);
  const auto& g = map.grid();
  out << "elevation_deg,azimuth_deg,power\n";
  out << std::setprecision(9);
  for (int m = 0; m < g.rows(); ++m)
    for (int n = 0; n < g.cols(); ++n) out << g.cell_elevation(m) << ',' << g.cell_azimuth(n) << ',' << map.at(m, n) << '\n';
}

// ---- Scene files ----

SceneFile parse_scene(const std::string& text, const std::string& origin) {
  const Yaml y(origin, Errc::InvalidScene);
  const YAML::Node root = y.load(text);
  y.expect_map(root, "scene", {"room", "materials", "walls", "rx", "max_reflection_order", "beamwidth_deg", "tx",
                               "frequencies_ghz", "grid", "seed"});
  SceneFile sf;
  auto& sc = sf.scene;

  const auto room = root["room"];
  if (!room) y.error(root, "missing 'room'");
  y.expect_map(room, "room", {"min", "max"});
  if (!room["min"] || !room["max"]) y.error(room, "room needs 'min' and 'max'");
  sc.room = Box{y.vec3(room["min"], "room.min"), y.vec3(room["max"], "room.max")};
  if (!sc.room.valid()) y.error(room, "room max must exceed min on every axis");

  std::map<std::string, physics::MaterialSpec> materials;
  materials.emplace("vacuum", physics::MaterialSpec::vacuum());
  if (const auto mats = root["materials"]) {
    if (!mats.IsMap()) y.error(mats, "materials must be a mapping");
    for (const auto& kv : mats) {
      const auto name = kv.first.as<std::string>();
      y.expect_map(kv.second, "material '" + name + "'", {"permittivity", "permeability"});
      if (!kv.second["permittivity"]) y.error(kv.second, "material '" + name + "' needs 'permittivity'");
      auto eps = table(y, kv.second["permittivity"], name + ".permittivity");
      std::vector<physics::TablePoint> mu{{1e9, 1.0}};
      if (kv.second["permeability"]) mu = table(y, kv.second["permeability"], name + ".permeability");
      try {
        materials.insert_or_assign(name, physics::MaterialSpec(name, std::move(eps), std::move(mu)));
      } catch (const Error& e) {
        y.error(kv.second, e.what());
      }
    }
  }

  const auto walls = root["walls"];
  if (!walls) y.error(root, "missing 'walls'");
  if (walls.IsScalar()) {
    const auto name = y.as<std::string>(walls, "walls");
    if (!materials.contains(name)) y.error(walls, "unknown material '" + name + "'");
    sc.walls.fill(materials.at(name));
  } else {
    y.expect_map(walls, "walls", {"x_min", "x_max", "y_min", "y_max", "floor", "ceiling"});
    const char* keys[6] = {"x_min", "x_max", "y_min", "y_max", "floor", "ceiling"};
    for (int i = 0; i < 6; ++i) {
      const auto n = walls[keys[i]];
      if (!n) y.error(walls, std::string("walls needs '") + keys[i] + "'");
      const auto name = y.as<std::string>(n, keys[i]);
      if (!materials.contains(name)) y.error(n, "unknown material '" + name + "'");
      sc.walls[static_cast<std::size_t>(i)] = materials.at(name);
    }
  }

  const auto rx = root["rx"];
  if (!rx) y.error(root, "missing 'rx'");
  y.expect_map(rx, "rx", {"center", "sphere_radius"});
  if (!rx["center"]) y.error(rx, "rx needs 'center'");
  sc.rx.center = y.vec3(rx["center"], "rx.center");
  sc.rx.sphere_radius = 0.05;
  y.opt(rx, "sphere_radius", sc.rx.sphere_radius);

  y.opt(root, "max_reflection_order", sc.max_reflection_order);
  y.opt(root, "beamwidth_deg", sc.beamwidth_deg);

  if (const auto tx = root["tx"]) {
    y.expect_map(tx, "tx", {"count", "clearance", "positions"});
    y.opt(tx, "count", sf.tx_count);
    y.opt(tx, "clearance", sf.clearance);
    if (const auto pos = tx["positions"]) {
      if (!pos.IsSequence()) y.error(pos, "tx.positions must be a list");
      for (const auto& p : pos) sf.tx_positions.push_back(y.vec3(p, "tx position"));
      sf.tx_count = static_cast<int>(sf.tx_positions.size());
    }
    if (sf.tx_count < 1) y.error(tx, "tx.count must be at least 1");
    if (!(sf.clearance >= 0.0)) y.error(tx, "tx.clearance must be non-negative");
  }
  if (const auto fr = root["frequencies_ghz"]) {
    if (!fr.IsSequence() || fr.size() == 0) y.error(fr, "frequencies_ghz must be a non-empty list");
    sf.frequencies.clear();
    for (const auto& f : fr) {
      const double ghz = y.as<double>(f, "frequency");
      if (!(ghz > 0.0)) y.error(f, "frequencies must be positive");
      sf.frequencies.push_back(ghz * 1e9);
    }
  }
  if (const auto g = root["grid"]) {
    y.expect_map(g, "grid", {"rows", "cols"});
    int rows = sf.grid.rows(), cols = sf.grid.cols();
    y.opt(g, "rows", rows);
    y.opt(g, "cols", cols);
    try {
      sf.grid = AngularGrid(rows, cols);
    } catch (const Error& e) {
      y.error(g, e.what());
    }
  }
  y.opt(root, "seed", sf.seed);

  try {
    sc.validate();
    for (double f : sf.frequencies)
      for (const auto& w : sc.walls)
        if (!w.covers(f)) fail(Errc::InvalidScene, "material '" + w.name() + "' has no data at " + ghz_label(f) + " GHz");
    for (const auto& p : sf.tx_positions) {
      if (!sc.room.strictly_contains(p)) fail(Errc::InvalidScene, "tx position outside the room");
    }
  } catch (const Error& e) {
    fail(Errc::InvalidScene, origin + ": " + e.what());
  }
  return sf;
}

std::string read_text(const fs::path& path) {
  auto in = open_in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

SceneFile load_scene(const fs::path& path) { return parse_scene(read_text(path), path.string()); }

// ---- Run configuration ----

RunConfig RunConfig::desk_scale() { return RunConfig{}; }

RunConfig RunConfig::paper_scale() {
  RunConfig c;
  c.train.iterations = 200000;
  return c;
}

void RunConfig::validate() const {
  train.validate();
  if (model.gaussians < 1) fail(Errc::ConfigError, "model.gaussians must be at least 1");
  NetworkConfig n = network;
  n.bounds = Box{Vec3::Zero(), Vec3::Ones()};
  try {
    n.validate();
  } catch (const Error& e) {
    fail(Errc::ConfigError, std::string("network: ") + e.what());
  }
  if (!(render.cutoff_sigma > 0.0)) fail(Errc::ConfigError, "render.cutoff_sigma must be positive");
  if (!(render.cov_regularization > 0.0)) fail(Errc::ConfigError, "render.cov_regularization must be positive");
  try {
    (void)ModelVariant::from_name(variant);
  } catch (const Error& e) {
    fail(Errc::ConfigError, e.what());
  }
}

RunConfig parse_config(const std::string& text, const std::string& origin, const RunConfig& base) {
  const Yaml y(origin, Errc::ConfigError);
  RunConfig c = base;
  const YAML::Node root = y.load(text);
  if (root.IsNull()) return c;
  y.expect_map(root, "config", {"model", "network", "render", "train", "variant", "split", "checkpoint_interval"});
  if (const auto m = root["model"]) {
    y.expect_map(m, "model", {"gaussians", "initial_scale", "transmittance_bias", "init_seed"});
    y.opt(m, "gaussians", c.model.gaussians);
    y.opt(m, "initial_scale", c.model.initial_scale);
    y.opt(m, "transmittance_bias", c.model.transmittance_bias);
    y.opt(m, "init_seed", c.model.init_seed);
  }
  if (const auto n = root["network"]) {
    y.expect_map(n, "network", {"hidden_width", "trunk_layers", "latent_dim", "head_width", "pos_bands", "freq_bands",
                                "spread_min", "spread_max", "f_min_ghz", "f_max_ghz"});
    auto& nc = c.network;
    y.opt(n, "hidden_width", nc.hidden_width);
    y.opt(n, "trunk_layers", nc.trunk_layers);
    y.opt(n, "latent_dim", nc.latent_dim);
    y.opt(n, "head_width", nc.head_width);
    y.opt(n, "pos_bands", nc.pos_bands);
    y.opt(n, "freq_bands", nc.freq_bands);
    y.opt(n, "spread_min", nc.spread_min);
    y.opt(n, "spread_max", nc.spread_max);
    double fmin = nc.f_min / 1e9, fmax = nc.f_max / 1e9;
    y.opt(n, "f_min_ghz", fmin);
    y.opt(n, "f_max_ghz", fmax);
    nc.f_min = fmin * 1e9;
    nc.f_max = fmax * 1e9;
  }
  if (const auto r = root["render"]) {
    y.expect_map(r, "render", {"cutoff_sigma", "cov_regularization"});
    y.opt(r, "cutoff_sigma", c.render.cutoff_sigma);
    y.opt(r, "cov_regularization", c.render.cov_regularization);
  }
  if (const auto t = root["train"]) {
    y.expect_map(t, "train", {"iterations", "lr_network", "lr_means", "lr_means_by_extent", "lr_logscales", "lr_quats", "lr_decay_at",
                              "lr_decay_factor", "ssim_weight", "batch", "seed", "deterministic", "log_interval",
                              "prune_interval", "prune_threshold"});
    auto& tc = c.train;
    y.opt(t, "iterations", tc.iterations);
    y.opt(t, "lr_network", tc.lr_network);
    y.opt(t, "lr_means", tc.lr_means);
    y.opt(t, "lr_means_by_extent", tc.lr_means_by_extent);
    y.opt(t, "lr_logscales", tc.lr_logscales);
    y.opt(t, "lr_quats", tc.lr_quats);
    y.opt(t, "lr_decay_at", tc.lr_decay_at);
    y.opt(t, "lr_decay_factor", tc.lr_decay_factor);
    y.opt(t, "ssim_weight", tc.ssim_weight);
    y.opt(t, "batch", tc.batch);
    y.opt(t, "seed", tc.seed);
    y.opt(t, "deterministic", tc.deterministic);
    y.opt(t, "prune_interval", tc.prune_interval);
    y.opt(t, "prune_threshold", tc.prune_threshold);
    y.opt(t, "log_interval", tc.log_interval);
  }
  y.opt(root, "checkpoint_interval", c.checkpoint_interval);
  y.opt(root, "variant", c.variant);
  y.opt(root, "split", c.split);
  try {
    c.validate();
  } catch (const Error& e) {
    fail(Errc::ConfigError, origin + ": " + e.what());
  }
  return c;
}

RunConfig load_config(const fs::path& path, const RunConfig& base) {
  return parse_config(read_text(path), path.string(), base);
}

std::string config_to_yaml(const RunConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "gaussians" << YAML::Value << c.model.gaussians;
  out << YAML::Key << "initial_scale" << YAML::Value << c.model.initial_scale;
  out << YAML::Key << "transmittance_bias" << YAML::Value << c.model.transmittance_bias;
  out << YAML::Key << "init_seed" << YAML::Value << c.model.init_seed;
  out << YAML::EndMap;
  const auto& n = c.network;
  out << YAML::Key << "network" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "hidden_width" << YAML::Value << n.hidden_width;
  out << YAML::Key << "trunk_layers" << YAML::Value << n.trunk_layers;
  out << YAML::Key << "latent_dim" << YAML::Value << n.latent_dim;
  out << YAML::Key << "head_width" << YAML::Value << n.head_width;
  out << YAML::Key << "pos_bands" << YAML::Value << n.pos_bands;
  out << YAML::Key << "freq_bands" << YAML::Value << n.freq_bands;
  out << YAML::Key << "spread_min" << YAML::Value << n.spread_min;
  out << YAML::Key << "spread_max" << YAML::Value << n.spread_max;
  out << YAML::Key << "f_min_ghz" << YAML::Value << n.f_min / 1e9;
  out << YAML::Key << "f_max_ghz" << YAML::Value << n.f_max / 1e9;
  out << YAML::EndMap;
  out << YAML::Key << "render" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "cutoff_sigma" << YAML::Value << c.render.cutoff_sigma;
  out << YAML::Key << "cov_regularization" << YAML::Value << c.render.cov_regularization;
  out << YAML::EndMap;
  const auto& t = c.train;
  out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "iterations" << YAML::Value << t.iterations;
  out << YAML::Key << "lr_network" << YAML::Value << t.lr_network;
  out << YAML::Key << "lr_means" << YAML::Value << t.lr_means;
  out << YAML::Key << "lr_means_by_extent" << YAML::Value << t.lr_means_by_extent;
  out << YAML::Key << "lr_logscales" << YAML::Value << t.lr_logscales;
  out << YAML::Key << "lr_quats" << YAML::Value << t.lr_quats;
  out << YAML::Key << "lr_decay_at" << YAML::Value << t.lr_decay_at;
  out << YAML::Key << "lr_decay_factor" << YAML::Value << t.lr_decay_factor;
  out << YAML::Key << "ssim_weight" << YAML::Value << t.ssim_weight;
  out << YAML::Key << "batch" << YAML::Value << t.batch;
  out << YAML::Key << "seed" << YAML::Value << t.seed;
  out << YAML::Key << "deterministic" << YAML::Value << t.deterministic;
  out << YAML::Key << "log_interval" << YAML::Value << t.log_interval;
  out << YAML::Key << "prune_interval" << YAML::Value << t.prune_interval;
  out << YAML::Key << "prune_threshold" << YAML::Value << t.prune_threshold;
  out << YAML::EndMap;
  out << YAML::Key << "checkpoint_interval" << YAML::Value << c.checkpoint_interval;
  out << YAML::Key << "variant" << YAML::Value << c.variant;
  out << YAML::Key << "split" << YAML::Value << YAML::DoubleQuoted << c.split;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

// ---- Manifests ----

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string manifest_to_json(const DatasetManifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["grid"] = {{"rows", m.grid.rows()}, {"cols", m.grid.cols()}};
  j["scene_hash"] = m.scene_hash;
  j["generator_seed"] = m.seed;
  j["rx"] = {{"center", vec_json(m.rx.center)}, {"sphere_radius", m.rx.sphere_radius}};
  j["room"] = {{"min", vec_json(m.room.min)}, {"max", vec_json(m.room.max)}};
  json samples = json::array();
  for (const auto& s : m.samples) {
    samples.push_back({{"id", s.id}, {"tx", vec_json(s.tx)}, {"frequency_hz", s.frequency}, {"path", s.path}});
  }
  j["samples"] = samples;
  return j.dump(2) + "\n";
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  auto out = open_out(path);
  out << manifest_to_json(m);
  if (!out) fail(Errc::IoError, "failed writing " + path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) fail(Errc::ManifestError, "manifest not found: " + path.string());
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    fail(Errc::ManifestError, path.string() + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kManifestVersion)
      fail(Errc::ManifestError, path.string() + ": unsupported manifest version " + std::to_string(m.format_version));
    m.grid = AngularGrid(j.at("grid").at("rows").get<int>(), j.at("grid").at("cols").get<int>());
    m.scene_hash = j.at("scene_hash").get<std::string>();
    m.seed = j.at("generator_seed").get<std::uint64_t>();
    m.rx.center = json_vec(j.at("rx").at("center"), "rx.center");
    m.rx.sphere_radius = j.at("rx").at("sphere_radius").get<double>();
    m.room = Box{json_vec(j.at("room").at("min"), "room.min"), json_vec(j.at("room").at("max"), "room.max")};
    for (const auto& s : j.at("samples")) {
      m.samples.push_back({s.at("id").get<std::string>(), json_vec(s.at("tx"), "tx"), s.at("frequency_hz").get<double>(),
                           s.at("path").get<std::string>()});
    }
  } catch (const json::exception& e) {
    fail(Errc::ManifestError, path.string() + ": " + e.what());
  }
  std::set<std::string> ids;
  const fs::path dir = path.parent_path();
  for (const auto& s : m.samples) {
    if (!ids.insert(s.id).second) fail(Errc::ManifestError, path.string() + ": duplicate sample id '" + s.id + "'");
    const fs::path file = dir / s.path;
    if (!fs::exists(file)) fail(Errc::ManifestError, "sample file missing: " + file.string());
    const AngularGrid g = read_pas_grid_shape(file);
    if (!(g == m.grid)) {
      fail(Errc::ManifestError, "grid mismatch in " + file.string() + ": file is " + std::to_string(g.rows()) + "x" +
                                    std::to_string(g.cols()) + ", manifest says " + std::to_string(m.grid.rows()) +
                                    "x" + std::to_string(m.grid.cols()));
    }
  }
  return m;
}

Dataset load_dataset(const fs::path& manifest_path, const DatasetManifest& m) {
  Dataset d;
  d.grid = m.grid;
  d.rx = m.rx;
  d.bounds = m.room;
  const fs::path dir = manifest_path.parent_path();
  for (const auto& s : m.samples) {
    const fs::path file = dir / s.path;
    PasGridData g = read_pas_grid(file);
    if (g.tx.position != s.tx || g.tx.frequency != s.frequency)
      fail(Errc::ManifestError, "header of " + file.string() + " disagrees with the manifest entry '" + s.id + "'");
    d.samples.push_back({s.id, g.tx, std::move(g.map)});
  }
  return d;
}

Dataset load_dataset(const fs::path& manifest_path) { return load_dataset(manifest_path, load_manifest(manifest_path)); }

DatasetManifest generate_dataset(const SceneFile& sf, const std::string& scene_hash, const fs::path& out_dir) {
  const auto& sc = sf.scene;
  sc.validate();
  Rng rng(sf.seed);
  std::vector<Vec3> positions = sf.tx_positions;
  const bool sampled = positions.empty();
  const Vec3 lo = sc.room.min + Vec3::Constant(sf.clearance);
  const Vec3 hi = sc.room.max - Vec3::Constant(sf.clearance);
  if (sampled && !(lo.array() < hi.array()).all()) fail(Errc::InvalidScene, "room too small for the TX clearance");

  DatasetManifest m;
  m.grid = sf.grid;
  m.scene_hash = scene_hash;
  m.seed = sf.seed;
  m.rx = sc.rx;
  m.room = sc.room;

  struct Pending {
    ManifestSample entry;
    PASMap map;
  };
  std::vector<Pending> pending;
  for (int i = 0; i < sf.tx_count; ++i) {
    for (int attempt = 0;; ++attempt) {
      Vec3 p;
      if (sampled) {
        p = Vec3(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()), rng.uniform(lo.z(), hi.z()));
        if ((p - sc.rx.center).norm() < sf.clearance) continue;
      } else {
        p = positions[static_cast<std::size_t>(i)];
      }
      std::vector<Pending> maps;
      try {
        for (double f : sf.frequencies) {
          std::ostringstream id;
          id << "tx" << std::setw(3) << std::setfill('0') << i << "_f" << ghz_label(f);
          const TxDescriptor tx{p, f};
          maps.push_back({{id.str(), p, f, "samples/" + id.str() + ".xpas"}, physics::synthesize_pas(sc, tx, sf.grid)});
        }
      } catch (const Error& e) {
        // A position whose paths all miss the hemisphere grid is redrawn.
        if (e.code() != Errc::AllZeroMap || !sampled || attempt > 1000) throw;
        continue;
      }
      for (auto& x : maps) pending.push_back(std::move(x));
      break;
    }
  }
  fs::create_directories(out_dir / "samples");
  for (const auto& p : pending) {
    write_pas_grid(out_dir / p.entry.path, TxDescriptor{p.entry.tx, p.entry.frequency}, p.map);
    m.samples.push_back(p.entry);
  }
  write_manifest(out_dir / "manifest.json", m);
  return m;
}

// ---- Checkpoints ----

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng.engine();
  return os.str();
}

void set_rng_state(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng.engine();
  if (!is) fail(Errc::FormatError, "invalid RNG state");
}

namespace {

void write_geometry(BinWriter& w, const std::vector<GeometryGradient>& g) {
  for (const auto& x : g) {
    w.f64s(x.mean.data(), 3);
    w.f64s(x.rotation.data(), 4);
    w.f64s(x.log_scales.data(), 3);
  }
}

void read_geometry(BinReader& r, std::vector<GeometryGradient>& g) {
  for (auto& x : g) {
    r.f64s(x.mean.data(), 3);
    r.f64s(x.rotation.data(), 4);
    r.f64s(x.log_scales.data(), 3);
  }
}

template <class Net>
void write_tensors(BinWriter& w, Net& net) {
  net.for_each_tensor([&](auto* p, std::size_t n) {
    w.pod<std::uint64_t>(n);
    w.f64s(p, n);
  });
}

template <class Net>
void read_tensors(BinReader& r, Net& net) {
  net.for_each_tensor([&](double* p, std::size_t n) {
    const auto stored = r.pod<std::uint64_t>();
    if (stored != n) fail(Errc::FormatError, r.origin() + ": network tensor size does not match the stored config");
    r.f64s(p, n);
  });
}

void write_box(BinWriter& w, const Box& b) {
  w.f64s(b.min.data(), 3);
  w.f64s(b.max.data(), 3);
}

Box read_box(BinReader& r) {
  Box b;
  r.f64s(b.min.data(), 3);
  r.f64s(b.max.data(), 3);
  return b;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  BinWriter w(out);
  w.bytes("XCKP", 4);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.str(config_to_yaml(c.config));
  w.str(c.model.variant.name());
  w.pod<std::uint64_t>(c.iteration);
  w.pod<std::uint64_t>(c.model.version);
  w.str(c.rng_state);
  w.f64s(c.rx.center.data(), 3);
  w.pod<double>(c.rx.sphere_radius);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(c.grid.rows()));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(c.grid.cols()));
  write_box(w, c.model.scene.bounds);
  write_box(w, c.model.net.config.bounds);
  const std::size_t n = c.model.scene.size();
  w.pod<std::uint64_t>(n);
  for (const auto& g : c.model.scene.gaussians) {
    w.f64s(g.mean.data(), 3);
    w.f64s(g.rotation.data(), 4);
    w.f64s(g.log_scales.data(), 3);
  }
  write_tensors(w, c.model.net);
  w.pod<std::uint64_t>(c.optimizer.step);
  if (c.optimizer.m.geometry.size() != n || c.optimizer.v.geometry.size() != n)
    fail(Errc::ShapeMismatch, "optimizer state does not match the scene");
  write_geometry(w, c.optimizer.m.geometry);
  write_tensors(w, const_cast<NetworkGradients&>(c.optimizer.m.net));
  write_geometry(w, c.optimizer.v.geometry);
  write_tensors(w, const_cast<NetworkGradients&>(c.optimizer.v.net));
}

void write_checkpoint(const fs::path& path, const Checkpoint& c) {
  const fs::path tmp = path.string() + ".tmp";
  {
    auto out = open_out(tmp);
    write_checkpoint(out, c);
    if (!out) fail(Errc::IoError, "failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint read_checkpoint(std::istream& in) {
  BinReader r(in, "checkpoint");
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "XCKP", 4) != 0) fail(Errc::FormatError, "not a checkpoint file (bad magic)");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) fail(Errc::FormatError, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config = parse_config(r.str(), "checkpoint config");
  c.model.variant = ModelVariant::from_name(r.str());
  c.iteration = r.pod<std::uint64_t>();
  c.model.version = r.pod<std::uint64_t>();
  c.rng_state = r.str();
  r.f64s(c.rx.center.data(), 3);
  c.rx.sphere_radius = r.pod<double>();
  const auto rows = r.pod<std::uint32_t>();
  const auto cols = r.pod<std::uint32_t>();
  if (rows < 1 || cols < 1 || rows > 65535 || cols > 65535) fail(Errc::FormatError, "implausible grid in checkpoint");
  c.grid = AngularGrid(static_cast<int>(rows), static_cast<int>(cols));
  c.model.scene.bounds = read_box(r);
  NetworkConfig nc = c.config.network;
  nc.bounds = read_box(r);
  const auto n = r.pod<std::uint64_t>();
  if (n == 0 || n > (std::uint64_t{1} << 28)) fail(Errc::FormatError, "implausible Gaussian count in checkpoint");
  c.model.scene.gaussians.resize(n);
  for (auto& g : c.model.scene.gaussians) {
    r.f64s(g.mean.data(), 3);
    r.f64s(g.rotation.data(), 4);
    r.f64s(g.log_scales.data(), 3);
  }
  c.model.net = NetworkParams::zeros(nc);
  read_tensors(r, c.model.net);
  c.optimizer = OptimizerState::zeros_like(c.model);
  c.optimizer.step = r.pod<std::uint64_t>();
  read_geometry(r, c.optimizer.m.geometry);
  read_tensors(r, c.optimizer.m.net);
  read_geometry(r, c.optimizer.v.geometry);
  read_tensors(r, c.optimizer.v.net);
  if (in.peek() != std::char_traits<char>::eof()) fail(Errc::FormatError, "trailing bytes in checkpoint");
  return c;
}

Checkpoint read_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) fail(Errc::IoError, "checkpoint not found: " + path.string());
  auto in = open_in(path);
  try {
    return read_checkpoint(in);
  } catch (const Error& e) {
    fail(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace xfreq::io
