#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "xfreq/physics.hpp"
#include "xfreq/training.hpp"

namespace xfreq::io {

namespace fs = std::filesystem;

inline constexpr std::uint16_t kPasGridVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr int kManifestVersion = 1;

// ---- PAS grid files ------------------------------------------------------

struct PasGridData {
  TxDescriptor tx;
  PASMap map;
};

void write_pas_grid(const fs::path& path, const TxDescriptor& tx, const PASMap& map);
PasGridData read_pas_grid(const fs::path& path);
/// Header only (rows, cols); throws FormatError on a bad magic or version.
AngularGrid read_pas_grid_shape(const fs::path& path);
void export_csv(const fs::path& path, const PASMap& map);

// ---- Scene files ---------------------------------------------------------

struct SceneFile {
  physics::SceneDescriptor scene;
  std::vector<Vec3> tx_positions;  // explicit positions; empty means sample tx_count
  int tx_count = 60;
  double clearance = 0.5;  // m from walls and from the RX
  std::vector<double> frequencies = {1e9, 10e9, 24.25e9, 37e9, 94e9};  // Hz
  AngularGrid grid{45, 180};
  std::uint64_t seed = 1;
};

SceneFile parse_scene(const std::string& text, const std::string& origin = "<scene>");
SceneFile load_scene(const fs::path& path);

// ---- Run configuration -----------------------------------------------------

struct ModelSettings {
  std::size_t gaussians = 2048;
  double initial_scale = 0.15;  // metres; <= 0 selects room diagonal / cbrt(N)
  double transmittance_bias = 2.2;  // initial pre-sigmoid bias of |delta|
  std::uint64_t init_seed = 1;
};

struct RunConfig {
  ModelSettings model;
  NetworkConfig network;  // bounds come from the dataset
  RenderOptions render;
  TrainConfig train;
  std::uint64_t checkpoint_interval = 0;
  std::string variant = "full";
  std::string split;  // split spec the model trains on; empty means every sample

  static RunConfig desk_scale();
  static RunConfig paper_scale();
  void validate() const;
};

/// Missing keys keep the values already in `base`; unknown keys are errors.
RunConfig parse_config(const std::string& text, const std::string& origin = "<config>",
                       const RunConfig& base = RunConfig::desk_scale());
RunConfig load_config(const fs::path& path, const RunConfig& base = RunConfig::desk_scale());
std::string config_to_yaml(const RunConfig& cfg);

// ---- Dataset manifests -----------------------------------------------------

struct ManifestSample {
  std::string id;
  Vec3 tx;
  double frequency;
  std::string path;  // relative to the manifest directory
};

struct DatasetManifest {
  int format_version = kManifestVersion;
  AngularGrid grid{45, 180};
  std::string scene_hash;
  std::uint64_t seed = 0;
  ReceiverConfig rx;
  Box room;
  std::vector<ManifestSample> samples;
};

std::string manifest_to_json(const DatasetManifest& m);
void write_manifest(const fs::path& path, const DatasetManifest& m);
/// Validates ids, referenced files and their headers.
DatasetManifest load_manifest(const fs::path& path);
Dataset load_dataset(const fs::path& manifest_path);
Dataset load_dataset(const fs::path& manifest_path, const DatasetManifest& m);

/// Samples TX positions, synthesizes every (position, frequency) map and
/// writes the grid files plus manifest.json into out_dir.
DatasetManifest generate_dataset(const SceneFile& scene, const std::string& scene_hash, const fs::path& out_dir);

std::string fnv1a_hex(const std::string& bytes);
std::string read_text(const fs::path& path);

// ---- Checkpoints -----------------------------------------------------------

struct Checkpoint {
  RunConfig config;
  Model model;
  OptimizerState optimizer;
  std::uint64_t iteration = 0;
  std::string rng_state;
  ReceiverConfig rx;  // render target of the training data
  AngularGrid grid{45, 180};
};

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt);
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const fs::path& path);
Checkpoint read_checkpoint(std::istream& in);

std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

}  // namespace xfreq::io
