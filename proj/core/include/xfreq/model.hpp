#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "xfreq/scene.hpp"
#include "xfreq/widefreq_net.hpp"

namespace xfreq {

/// Component switches used by the ablation driver.
struct ModelVariant {
  bool frequency_modulation = true;  // false: frequency input severed, lambda = 1
  bool adaptive_footprint = true;    // false: fixed circular 3-cell footprint, lambda = 1

  /// One of baseline | no_freq_modulation | no_aos | full.
  static ModelVariant from_name(std::string_view name);
  std::string name() const;
  bool operator==(const ModelVariant&) const = default;
};

/// Trainable state: shared Gaussian geometry plus the attribute network.
struct Model {
  GaussianScene scene;
  NetworkParams net;
  ModelVariant variant;
  /// Bumped by every parameter update; render graphs remember it.
  std::uint64_t version = 0;
};

}  // namespace xfreq
