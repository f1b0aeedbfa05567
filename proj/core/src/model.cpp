#include "xfreq/model.hpp"

#include "xfreq/error.hpp"

namespace xfreq {

ModelVariant ModelVariant::from_name(std::string_view name) {
  if (name == "full") return {true, true};
  if (name == "no_freq_modulation") return {false, true};
  if (name == "no_aos") return {true, false};
  if (name == "baseline") return {false, false};
  fail(Errc::UnknownVariant,
       "unknown variant '" + std::string(name) + "' (expected baseline, no_freq_modulation, no_aos or full)");
}

std::string ModelVariant::name() const {
  if (frequency_modulation && adaptive_footprint) return "full";
  if (adaptive_footprint) return "no_freq_modulation";
  if (frequency_modulation) return "no_aos";
  return "baseline";
}

}  // namespace xfreq
