#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xfreq {

enum class Errc {
  // core types
  AllZeroMap,
  IndexOutOfRange,
  GridMismatch,
  InvalidGrid,
  InvalidValue,
  // physics oracle
  NonPositiveInput,
  FrequencyOutOfTableRange,
  TotalInternalReflection,
  TxOutsideRoom,
  TxCoincidentWithRx,
  InvalidScene,
  // scene / network / renderer
  EmptyBounds,
  FrequencyOutOfRange,
  PositionOutOfBounds,
  ShapeMismatch,
  GaussianAtReceiver,
  MisalignedAttributes,
  // training / metrics
  StaleGraph,
  EmptyDataset,
  GridTooSmall,
  EmptyList,
  InvalidSplit,
  InvalidSplitSpec,
  UnknownVariant,
  // persistence and configuration
  ConfigError,
  ManifestError,
  FormatError,
  IoError,
};

std::string_view to_string(Errc code) noexcept;

/// Input-validation failures (exit code 2 at the CLI) as opposed to runtime
/// failures (exit code 3).
bool is_validation_error(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace xfreq
