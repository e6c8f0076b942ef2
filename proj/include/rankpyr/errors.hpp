#pragma once

#include <stdexcept>
#include <string>

namespace rankpyr {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller-supplied scalar or structural argument is out of contract.
struct InvalidParameter : Error {
  explicit InvalidParameter(const std::string& msg) : Error("invalid-parameter: " + msg) {}
};

// A head point lies outside its image.
struct InvalidAnnotation : Error {
  explicit InvalidAnnotation(const std::string& msg) : Error("invalid-annotation: " + msg) {}
};

// A crop box does not fit its grid or feature map.
struct InvalidRegion : Error {
  explicit InvalidRegion(const std::string& msg) : Error("invalid-region: " + msg) {}
};

// Tensor shapes or batch layout do not match what an operation expects.
struct InvalidInput : Error {
  explicit InvalidInput(const std::string& msg) : Error("invalid-input: " + msg) {}
};

// A pyramid level is too small to sample crop centers from; the caller
// skips ranking at that level.
struct LevelTooSmall : Error {
  explicit LevelTooSmall(const std::string& msg) : Error("level-too-small: " + msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("io-error: " + msg) {}
};

// Training diverged; carries a diagnostic dump (batch ids, counts, pair terms).
struct TrainingDiverged : Error {
  explicit TrainingDiverged(const std::string& msg) : Error("training-diverged: " + msg) {}
};

}  // namespace rankpyr
