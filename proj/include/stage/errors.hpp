#pragma once

#include <stdexcept>

namespace stage {

/// Dimension mismatch in a numeric op; messages name both shapes.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed dataset, checkpoint, or config contents.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Missing or unreadable input file; maps to a usage error at the CLI.
struct FileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace stage
