#pragma once

// JSON problem files. Matrices are nested arrays in row-major order, e.g.
// "A": [[1, 0], [0, 1]]. A matrix with zero columns is written as a list of
// empty rows.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "daempc/numlin.h"
#include "daempc/pencil.h"

namespace daempc {

/// Malformed or inconsistent file. The message names the field (and the
/// line for syntax errors).
class FileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MpcBlock {
  double delta = 0.1;
  int horizon_multiple = 3;
  int substeps = 10;
  int steps = 100;
};

struct SystemFile {
  std::string name;
  DaeSystem sys;
  /// Empty (zero rows) when the file has no F and G.
  ConstraintSet constraints;
  Matrix S;
  std::optional<Vector> x0;
  /// Measured E x(0); alternative to x0.
  std::optional<Vector> Ex0;
  std::optional<MpcBlock> mpc;
  std::vector<std::string> warnings;

  /// x0, or the minimum-norm state reproducing Ex0, or zero.
  Vector InitialState() const;
};

SystemFile ParseSystemFile(const std::string& text,
                           const std::string& source = "<string>");
SystemFile LoadSystemFile(const std::string& path);

}  // namespace daempc
