#include "daempc/system_file.h"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "daempc/errors.h"
#include "daempc/regularize.h"

namespace daempc {
namespace {

using json = nlohmann::json;

Matrix ReadMatrix(const json& doc, const std::string& key) {
  const json& v = doc.at(key);
  if (!v.is_array()) throw FileError(fmt::format("field '{}': expected a list of rows", key));
  const Eigen::Index rows = static_cast<Eigen::Index>(v.size());
  Eigen::Index cols = -1;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_array()) {
      throw FileError(fmt::format("field '{}': row {} is not a list", key, i));
    }
    const auto c = static_cast<Eigen::Index>(v[i].size());
    if (cols >= 0 && c != cols) {
      throw FileError(fmt::format("field '{}': row {} has {} entries, expected {}",
                                  key, i, c, cols));
    }
    cols = c;
  }
  Matrix M(rows, std::max<Eigen::Index>(cols, 0));
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      const json& x = v[i][j];
      if (!x.is_number()) {
        throw FileError(fmt::format("field '{}': entry ({}, {}) is not a number",
                                    key, i, j));
      }
      M(i, j) = x.get<double>();
    }
  }
  return M;
}

Vector ReadVector(const json& doc, const std::string& key) {
  const json& v = doc.at(key);
  if (!v.is_array()) throw FileError(fmt::format("field '{}': expected a list", key));
  Vector x(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) {
      throw FileError(fmt::format("field '{}': entry {} is not a number", key, i));
    }
    x(static_cast<Eigen::Index>(i)) = v[i].get<double>();
  }
  return x;
}

void CheckShape(const Matrix& M, const std::string& key, Eigen::Index rows,
                Eigen::Index cols) {
  // A 0 x 0 literal ([]) stands for an empty block of any shape.
  if (M.size() == 0 && (rows == 0 || cols == 0)) return;
  if (M.rows() != rows || M.cols() != cols) {
    throw FileError(fmt::format("field '{}': shape {}x{}, expected {}x{}", key,
                                M.rows(), M.cols(), rows, cols));
  }
}

template <typename T>
T ReadNumber(const json& block, const std::string& key, T fallback) {
  if (!block.contains(key)) return fallback;
  const json& v = block.at(key);
  if (!v.is_number()) throw FileError(fmt::format("field 'mpc.{}': not a number", key));
  if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) {
      throw FileError(fmt::format("field 'mpc.{}': expected an integer", key));
    }
  }
  return v.get<T>();
}

}  // namespace

Vector SystemFile::InitialState() const {
  if (x0) return *x0;
  if (Ex0) return StateFromMeasurement(sys, *Ex0);
  return Vector::Zero(sys.states());
}

SystemFile ParseSystemFile(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    // Byte offset to line number.
    const std::size_t pos = std::min<std::size_t>(e.byte, text.size());
    const long line = 1 + std::count(text.begin(), text.begin() + pos, '\n');
    throw FileError(fmt::format("{}:{}: JSON syntax error: {}", source, line, e.what()));
  }
  if (!doc.is_object()) throw FileError(source + ": top level must be an object");

  SystemFile f;
  f.name = doc.value("name", std::string());
  try {
    for (const char* key : {"E", "A", "S"}) {
      if (!doc.contains(key)) throw FileError(fmt::format("missing field '{}'", key));
    }
    f.sys.E = ReadMatrix(doc, "E");
    const Eigen::Index l = f.sys.E.rows(), n = f.sys.E.cols();
    f.sys.A = ReadMatrix(doc, "A");
    CheckShape(f.sys.A, "A", l, n);
    f.sys.B = doc.contains("B") ? ReadMatrix(doc, "B") : Matrix(l, 0);
    if (f.sys.B.size() == 0) f.sys.B.resize(l, f.sys.B.cols());
    CheckShape(f.sys.B, "B", l, f.sys.B.cols());
    const Eigen::Index m = f.sys.B.cols();

    if (doc.contains("F") || doc.contains("G")) {
      Matrix F = doc.contains("F") ? ReadMatrix(doc, "F") : Matrix();
      Matrix G = doc.contains("G") ? ReadMatrix(doc, "G") : Matrix();
      const Eigen::Index p = std::max(F.rows(), G.rows());
      if (F.size() == 0) F = Matrix::Zero(p, n);
      if (G.size() == 0) G = Matrix::Zero(p, m);
      CheckShape(F, "F", p, n);
      CheckShape(G, "G", p, m);
      f.constraints.F = F;
      f.constraints.G = G;
    } else {
      f.constraints.F = Matrix(0, n);
      f.constraints.G = Matrix(0, m);
    }

    Matrix S = ReadMatrix(doc, "S");
    CheckShape(S, "S", n + m, n + m);
    const double skew = (S - S.transpose()).cwiseAbs().maxCoeff();
    if (S.size() > 0 && skew > 0.0) {
      if (skew > 1e-12) {
        throw FileError(fmt::format("field 'S': not symmetric (skew part {:.3e})", skew));
      }
      f.warnings.push_back(fmt::format("S symmetrized (skew part {:.3e})", skew));
      S = Symmetrize(S);
    }
    f.S = S;

    if (doc.contains("x0")) {
      f.x0 = ReadVector(doc, "x0");
      if (f.x0->size() != n) {
        throw FileError(fmt::format("field 'x0': length {}, expected {}", f.x0->size(), n));
      }
    }
    if (doc.contains("Ex0")) {
      if (f.x0) throw FileError("fields 'x0' and 'Ex0' are mutually exclusive");
      f.Ex0 = ReadVector(doc, "Ex0");
      if (f.Ex0->size() != l) {
        throw FileError(fmt::format("field 'Ex0': length {}, expected {}", f.Ex0->size(), l));
      }
      try {
        StateFromMeasurement(f.sys, *f.Ex0);
      } catch (const DimensionError&) {
        throw FileError("field 'Ex0': not in the range of E");
      }
    }
    if (doc.contains("mpc")) {
      const json& b = doc.at("mpc");
      if (!b.is_object()) throw FileError("field 'mpc': expected an object");
      MpcBlock blk;
      blk.delta = ReadNumber(b, "delta", blk.delta);
      blk.horizon_multiple = ReadNumber(b, "horizon_multiple", blk.horizon_multiple);
      blk.substeps = ReadNumber(b, "substeps", blk.substeps);
      blk.steps = ReadNumber(b, "steps", blk.steps);
      if (!(blk.delta > 0.0)) throw FileError("field 'mpc.delta': must be positive");
      if (blk.horizon_multiple < 2) {
        throw FileError("field 'mpc.horizon_multiple': must be at least 2");
      }
      if (blk.substeps < 1) throw FileError("field 'mpc.substeps': must be at least 1");
      if (blk.steps < 0) throw FileError("field 'mpc.steps': must be nonnegative");
      f.mpc = blk;
    }
  } catch (const FileError& e) {
    throw FileError(fmt::format("{}: {}", source, e.what()));
  } catch (const json::exception& e) {
    throw FileError(fmt::format("{}: {}", source, e.what()));
  }
  return f;
}

SystemFile LoadSystemFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError(fmt::format("{}: cannot open file", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ParseSystemFile(ss.str(), path);
}

}  // namespace daempc
