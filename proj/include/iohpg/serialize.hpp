#pragma once

// Disk formats for the experiment runner. Plants and realized controllers
// round-trip through JSON documents, and numeric traces are written as CSV
// with 17 significant digits so every double survives a parse unchanged.
// Malformed documents raise iohpg::Error with the offending field named.

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "plant.hpp"
#include "realization.hpp"

namespace iohpg {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Matrices <-> JSON (row-major nested arrays)
// ---------------------------------------------------------------------------

inline Json matrix_to_json(const Matrix& M) {
  Json rows = Json::array();
  for (Index i = 0; i < M.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json vector_to_json(const Vector& v) {
  Json arr = Json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

inline Matrix matrix_from_json(const Json& j, const std::string& name) {
  if (!j.is_array() || j.empty())
    throw Error("matrix_from_json: " + name + " must be a nonempty array");
  const bool nested = j.front().is_array();
  const Index rows = static_cast<Index>(j.size());
  const Index cols =
      nested ? static_cast<Index>(j.front().size()) : Index(1);
  if (cols < 1)
    throw Error("matrix_from_json: " + name + " has an empty row");
  Matrix M(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const Json& row = j[static_cast<std::size_t>(i)];
    if (nested) {
      if (!row.is_array() || static_cast<Index>(row.size()) != cols)
        throw Error("matrix_from_json: " + name + " row " +
                    std::to_string(i) + " is ragged");
      for (Index k = 0; k < cols; ++k) {
        const Json& cell = row[static_cast<std::size_t>(k)];
        if (!cell.is_number())
          throw Error("matrix_from_json: " + name + " entry (" +
                      std::to_string(i) + "," + std::to_string(k) +
                      ") is not a number");
        M(i, k) = cell.get<double>();
      }
    } else {
      if (!row.is_number())
        throw Error("matrix_from_json: " + name + " entry " +
                    std::to_string(i) + " is not a number");
      M(i, 0) = row.get<double>();
    }
  }
  return M;
}

inline Vector vector_from_json(const Json& j, const std::string& name) {
  if (!j.is_array())
    throw Error("vector_from_json: " + name + " must be an array");
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) {
    const Json& cell = j[static_cast<std::size_t>(i)];
    if (!cell.is_number())
      throw Error("vector_from_json: " + name + " entry " +
                  std::to_string(i) + " is not a number");
    v(i) = cell.get<double>();
  }
  return v;
}

// ---------------------------------------------------------------------------
// Plant definition files
// ---------------------------------------------------------------------------

inline Json plant_to_json(const PlantModel& plant) {
  return Json{{"A", matrix_to_json(plant.A)},
              {"B", matrix_to_json(plant.B)},
              {"C", matrix_to_json(plant.C)}};
}

// Shape, finiteness, stability, and minimality checks all come from the
// PlantModel constructor, so a loaded document satisfies the same contract
// as one built in code.
inline PlantModel plant_from_json(const Json& j) {
  for (const char* key : {"A", "B", "C"})
    if (!j.contains(key))
      throw Error(std::string("plant_from_json: missing field ") + key);
  return PlantModel(matrix_from_json(j.at("A"), "A"),
                    matrix_from_json(j.at("B"), "B"),
                    matrix_from_json(j.at("C"), "C"));
}

// ---------------------------------------------------------------------------
// Controller export files
// ---------------------------------------------------------------------------

inline Json controller_to_json(const DynamicController& ctrl) {
  Json j{{"L", ctrl.L},
         {"m", ctrl.m},
         {"r", ctrl.r},
         {"Xi", matrix_to_json(ctrl.Xi)},
         {"Lambda", matrix_to_json(ctrl.Lambda)},
         {"Omega", matrix_to_json(ctrl.Omega)}};
  if (ctrl.xi0.size() > 0) j["xi0"] = vector_to_json(ctrl.xi0);
  return j;
}

inline DynamicController controller_from_json(const Json& j) {
  for (const char* key : {"L", "m", "r", "Xi", "Lambda", "Omega"})
    if (!j.contains(key))
      throw Error(std::string("controller_from_json: missing field ") + key);
  DynamicController ctrl;
  ctrl.L = j.at("L").get<Index>();
  ctrl.m = j.at("m").get<Index>();
  ctrl.r = j.at("r").get<Index>();
  if (ctrl.L < 1 || ctrl.m < 1 || ctrl.r < 1)
    throw Error("controller_from_json: L, m, r must be positive");
  ctrl.Xi = matrix_from_json(j.at("Xi"), "Xi");
  ctrl.Lambda = matrix_from_json(j.at("Lambda"), "Lambda");
  ctrl.Omega = matrix_from_json(j.at("Omega"), "Omega");
  const Index order = ctrl.L * ctrl.m;
  if (ctrl.Xi.rows() != order || ctrl.Xi.cols() != order ||
      ctrl.Lambda.rows() != order || ctrl.Lambda.cols() != ctrl.r ||
      ctrl.Omega.rows() != ctrl.m || ctrl.Omega.cols() != order)
    throw Error("controller_from_json: matrix shapes do not match L, m, r");
  if (j.contains("xi0")) {
    ctrl.xi0 = vector_from_json(j.at("xi0"), "xi0");
    if (ctrl.xi0.size() != order)
      throw Error("controller_from_json: xi0 length does not match L*m");
  }
  return ctrl;
}

// ---------------------------------------------------------------------------
// File IO
// ---------------------------------------------------------------------------

inline Json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_json: cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error("load_json: " + path + ": " + e.what());
  }
}

inline void save_json(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error("save_json: cannot open " + path);
  out << j.dump(2) << '\n';
  if (!out) throw Error("save_json: write to " + path + " failed");
}

// ---------------------------------------------------------------------------
// CSV traces
// ---------------------------------------------------------------------------

// Shortest text that reproduces the double exactly on parse (17 significant
// digits round-trips IEEE binary64).
inline std::string format_sig(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Streams one CSV file: a fixed header row, then value rows whose arity is
// checked against the header. Doubles get 17 significant digits, integers
// print exactly, strings pass through verbatim (no quoting needed for the
// enum-like labels used here).
class CsvWriter {
 public:
  CsvWriter(const std::string& path, std::vector<std::string> columns)
      : out_(path), columns_(std::move(columns)) {
    if (!out_) throw Error("CsvWriter: cannot open " + path);
    for (std::size_t i = 0; i < columns_.size(); ++i) {
      if (i > 0) out_ << ',';
      out_ << columns_[i];
    }
    out_ << '\n';
  }

  template <typename... Cells>
  void row(const Cells&... cells) {
    if (sizeof...(cells) != columns_.size())
      throw Error("CsvWriter: row arity does not match header");
    std::size_t i = 0;
    (write_cell(cells, i++), ...);
    out_ << '\n';
  }

  void close() {
    out_.close();
    if (out_.fail()) throw Error("CsvWriter: flush failed");
  }

 private:
  template <typename T>
  void write_cell(const T& value, std::size_t i) {
    if (i > 0) out_ << ',';
    if constexpr (std::is_floating_point_v<T>)
      out_ << format_sig(value);
    else if constexpr (std::is_integral_v<T>)
      out_ << std::to_string(value);
    else
      out_ << value;
  }

  std::ofstream out_;
  std::vector<std::string> columns_;
};

}  // namespace iohpg
