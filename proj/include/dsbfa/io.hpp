#ifndef DSBFA_IO_HPP
#define DSBFA_IO_HPP

// JSON records for hyperparameters and sampler state, and small CSV helpers.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "dsbfa/cp_kernel.hpp"
#include "dsbfa/error.hpp"
#include "dsbfa/factor_model.hpp"

namespace dsbfa {

using Json = nlohmann::json;

namespace detail {

template <typename Derived>
Json matrix_to_json(const Eigen::MatrixBase<Derived>& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> matrix_from_json(const Json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j.at(0).size());
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Json& row = j.at(static_cast<std::size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != cols) throw IoError("ragged matrix in JSON record");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<Scalar>();
  }
  return m;
}

inline Json vector_to_json(const Eigen::VectorXd& v) {
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::VectorXd vector_from_json(const Json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace detail

/// Hyperparameter record. Flat keys use 1-based factor indices:
/// v0[1], v1[1], B0[1], B1[1], c[1], ..., psi2.
inline Json hyperparams_to_json(const MogpHyperparams& hp) {
  Json j = Json::object();
  j["k"] = hp.k();
  for (int a = 0; a < hp.k(); ++a) {
    const std::string s = fmt::format("[{}]", a + 1);
    j["v0" + s] = hp.v0(a);
    j["v1" + s] = hp.v1(a);
    j["B0" + s] = hp.B0(a);
    j["B1" + s] = hp.B1(a);
    j["c" + s] = hp.c(a);
  }
  j["psi2"] = hp.psi2;
  return j;
}

inline MogpHyperparams hyperparams_from_json(const Json& j) {
  try {
    const int k = j.at("k").get<int>();
    MogpHyperparams hp = MogpHyperparams::uniform(k, 0, 0, 1, 1, 0);
    for (int a = 0; a < k; ++a) {
      const std::string s = fmt::format("[{}]", a + 1);
      hp.v0(a) = j.at("v0" + s).get<double>();
      hp.v1(a) = j.at("v1" + s).get<double>();
      hp.B0(a) = j.at("B0" + s).get<double>();
      hp.B1(a) = j.at("B1" + s).get<double>();
      hp.c(a) = j.at("c" + s).get<double>();
    }
    hp.psi2 = j.at("psi2").get<double>();
    hp.validate();
    return hp;
  } catch (const Json::exception& e) {
    throw IoError(std::string("malformed hyperparameter record: ") + e.what());
  }
}

inline Json state_to_json(const LatentState& st) {
  Json j;
  j["M"] = detail::matrix_to_json(st.M);
  j["A"] = detail::matrix_to_json(st.A);
  j["Z"] = detail::matrix_to_json(st.Z);
  j["rho2"] = detail::vector_to_json(st.rho2);
  j["pi"] = detail::vector_to_json(st.pi);
  j["sigma2"] = detail::vector_to_json(st.sigma2);
  j["phi2"] = detail::vector_to_json(st.phi2);
  Json ys = Json::array();
  for (const auto& Yi : st.Y) ys.push_back(detail::matrix_to_json(Yi));
  j["Y"] = std::move(ys);
  return j;
}

inline LatentState state_from_json(const Json& j) {
  try {
    LatentState st;
    st.M = detail::matrix_from_json<double>(j.at("M"));
    st.A = detail::matrix_from_json<double>(j.at("A"));
    st.Z = detail::matrix_from_json<int>(j.at("Z"));
    st.rho2 = detail::vector_from_json(j.at("rho2"));
    st.pi = detail::vector_from_json(j.at("pi"));
    st.sigma2 = detail::vector_from_json(j.at("sigma2"));
    st.phi2 = detail::vector_from_json(j.at("phi2"));
    for (const auto& y : j.at("Y")) st.Y.push_back(detail::matrix_from_json<double>(y));
    return st;
  } catch (const Json::exception& e) {
    throw IoError(std::string("malformed state record: ") + e.what());
  }
}

inline Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
}

/// Write through a temporary file so a crash never leaves a truncated record.
inline void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("failed writing " + path);
  }
  std::filesystem::rename(tmp, path);
}

inline void write_json(const std::string& path, const Json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

/// Shortest round-trip decimal text of a double.
inline std::string format_number(double x) { return fmt::format("{}", x); }

/// Minimal CSV table builder with fixed column order.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(std::vector<std::string> row) {
    detail::require(row.size() == header_.size(), "CsvTable: row width does not match header");
    rows_.push_back(std::move(row));
  }

  std::size_t rows() const { return rows_.size(); }

  std::string str() const {
    std::ostringstream os;
    write_row(os, header_);
    for (const auto& r : rows_) write_row(os, r);
    return os.str();
  }

  void write(const std::string& path) const { write_text_atomic(path, str()); }

 private:
  static void write_row(std::ostream& os, const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) os << ',';
      const bool quote = row[c].find_first_of(",\"\n") != std::string::npos;
      if (quote) {
        os << '"';
        for (char ch : row[c]) os << (ch == '"' ? "\"\"" : std::string(1, ch));
        os << '"';
      } else {
        os << row[c];
      }
    }
    os << '\n';
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace dsbfa

#endif  // DSBFA_IO_HPP
