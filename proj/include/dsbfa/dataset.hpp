#ifndef DSBFA_DATASET_HPP
#define DSBFA_DATASET_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "dsbfa/cp_kernel.hpp"
#include "dsbfa/error.hpp"

namespace dsbfa {

/// Observations of one subject: p x q_i expression matrix at its own times.
struct Subject {
  std::string id;
  TimeGrid times;
  Eigen::MatrixXd X;            ///< p x q_i, column j observed at times[j]
  std::vector<int> grid_index;  ///< position of each time on the dataset grid

  int q() const { return times.size(); }
};

/// Irregular longitudinal data for n subjects and p biomarkers, with the
/// union of all observation times as the common grid.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::vector<std::string> biomarkers, std::vector<Subject> subjects)
      : biomarkers_(std::move(biomarkers)), subjects_(std::move(subjects)) {
    const auto p = static_cast<Eigen::Index>(biomarkers_.size());
    detail::require(p >= 1, "Dataset: at least one biomarker required");
    detail::require(!subjects_.empty(), "Dataset: at least one subject required");
    std::vector<double> all;
    for (const auto& s : subjects_) {
      detail::require(s.q() >= 1, "Dataset: subject " + s.id + " has no observations");
      detail::require(s.X.rows() == p && s.X.cols() == s.q(),
                      "Dataset: subject " + s.id + " expression matrix must be p x q_i");
      detail::require(s.X.allFinite(), "Dataset: subject " + s.id + " has non-finite values");
      all.insert(all.end(), s.times.values().begin(), s.times.values().end());
    }
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    grid_ = TimeGrid(std::move(all));
    for (auto& s : subjects_) {
      s.grid_index.resize(static_cast<std::size_t>(s.q()));
      for (int j = 0; j < s.q(); ++j) s.grid_index[static_cast<std::size_t>(j)] = *grid_.index_of(s.times[j]);
    }
  }

  int n() const { return static_cast<int>(subjects_.size()); }
  int p() const { return static_cast<int>(biomarkers_.size()); }
  int q() const { return grid_.size(); }
  const TimeGrid& grid() const { return grid_; }
  const std::vector<std::string>& biomarkers() const { return biomarkers_; }
  const std::vector<Subject>& subjects() const { return subjects_; }
  const Subject& subject(int i) const { return subjects_.at(static_cast<std::size_t>(i)); }

  int total_observations() const {
    int total = 0;
    for (const auto& s : subjects_) total += s.q();
    return total;
  }

  /// Index of the subject with the given id, or -1.
  int find_subject(const std::string& id) const {
    for (int i = 0; i < n(); ++i) {
      if (subjects_[static_cast<std::size_t>(i)].id == id) return i;
    }
    return -1;
  }

  /// Mean of each biomarker over all subjects and times.
  Eigen::VectorXd biomarker_means() const {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(p());
    for (const auto& s : subjects_) sum += s.X.rowwise().sum();
    return sum / static_cast<double>(total_observations());
  }

  /// Dataset restricted to the given subjects (grid rebuilt).
  Dataset subset(const std::vector<int>& indices) const {
    std::vector<Subject> chosen;
    chosen.reserve(indices.size());
    for (int i : indices) chosen.push_back(subject(i));
    return Dataset(biomarkers_, std::move(chosen));
  }

  bool operator==(const Dataset& other) const {
    if (biomarkers_ != other.biomarkers_ || n() != other.n()) return false;
    for (int i = 0; i < n(); ++i) {
      const auto& a = subjects_[static_cast<std::size_t>(i)];
      const auto& b = other.subjects_[static_cast<std::size_t>(i)];
      if (a.id != b.id || !(a.times == b.times) || a.X != b.X) return false;
    }
    return true;
  }

 private:
  std::vector<std::string> biomarkers_;
  std::vector<Subject> subjects_;
  TimeGrid grid_;
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char sep = ',') {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, sep)) fields.push_back(field);
  if (!line.empty() && line.back() == sep) fields.emplace_back();
  return fields;
}

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline double parse_double(const std::string& text, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw IoError(where + ": cannot parse number '" + text + "'");
  }
}

}  // namespace detail

/// Read a long-format table with header subject_id,time,biomarker_id,value.
/// Subjects and biomarkers keep their order of first appearance. Every
/// observed (subject, time) must carry a value for every biomarker.
inline Dataset read_dataset(std::istream& in, const std::string& name = "dataset") {
  std::string line;
  if (!std::getline(in, line)) throw IoError(name + ": empty file");
  const auto header = detail::split_line(detail::trim(line));
  if (header.size() != 4 || detail::trim(header[0]) != "subject_id" ||
      detail::trim(header[1]) != "time" || detail::trim(header[2]) != "biomarker_id" ||
      detail::trim(header[3]) != "value") {
    throw IoError(name + ": header must be subject_id,time,biomarker_id,value");
  }

  std::vector<std::string> subject_order;
  std::unordered_map<std::string, std::size_t> subject_pos;
  std::vector<std::string> biomarker_order;
  std::unordered_map<std::string, std::size_t> biomarker_pos;
  // subject -> time -> biomarker -> value
  std::vector<std::map<double, std::map<std::size_t, double>>> cells;

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto f = detail::split_line(line);
    const std::string where = name + ":" + std::to_string(line_no);
    if (f.size() != 4) throw IoError(where + ": expected 4 fields");
    const std::string sid = detail::trim(f[0]);
    const std::string bid = detail::trim(f[2]);
    const double t = detail::parse_double(detail::trim(f[1]), where);
    const double v = detail::parse_double(detail::trim(f[3]), where);
    if (!std::isfinite(t) || !std::isfinite(v)) throw IoError(where + ": non-finite value");
    auto [sit, snew] = subject_pos.try_emplace(sid, subject_order.size());
    if (snew) {
      subject_order.push_back(sid);
      cells.emplace_back();
    }
    auto [bit, bnew] = biomarker_pos.try_emplace(bid, biomarker_order.size());
    if (bnew) biomarker_order.push_back(bid);
    auto& slot = cells[sit->second][t];
    if (!slot.emplace(bit->second, v).second) {
      throw IoError(where + ": duplicate value for subject " + sid + ", biomarker " + bid);
    }
  }
  if (subject_order.empty()) throw IoError(name + ": no observations");

  const std::size_t p = biomarker_order.size();
  std::vector<Subject> subjects;
  for (std::size_t i = 0; i < subject_order.size(); ++i) {
    Subject s;
    s.id = subject_order[i];
    std::vector<double> times;
    s.X.resize(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(cells[i].size()));
    Eigen::Index j = 0;
    for (const auto& [t, values] : cells[i]) {
      if (values.size() != p) {
        throw IoError(name + ": subject " + s.id + " at time " + fmt::format("{}", t) +
                      " is missing biomarker values (missing data is not supported)");
      }
      times.push_back(t);
      for (const auto& [g, v] : values) s.X(static_cast<Eigen::Index>(g), j) = v;
      ++j;
    }
    s.times = TimeGrid(std::move(times));
    subjects.push_back(std::move(s));
  }
  return Dataset(std::move(biomarker_order), std::move(subjects));
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file " + path);
  return read_dataset(in, path);
}

/// Write the long format, ordered by subject, time, biomarker.
inline void write_dataset(std::ostream& out, const Dataset& ds) {
  out << "subject_id,time,biomarker_id,value\n";
  for (const auto& s : ds.subjects()) {
    for (int j = 0; j < s.q(); ++j) {
      for (int g = 0; g < ds.p(); ++g) {
        out << fmt::format("{},{},{},{}\n", s.id, s.times[j], ds.biomarkers()[static_cast<std::size_t>(g)],
                           s.X(g, j));
      }
    }
  }
}

inline void write_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file " + path);
  write_dataset(out, ds);
}

}  // namespace dsbfa

#endif  // DSBFA_DATASET_HPP
