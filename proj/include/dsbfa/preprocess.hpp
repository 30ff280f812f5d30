#ifndef DSBFA_PREPROCESS_HPP
#define DSBFA_PREPROCESS_HPP

// Data preparation: age adjustment, reference-grid coarsening, time scaling.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dsbfa/dataset.hpp"
#include "dsbfa/error.hpp"
#include "dsbfa/io.hpp"

namespace dsbfa {

/// Per-biomarker OLS of every measurement on subject age; returns residuals.
/// `ages` follows the dataset's subject order.
inline Dataset regress_out_age(const Dataset& ds, const std::vector<double>& ages) {
  detail::require(static_cast<int>(ages.size()) == ds.n(), "regress_out_age: need one age per subject");
  double sw = 0, sa = 0;
  for (int i = 0; i < ds.n(); ++i) {
    detail::require(std::isfinite(ages[static_cast<std::size_t>(i)]), "regress_out_age: non-finite age");
    sw += ds.subject(i).q();
    sa += ds.subject(i).q() * ages[static_cast<std::size_t>(i)];
  }
  const double abar = sa / sw;
  double saa = 0;
  Eigen::VectorXd sxa = Eigen::VectorXd::Zero(ds.p());
  Eigen::VectorXd sx = Eigen::VectorXd::Zero(ds.p());
  for (int i = 0; i < ds.n(); ++i) {
    const double d = ages[static_cast<std::size_t>(i)] - abar;
    const Eigen::VectorXd rows = ds.subject(i).X.rowwise().sum();
    saa += ds.subject(i).q() * d * d;
    sxa += d * rows;
    sx += rows;
  }
  if (!(saa > 1e-12 * std::max(1.0, abar * abar) * sw)) {
    throw InvalidArgument("regress_out_age: age is constant across measurements (singular design)");
  }
  const Eigen::VectorXd beta1 = sxa / saa;
  const Eigen::VectorXd xbar = sx / sw;
  std::vector<Subject> out = ds.subjects();
  for (int i = 0; i < ds.n(); ++i) {
    const double d = ages[static_cast<std::size_t>(i)] - abar;
    auto& s = out[static_cast<std::size_t>(i)];
    s.X.colwise() -= xbar + d * beta1;
  }
  return Dataset(ds.biomarkers(), std::move(out));
}

/// Two-column table subject_id,age; ages are returned in dataset subject order.
inline std::vector<double> read_ages(const std::string& path, const Dataset& ds) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ages file " + path);
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "subject_id,age") {
    throw IoError(path + ": header must be subject_id,age");
  }
  std::map<std::string, double> by_id;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto f = detail::split_line(line);
    const std::string where = path + ":" + std::to_string(line_no);
    if (f.size() != 2) throw IoError(where + ": expected 2 fields");
    by_id[detail::trim(f[0])] = detail::parse_double(detail::trim(f[1]), where);
  }
  std::vector<double> ages;
  for (const auto& s : ds.subjects()) {
    const auto it = by_id.find(s.id);
    if (it == by_id.end()) throw IoError(path + ": no age for subject " + s.id);
    ages.push_back(it->second);
  }
  return ages;
}

/// Nearest reference time; equidistant ties go to the earlier one.
inline double snap_to_reference(double t, const std::vector<double>& ref) {
  auto it = std::lower_bound(ref.begin(), ref.end(), t);
  if (it == ref.begin()) return ref.front();
  if (it == ref.end()) return ref.back();
  const double hi = *it, lo = *(it - 1);
  return (hi - t) < (t - lo) ? hi : lo;
}

struct GridMapping {
  std::vector<double> original;
  std::vector<double> mapped;  ///< per original observation; non-decreasing
  TimeGrid grid;               ///< distinct mapped times
  std::vector<int> slot;       ///< position of each original observation in `grid`

  bool has_collision() const { return grid.size() < static_cast<int>(original.size()); }
};

/// Anchor the first time at its nearest reference time, then carry each
/// adjacent gap forward from the previous mapped time and snap.
inline GridMapping map_to_reference_grid(const TimeGrid& times, const std::vector<double>& ref) {
  detail::require(!ref.empty(), "map_to_reference_grid: empty reference grid");
  for (std::size_t r = 1; r < ref.size(); ++r) {
    detail::require(ref[r] > ref[r - 1], "map_to_reference_grid: reference times must be sorted and distinct");
  }
  detail::require(!times.empty(), "map_to_reference_grid: no observation times");
  GridMapping m;
  m.original = times.values();
  for (int j = 0; j < times.size(); ++j) {
    const double t = j == 0 ? times[0] : m.mapped.back() + (times[j] - times[j - 1]);
    m.mapped.push_back(std::binary_search(ref.begin(), ref.end(), t) ? t : snap_to_reference(t, ref));
  }
  std::vector<double> distinct = m.mapped;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  m.grid = TimeGrid(distinct);
  for (double t : m.mapped) m.slot.push_back(*m.grid.index_of(t));
  return m;
}

struct MappingRecord {
  std::string subject;
  double original = 0.0;
  double mapped = 0.0;
  bool merged = false;  ///< shares its slot with another observation
};

struct MappedDataset {
  Dataset data;
  std::vector<MappingRecord> records;
  std::vector<GridMapping> mappings;  ///< per subject
  int merges = 0;                     ///< observations absorbed by averaging
};

/// Observations that land on one slot are averaged.
inline MappedDataset map_dataset_to_reference_grid(const Dataset& ds, const std::vector<double>& ref) {
  MappedDataset out;
  std::vector<Subject> subjects;
  for (const auto& s : ds.subjects()) {
    GridMapping m = map_to_reference_grid(s.times, ref);
    Subject t;
    t.id = s.id;
    t.times = m.grid;
    t.X = Eigen::MatrixXd::Zero(ds.p(), m.grid.size());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(m.grid.size());
    for (int j = 0; j < s.q(); ++j) {
      const int slot = m.slot[static_cast<std::size_t>(j)];
      t.X.col(slot) += s.X.col(j);
      counts(slot) += 1.0;
    }
    for (int c = 0; c < m.grid.size(); ++c) t.X.col(c) /= counts(c);
    for (int j = 0; j < s.q(); ++j) {
      const bool merged = counts(m.slot[static_cast<std::size_t>(j)]) > 1;
      out.records.push_back({s.id, s.times[j], m.mapped[static_cast<std::size_t>(j)], merged});
    }
    out.merges += s.q() - m.grid.size();
    out.mappings.push_back(std::move(m));
    subjects.push_back(std::move(t));
  }
  out.data = Dataset(ds.biomarkers(), std::move(subjects));
  return out;
}

inline CsvTable mapping_table(const MappedDataset& m) {
  CsvTable t({"subject_id", "original_time", "mapped_time", "merged"});
  for (const auto& r : m.records) {
    t.add({r.subject, format_number(r.original), format_number(r.mapped), r.merged ? "1" : "0"});
  }
  return t;
}

/// One-way random-effects ICC of the per-observation shift (after - before),
/// with subjects as classes (unbalanced form). A mapping that moves every time
/// of a subject by the same amount scores 1. Subjects with fewer than two
/// observations are skipped.
inline double icc_distance_diagnostic(const std::vector<std::vector<double>>& before,
                                      const std::vector<std::vector<double>>& after) {
  detail::require(before.size() == after.size(), "icc_distance_diagnostic: subject counts differ");
  std::vector<std::vector<double>> shifts;
  for (std::size_t i = 0; i < before.size(); ++i) {
    detail::require(before[i].size() == after[i].size(),
                    "icc_distance_diagnostic: subject " + std::to_string(i + 1) + " has different counts");
    if (before[i].size() < 2) continue;
    std::vector<double> d;
    for (std::size_t j = 0; j < before[i].size(); ++j) d.push_back(after[i][j] - before[i][j]);
    shifts.push_back(std::move(d));
  }
  if (shifts.size() < 2) throw InvalidArgument("icc_distance_diagnostic: fewer than two subjects with two or more observations");
  const double classes = static_cast<double>(shifts.size());
  double total = 0, sum = 0, sum_sq_sizes = 0;
  for (const auto& d : shifts) {
    total += static_cast<double>(d.size());
    sum_sq_sizes += static_cast<double>(d.size() * d.size());
    for (double x : d) sum += x;
  }
  const double grand = sum / total;
  double ssb = 0, ssw = 0;
  for (const auto& d : shifts) {
    double m = 0;
    for (double x : d) m += x;
    m /= static_cast<double>(d.size());
    ssb += static_cast<double>(d.size()) * (m - grand) * (m - grand);
    for (double x : d) ssw += (x - m) * (x - m);
  }
  const double msb = ssb / (classes - 1), msw = ssw / (total - classes);
  const double n0 = (total - sum_sq_sizes / total) / (classes - 1);
  if (msw == 0) return 1.0;
  return (msb - msw) / (msb + (n0 - 1) * msw);
}

inline double icc_distance_diagnostic(const std::vector<TimeGrid>& before, const std::vector<TimeGrid>& after) {
  std::vector<std::vector<double>> b, a;
  for (const auto& g : before) b.push_back(g.values());
  for (const auto& g : after) a.push_back(g.values());
  return icc_distance_diagnostic(b, a);
}

/// Uses the mapped time of every original observation, merged ones included.
inline double icc_distance_diagnostic(const MappedDataset& m) {
  std::vector<std::vector<double>> b, a;
  for (const auto& g : m.mappings) {
    b.push_back(g.original);
    a.push_back(g.mapped);
  }
  return icc_distance_diagnostic(b, a);
}

/// Division by the largest observed time, remembering the original grid so
/// grid points convert back exactly.
class TimeScale {
 public:
  TimeScale() = default;
  TimeScale(double scale, std::vector<double> original) : scale_(scale), original_(std::move(original)) {
    detail::require(scale_ > 0 && std::isfinite(scale_), "TimeScale: scale must be positive");
    for (double t : original_) standard_.push_back(t / scale_);
  }

  double scale() const { return scale_; }
  double to_standard(double t) const { return t / scale_; }

  double to_original(double s) const {
    auto it = std::lower_bound(standard_.begin(), standard_.end(), s);
    if (it != standard_.end() && *it == s) return original_[static_cast<std::size_t>(it - standard_.begin())];
    return s * scale_;
  }

 private:
  double scale_ = 1.0;
  std::vector<double> original_;
  std::vector<double> standard_;
};

struct StandardizedData {
  Dataset data;
  TimeScale scale;
};

inline StandardizedData standardize_times(const Dataset& ds) {
  const auto& g = ds.grid().values();
  const double tmax = g.back();
  if (!(tmax > 0)) throw InvalidArgument("standardize_times: largest observed time must be positive");
  std::vector<Subject> subjects = ds.subjects();
  for (auto& s : subjects) {
    std::vector<double> t = s.times.values();
    for (double& x : t) x /= tmax;
    s.times = TimeGrid(std::move(t));
  }
  return {Dataset(ds.biomarkers(), std::move(subjects)), TimeScale(tmax, g)};
}

}  // namespace dsbfa

#endif  // DSBFA_PREPROCESS_HPP
