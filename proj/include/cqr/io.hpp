#pragma once

// Dataset ingestion, report emission and locale-independent CSV handling.
// Every number is written with shortest round-trip formatting so emitted files
// re-ingest bit-exactly; files are written atomically (temp + rename).

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "cqr/bootstrap.hpp"
#include "cqr/test_stats.hpp"
#include "cqr/types.hpp"

namespace cqr {

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (*(end - 1) == ' ' || *(end - 1) == '\t' || *(end - 1) == '\r')) --end;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end)
    throw std::invalid_argument("unparseable number '" + s + "' at " + where);
  return v;
}

inline void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, target);
}

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Numeric-aware ordering for group/arm labels ("2" < "10", "argon" < "xenon").
inline bool label_less(const std::string& a, const std::string& b) {
  double da = 0.0, db = 0.0;
  auto ra = std::from_chars(a.data(), a.data() + a.size(), da);
  auto rb = std::from_chars(b.data(), b.data() + b.size(), db);
  const bool na = ra.ec == std::errc() && ra.ptr == a.data() + a.size();
  const bool nb = rb.ec == std::errc() && rb.ptr == b.data() + b.size();
  if (na && nb) return da < db;
  return a < b;
}

}  // namespace detail

// Column roles of a dataset file. Exactly one of group_col / pair_col must be
// set; pair mode additionally needs the arm column that orders the two rows of
// each pair.
struct DatasetSchema {
  std::string time_col;
  std::string status_col;
  std::string group_col;
  std::string pair_col;
  std::string arm_col;
  std::vector<std::string> covariate_cols;
  char delimiter = ',';
  bool header = true;
  std::string group_one;  // label of sample 1 (default: smallest label)
  std::string arm_one;    // arm label of sample 1 within each pair

  void validate() const {
    if (time_col.empty() || status_col.empty())
      throw std::invalid_argument("DatasetSchema: time and status columns are mandatory");
    const bool g = !group_col.empty(), p = !pair_col.empty();
    if (g == p)
      throw std::invalid_argument("DatasetSchema: exactly one of group/pair column");
    if (p && arm_col.empty())
      throw std::invalid_argument("DatasetSchema: pair mode requires an arm column");
  }
};

struct LoadedData {
  ComparisonInput input;
  std::string label1, label2;  // group or arm labels, sample order
};

namespace detail {

struct DatasetRow {
  RawRow raw;
  std::string key, arm;
  std::size_t lineno = 0;
};

// Shared row parser; key/arm columns are read only when requested.
inline std::vector<DatasetRow> read_rows(const std::string& path, const DatasetSchema& schema,
                                         bool want_key) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);

  std::vector<std::string> names;
  std::string line;
  std::size_t lineno = 0;

  if (schema.header) {
    if (!std::getline(in, line)) throw std::invalid_argument(path + ": empty file");
    ++lineno;
    for (auto& c : split_line(line, schema.delimiter)) names.push_back(trim(c));
  }

  auto column_index = [&](const std::string& name) -> int {
    if (!schema.header) {
      // headerless files address columns as c0, c1, ...
      if (name.size() > 1 && name[0] == 'c') {
        try { return std::stoi(name.substr(1)); } catch (...) {}
      }
      throw std::invalid_argument("headerless files need cN column names, got '" + name + "'");
    }
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end())
      throw std::invalid_argument(path + ": column '" + name + "' not found");
    return static_cast<int>(it - names.begin());
  };

  const int time_idx = column_index(schema.time_col);
  const int status_idx = column_index(schema.status_col);
  const bool pair_mode = !schema.pair_col.empty();
  const int key_idx =
      want_key ? column_index(pair_mode ? schema.pair_col : schema.group_col) : -1;
  const int arm_idx = want_key && pair_mode ? column_index(schema.arm_col) : -1;
  std::vector<int> cov_idx;
  for (const auto& c : schema.covariate_cols) cov_idx.push_back(column_index(c));

  std::vector<DatasetRow> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line, schema.delimiter);
    auto cell = [&](int idx, const std::string& col) -> const std::string& {
      if (idx < 0 || idx >= static_cast<int>(cells.size()))
        throw std::invalid_argument(path + ": row " + std::to_string(lineno) +
                                    " is missing column '" + col + "'");
      return cells[static_cast<std::size_t>(idx)];
    };
    DatasetRow r;
    r.lineno = lineno;
    r.raw.time = parse_double(cell(time_idx, schema.time_col),
                              path + " row " + std::to_string(lineno) + " column '" +
                                  schema.time_col + "'");
    const std::string status_s = trim(cell(status_idx, schema.status_col));
    if (status_s == "0")
      r.raw.event = 0;
    else if (status_s == "1")
      r.raw.event = 1;
    else
      throw std::invalid_argument(path + ": row " + std::to_string(lineno) + " column '" +
                                  schema.status_col + "': status '" + status_s +
                                  "' is not 0 or 1");
    for (std::size_t c = 0; c < cov_idx.size(); ++c)
      r.raw.covariates.push_back(
          parse_double(cell(cov_idx[c], schema.covariate_cols[c]),
                       path + " row " + std::to_string(lineno) + " column '" +
                           schema.covariate_cols[c] + "'"));
    if (want_key) {
      r.key = trim(cell(key_idx, pair_mode ? schema.pair_col : schema.group_col));
      if (pair_mode) r.arm = trim(cell(arm_idx, schema.arm_col));
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw std::invalid_argument(path + ": no data rows");
  return rows;
}

}  // namespace detail

// Loads every row of the file as one sample; group/pair columns are ignored.
inline SampleData load_single_csv(const std::string& path, const DatasetSchema& schema) {
  if (schema.time_col.empty() || schema.status_col.empty())
    throw std::invalid_argument("DatasetSchema: time and status columns are mandatory");
  std::vector<RawRow> raw;
  for (auto& r : detail::read_rows(path, schema, false)) raw.push_back(std::move(r.raw));
  return validate_sample(raw);
}

// Parses and validates a dataset file. Group mode splits rows into two
// independent samples; pair mode aligns subjects (exactly two rows per id,
// distinct arms) into paired samples.
inline LoadedData load_csv(const std::string& path, const DatasetSchema& schema) {
  schema.validate();
  const bool pair_mode = !schema.pair_col.empty();
  using detail::DatasetRow;
  std::vector<DatasetRow> rows = detail::read_rows(path, schema, true);

  if (!pair_mode) {
    std::vector<std::string> labels;
    for (const auto& r : rows)
      if (std::find(labels.begin(), labels.end(), r.key) == labels.end())
        labels.push_back(r.key);
    if (labels.size() != 2)
      throw std::invalid_argument(path + ": group column must have exactly 2 values, found " +
                                  std::to_string(labels.size()));
    std::sort(labels.begin(), labels.end(), detail::label_less);
    std::string first = schema.group_one.empty() ? labels[0] : schema.group_one;
    if (first != labels[0] && first != labels[1])
      throw std::invalid_argument(path + ": group label '" + first + "' not present");
    const std::string second = first == labels[0] ? labels[1] : labels[0];
    std::vector<RawRow> r1, r2;
    for (const auto& r : rows) (r.key == first ? r1 : r2).push_back(r.raw);
    LoadedData out{ComparisonInput::independent(validate_sample(r1), validate_sample(r2)),
                   first, second};
    return out;
  }

  // Pair mode: keep first-appearance subject order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<const DatasetRow*>> by_id;
  for (const auto& r : rows) {
    auto& v = by_id[r.key];
    if (v.empty()) order.push_back(r.key);
    v.push_back(&r);
  }
  std::vector<std::string> arms;
  for (const auto& [id, group] : by_id) {
    if (group.size() != 2)
      throw std::invalid_argument(path + ": pair '" + id + "' has " +
                                  std::to_string(group.size()) + " rows, expected 2");
    if (group[0]->arm == group[1]->arm)
      throw std::invalid_argument(path + ": pair '" + id + "' has duplicate arm '" +
                                  group[0]->arm + "'");
    for (const DatasetRow* r : group)
      if (std::find(arms.begin(), arms.end(), r->arm) == arms.end()) arms.push_back(r->arm);
  }
  if (arms.size() != 2)
    throw std::invalid_argument(path + ": arm column must have exactly 2 values");
  std::sort(arms.begin(), arms.end(), detail::label_less);
  std::string first = schema.arm_one.empty() ? arms[0] : schema.arm_one;
  if (first != arms[0] && first != arms[1])
    throw std::invalid_argument(path + ": arm label '" + first + "' not present");
  const std::string second = first == arms[0] ? arms[1] : arms[0];

  std::vector<RawRow> r1, r2;
  for (const auto& id : order) {
    const auto& group = by_id[id];
    const DatasetRow* a = group[0]->arm == first ? group[0] : group[1];
    const DatasetRow* b = group[0]->arm == first ? group[1] : group[0];
    r1.push_back(a->raw);
    r2.push_back(b->raw);
  }
  LoadedData out{
      ComparisonInput::from_paired(PairedData(validate_sample(r1), validate_sample(r2))),
      first, second};
  return out;
}

// Coefficient process as CSV: one row per defined grid level. `group` tags the
// sample the process belongs to.
inline std::string coefficient_csv(const std::vector<std::pair<std::string,
                                       const CoefficientProcess*>>& processes,
                                   const std::vector<std::string>& coef_names) {
  std::ostringstream out;
  out << "group,tau";
  for (const auto& c : coef_names) out << ',' << c;
  out << '\n';
  for (const auto& [label, proc] : processes) {
    for (int k = 1; k <= proc->defined_upto; ++k) {
      out << label << ',' << format_double(proc->grid.level(k));
      for (int j = 0; j < proc->dim(); ++j) out << ',' << format_double(proc->beta(k - 1, j));
      out << '\n';
    }
  }
  return out.str();
}

// Parses coefficient CSV back into (label, taus, rows); round-trips exactly.
struct ParsedCoefficients {
  std::string group;
  std::vector<double> taus;
  std::vector<std::vector<double>> beta;
};

inline std::vector<ParsedCoefficients> parse_coefficient_csv(const std::string& content) {
  std::istringstream in(content);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("coefficient CSV: empty");
  std::vector<ParsedCoefficients> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_line(line, ',');
    if (cells.size() < 3)
      throw std::invalid_argument("coefficient CSV: short row " + std::to_string(lineno));
    if (out.empty() || out.back().group != cells[0]) {
      out.push_back(ParsedCoefficients{cells[0], {}, {}});
    }
    auto& block = out.back();
    block.taus.push_back(parse_double(cells[1], "row " + std::to_string(lineno)));
    std::vector<double> row;
    for (std::size_t c = 2; c < cells.size(); ++c)
      row.push_back(parse_double(cells[c], "row " + std::to_string(lineno)));
    block.beta.push_back(std::move(row));
  }
  return out;
}

// Band table: per tau and coefficient, the point difference with nearest-rank
// 2.5%/97.5% percentiles and the mean of the centered bootstrap draws.
struct BandRow {
  double tau = 0.0;
  std::string coef;
  double point = 0.0;
  double lower = 0.0;
  double mean = 0.0;
  double upper = 0.0;
};

inline std::vector<BandRow> band_table(const Eigen::MatrixXd& point,
                                       const BootstrapDraws& draws, const TauGrid& grid,
                                       const std::vector<std::string>& coef_names) {
  if (draws.count() < 1) throw std::invalid_argument("band_table: draws must be nonempty");
  const auto taus = grid.analysis_levels();
  const int na = static_cast<int>(taus.size());
  const int m = static_cast<int>(point.cols());
  if (static_cast<int>(coef_names.size()) != m)
    throw std::invalid_argument("band_table: coefficient name count mismatch");
  std::vector<BandRow> rows;
  rows.reserve(static_cast<std::size_t>(na) * static_cast<std::size_t>(m));
  std::vector<double> vals(static_cast<std::size_t>(draws.count()));
  for (int t = 0; t < na; ++t) {
    for (int c = 0; c < m; ++c) {
      double mean = 0.0;
      for (int j = 0; j < draws.count(); ++j) {
        vals[static_cast<std::size_t>(j)] = draws.draws[static_cast<std::size_t>(j)](t, c);
        mean += vals[static_cast<std::size_t>(j)];
      }
      mean /= static_cast<double>(draws.count());
      std::sort(vals.begin(), vals.end());
      BandRow row;
      row.tau = taus[static_cast<std::size_t>(t)];
      row.coef = coef_names[static_cast<std::size_t>(c)];
      row.point = point(t, c);
      row.lower = nearest_rank_quantile(vals, 0.025);
      row.mean = mean;
      row.upper = nearest_rank_quantile(vals, 0.975);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline std::string band_csv(const std::vector<BandRow>& rows) {
  std::ostringstream out;
  out << "tau,coef,point,lower,mean,upper\n";
  for (const auto& r : rows)
    out << format_double(r.tau) << ',' << r.coef << ',' << format_double(r.point) << ','
        << format_double(r.lower) << ',' << format_double(r.mean) << ','
        << format_double(r.upper) << '\n';
  return out.str();
}

}  // namespace cqr
