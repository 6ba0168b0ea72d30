#pragma once

// Study dataset: one record per submission with treatment flag, acceptance
// outcome, covariates, publication date, and per-window citation counts.
// Construction of the dichotomized negative control outcome lives here too:
// N = 1 iff the n-year citation count exceeds the empirical q-quantile
// (nearest-rank) over the eligible sample.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "csv.hpp"
#include "date.hpp"
#include "schema.hpp"

namespace ncodid {

// Load/parse failure pinned to a row and column of the input.
class LoadError : public std::runtime_error {
 public:
  LoadError(std::string message, long row, std::string column)
      : std::runtime_error("row " + std::to_string(row) + ", column '" +
                           column + "': " + message),
        row_(row),
        column_(std::move(column)) {}

  long row() const { return row_; }         // 1-based, header = row 1
  const std::string& column() const { return column_; }

 private:
  long row_;
  std::string column_;
};

struct SubmissionRecord {
  std::string id;
  bool treatment = false;
  bool outcome = false;
  std::vector<double> covariates;  // aligned with schema entries
  Date publication_date;
  std::vector<Date> citing_dates;
  bool has_citing_dates = false;
  std::map<int, long> citation_counts;   // window years -> CC^(n)
  std::optional<bool> nco = std::nullopt;  // set by build_nco

  long citation_count(int window_years) const {
    auto it = citation_counts.find(window_years);
    if (it != citation_counts.end()) return it->second;
    if (!has_citing_dates) {
      throw std::invalid_argument("record '" + id +
                                  "' carries no citation count for window " +
                                  std::to_string(window_years));
    }
    long n = 0;
    const Date end = publication_date.add_years(window_years);
    for (const Date& d : citing_dates) {
      if (d >= publication_date && d <= end) ++n;
    }
    return n;
  }
};

// Count of citing dates d with pub <= d <= pub + n years; both endpoints
// inclusive, citations dated before publication excluded.
inline long compute_citation_window(const Date& publication_date,
                                    const std::vector<Date>& citing_dates,
                                    int window_years) {
  if (window_years < 1) {
    throw std::invalid_argument("window_years must be >= 1");
  }
  const Date end = publication_date.add_years(window_years);
  long n = 0;
  for (const Date& d : citing_dates) {
    if (d >= publication_date && d <= end) ++n;
  }
  return n;
}

struct Dataset {
  CovariateSchema schema;
  std::vector<SubmissionRecord> records;
  std::optional<std::pair<int, int>> year_range;

  const SubmissionRecord& by_id(const std::string& id) const {
    auto it = id_index_.find(id);
    if (it == id_index_.end()) {
      throw std::invalid_argument("no record with id '" + id + "'");
    }
    return records[it->second];
  }

  bool has_id(const std::string& id) const {
    return id_index_.count(id) != 0;
  }

  std::vector<std::string> ids_with_treatment(bool treated) const {
    std::vector<std::string> out;
    for (const auto& r : records) {
      if (r.treatment == treated) out.push_back(r.id);
    }
    return out;
  }

  double covariate(const SubmissionRecord& r, int index) const {
    return r.covariates.at(static_cast<std::size_t>(index));
  }

  // Rebuilds the id index and year range; call after mutating records.
  void finalize() {
    id_index_.clear();
    id_index_.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      auto [it, fresh] = id_index_.emplace(records[i].id, i);
      if (!fresh) {
        throw std::invalid_argument("duplicate record id '" + records[i].id +
                                    "'");
      }
    }
    year_range.reset();
    int yi = schema.index_of("year");
    if (yi >= 0 && !records.empty()) {
      int lo = std::numeric_limits<int>::max();
      int hi = std::numeric_limits<int>::min();
      for (const auto& r : records) {
        int y = static_cast<int>(std::llround(r.covariates[yi]));
        lo = std::min(lo, y);
        hi = std::max(hi, y);
      }
      year_range = std::make_pair(lo, hi);
    }
  }

 private:
  std::unordered_map<std::string, std::size_t> id_index_;
};

struct LoadReport {
  long rows_read = 0;
  long records_loaded = 0;
  long dropped_missing_publication_date = 0;
  bool citation_counts_precomputed = false;

  nlohmann::json to_json() const {
    return {{"rows_read", rows_read},
            {"records_loaded", records_loaded},
            {"dropped_missing_publication_date",
             dropped_missing_publication_date},
            {"citation_counts_precomputed", citation_counts_precomputed}};
  }
};

struct LoadResult {
  Dataset dataset;
  LoadReport report;
};

namespace detail {

inline bool parse_bool01(const std::string& s, bool& out) {
  if (s == "0") { out = false; return true; }
  if (s == "1") { out = true; return true; }
  return false;
}

inline double parse_number(const std::string& s, long row,
                           const std::string& column) {
  if (s.empty()) throw LoadError("missing value", row, column);
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw LoadError("not a finite number: '" + s + "'", row, column);
  }
  return v;
}

}  // namespace detail

// Parses and validates the study CSV. Rows with an empty publication date
// are dropped and counted; rows with an empty citing-date list (and no
// precomputed counts) get zero citations. Precomputed cc_<n> columns win
// over inline citing dates when both are present.
inline LoadResult load_dataset(std::istream& csv_source,
                               const CovariateSchema& schema) {
  csv::Table table = csv::read(csv_source);

  // Resolve header layout against the schema.
  std::unordered_map<std::string, int> col;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (!col.emplace(table.header[i], static_cast<int>(i)).second) {
      throw LoadError("duplicate column", 1, table.header[i]);
    }
  }
  auto require = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw LoadError("missing required column", 1, name);
    return it->second;
  };
  const int c_id = require("id");
  const int c_treat = require("treatment");
  const int c_outcome = require("outcome");
  const int c_pubdate = require("publication_date");
  const int c_citing = table.column("citing_dates");

  std::map<int, int> cc_cols;  // window years -> column
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    const std::string& h = table.header[i];
    if (h.rfind("cc_", 0) == 0 && h.size() > 3) {
      bool digits = std::all_of(h.begin() + 3, h.end(),
                                [](char c) { return c >= '0' && c <= '9'; });
      if (digits) cc_cols[std::stoi(h.substr(3))] = static_cast<int>(i);
    }
  }
  if (c_citing < 0 && cc_cols.empty()) {
    throw LoadError(
        "need a 'citing_dates' column or precomputed cc_<n> columns", 1,
        "citing_dates");
  }

  std::vector<int> cov_cols(schema.size());
  for (std::size_t i = 0; i < schema.size(); ++i) {
    cov_cols[i] = require(schema.at(i).name);
  }

  // Reject columns outside the contract (schema mismatch).
  std::unordered_set<std::string> known = {"id", "treatment", "outcome",
                                           "publication_date"};
  if (c_citing >= 0) known.insert("citing_dates");
  for (const auto& [n, c] : cc_cols) known.insert(table.header[c]);
  for (const auto& e : schema.entries()) known.insert(e.name);
  for (const auto& h : table.header) {
    if (!known.count(h)) throw LoadError("unexpected column", 1, h);
  }

  LoadResult out;
  out.dataset.schema = schema;
  out.report.citation_counts_precomputed = !cc_cols.empty();
  out.dataset.records.reserve(table.rows.size());

  for (std::size_t ri = 0; ri < table.rows.size(); ++ri) {
    const auto& row = table.rows[ri];
    const long rownum = static_cast<long>(ri) + 2;  // header is row 1
    ++out.report.rows_read;

    if (row[c_pubdate].empty()) {
      ++out.report.dropped_missing_publication_date;
      continue;
    }

    SubmissionRecord rec;
    rec.id = row[c_id];
    if (rec.id.empty()) throw LoadError("empty id", rownum, "id");

    if (!detail::parse_bool01(row[c_treat], rec.treatment)) {
      throw LoadError("treatment must be 0 or 1, got '" + row[c_treat] + "'",
                      rownum, "treatment");
    }
    if (!detail::parse_bool01(row[c_outcome], rec.outcome)) {
      throw LoadError("outcome must be 0 or 1, got '" + row[c_outcome] + "'",
                      rownum, "outcome");
    }

    auto pub = try_parse_date(row[c_pubdate]);
    if (!pub) {
      throw LoadError("unparseable date '" + row[c_pubdate] + "'", rownum,
                      "publication_date");
    }
    rec.publication_date = *pub;

    if (c_citing >= 0) {
      rec.has_citing_dates = true;
      const std::string& field = row[c_citing];
      std::size_t start = 0;
      while (start < field.size()) {
        std::size_t sep = field.find(';', start);
        if (sep == std::string::npos) sep = field.size();
        std::string piece = field.substr(start, sep - start);
        if (!piece.empty()) {
          auto d = try_parse_date(piece);
          if (!d) {
            throw LoadError("unparseable citing date '" + piece + "'", rownum,
                            "citing_dates");
          }
          rec.citing_dates.push_back(*d);
        }
        start = sep + 1;
      }
    }

    if (!cc_cols.empty()) {
      for (const auto& [n, c] : cc_cols) {
        const std::string& v = row[c];
        // Empty precomputed count = never matched to a citation record.
        long count = 0;
        if (!v.empty()) {
          double parsed = detail::parse_number(v, rownum, table.header[c]);
          count = std::llround(parsed);
          if (count < 0 || parsed != static_cast<double>(count)) {
            throw LoadError("citation count must be a nonnegative integer",
                            rownum, table.header[c]);
          }
        }
        rec.citation_counts[n] = count;
      }
    } else {
      for (int n = 1; n <= 3; ++n) {
        rec.citation_counts[n] =
            compute_citation_window(rec.publication_date, rec.citing_dates, n);
      }
    }

    // Window nesting must hold for stored counts.
    long prev = -1;
    for (const auto& [n, count] : rec.citation_counts) {
      if (count < prev) {
        throw LoadError("citation counts must be nondecreasing in the window",
                        rownum, "cc_" + std::to_string(n));
      }
      prev = count;
    }
    if (rec.has_citing_dates) {
      for (const auto& [n, count] : rec.citation_counts) {
        if (count > static_cast<long>(rec.citing_dates.size())) {
          throw LoadError("citation count exceeds number of citing dates",
                          rownum, "cc_" + std::to_string(n));
        }
      }
    }

    rec.covariates.resize(schema.size());
    for (std::size_t i = 0; i < schema.size(); ++i) {
      const CovariateEntry& e = schema.at(i);
      double v = detail::parse_number(row[cov_cols[i]], rownum, e.name);
      if (e.kind == CovariateKind::kBinary && v != 0.0 && v != 1.0) {
        throw LoadError("binary covariate must be 0 or 1", rownum, e.name);
      }
      rec.covariates[i] = v;
    }

    out.dataset.records.push_back(std::move(rec));
  }

  out.report.records_loaded = static_cast<long>(out.dataset.records.size());
  out.dataset.finalize();
  return out;
}

inline LoadResult load_dataset_file(const std::string& path,
                                    const CovariateSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open input file: " + path);
  return load_dataset(in, schema);
}

// ---------------------------------------------------------------------------
// Negative control outcome construction.

struct NcoSpec {
  int window_years = 0;
  double quantile = 0.0;
  long threshold = 0;             // realized empirical quantile CC^(n)_q
  int eligible_year_cutoff = 0;   // evaluation_year - window_years
  std::string sample_label;       // identifies the sample the threshold used

  friend bool operator==(const NcoSpec&, const NcoSpec&) = default;
};

inline void to_json(nlohmann::json& j, const NcoSpec& s) {
  j = {{"window_years", s.window_years},
       {"quantile", s.quantile},
       {"threshold", s.threshold},
       {"eligible_year_cutoff", s.eligible_year_cutoff},
       {"sample_label", s.sample_label}};
}

inline void from_json(const nlohmann::json& j, NcoSpec& s) {
  j.at("window_years").get_to(s.window_years);
  j.at("quantile").get_to(s.quantile);
  j.at("threshold").get_to(s.threshold);
  j.at("eligible_year_cutoff").get_to(s.eligible_year_cutoff);
  if (j.contains("sample_label")) j.at("sample_label").get_to(s.sample_label);
}

// Nearest-rank empirical quantile: smallest sample value whose CDF >= q.
template <typename T>
T quantile_nearest_rank(std::vector<T> values, double q) {
  if (values.empty()) throw std::invalid_argument("empty sample");
  if (!(q > 0.0 && q < 1.0)) {
    throw std::invalid_argument("quantile must lie in (0,1)");
  }
  std::sort(values.begin(), values.end());
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(values.size())));
  if (rank == 0) rank = 1;
  return values[rank - 1];
}

struct NcoResult {
  NcoSpec spec;
  Dataset dataset;  // eligible records only, each with rec.nco set
};

// Restricts to records whose year is within the window's reach, computes the
// nearest-rank q-quantile threshold of CC^(n) over the retained sample, and
// flags N = 1 iff CC^(n) > threshold. Datasets without a `year` covariate
// (synthetic runs) skip the year filter.
inline NcoResult build_nco(const Dataset& dataset, int window_years,
                           double quantile, int evaluation_year,
                           std::string sample_label = {}) {
  if (window_years < 1) {
    throw std::invalid_argument("window_years must be >= 1");
  }
  if (!(quantile > 0.0 && quantile < 1.0)) {
    throw std::invalid_argument("quantile must lie in (0,1)");
  }

  NcoResult out;
  out.spec.window_years = window_years;
  out.spec.quantile = quantile;
  out.spec.eligible_year_cutoff = evaluation_year - window_years;
  out.spec.sample_label = std::move(sample_label);

  const int year_idx = dataset.schema.index_of("year");
  out.dataset.schema = dataset.schema;
  for (const auto& rec : dataset.records) {
    if (year_idx >= 0 &&
        rec.covariates[year_idx] >
            static_cast<double>(out.spec.eligible_year_cutoff)) {
      continue;
    }
    out.dataset.records.push_back(rec);
  }
  if (out.dataset.records.empty()) {
    throw std::invalid_argument(
        "no records remain after the year filter (cutoff " +
        std::to_string(out.spec.eligible_year_cutoff) + ")");
  }

  std::vector<long> counts;
  counts.reserve(out.dataset.records.size());
  for (const auto& rec : out.dataset.records) {
    counts.push_back(rec.citation_count(window_years));
  }
  out.spec.threshold = quantile_nearest_rank(counts, quantile);

  for (auto& rec : out.dataset.records) {
    rec.nco = rec.citation_count(window_years) > out.spec.threshold;
  }
  out.dataset.finalize();
  return out;
}

// ---------------------------------------------------------------------------
// Schema validation report.

struct ValidationIssue {
  std::string covariate;  // empty for record-level issues
  std::string record_id;
  std::string what;
};

struct ValidationReport {
  long records_checked = 0;
  std::vector<ValidationIssue> issues;
  std::map<std::string, long> missing_by_covariate;

  bool clean() const { return issues.empty(); }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& i : issues) {
      arr.push_back({{"covariate", i.covariate},
                     {"record_id", i.record_id},
                     {"what", i.what}});
    }
    return {{"records_checked", records_checked},
            {"violations", issues.size()},
            {"issues", arr},
            {"missing_by_covariate", missing_by_covariate}};
  }
};

// Kind conformance, missingness, and out-of-range checks. Pure report; the
// dataset is left untouched.
inline ValidationReport validate_schema(const Dataset& dataset) {
  ValidationReport report;
  report.records_checked = static_cast<long>(dataset.records.size());
  for (const auto& e : dataset.schema.entries()) {
    report.missing_by_covariate[e.name] = 0;
  }

  for (const auto& rec : dataset.records) {
    if (rec.covariates.size() != dataset.schema.size()) {
      report.issues.push_back(
          {"", rec.id, "covariate vector length does not match schema"});
      continue;
    }
    for (std::size_t i = 0; i < dataset.schema.size(); ++i) {
      const CovariateEntry& e = dataset.schema.at(i);
      const double v = rec.covariates[i];
      if (std::isnan(v)) {
        ++report.missing_by_covariate[e.name];
        report.issues.push_back({e.name, rec.id, "missing value"});
        continue;
      }
      switch (e.kind) {
        case CovariateKind::kBinary:
          if (v != 0.0 && v != 1.0) {
            report.issues.push_back({e.name, rec.id, "binary value not 0/1"});
          }
          break;
        case CovariateKind::kCategorical:
          if (!e.categories.empty() &&
              std::find(e.categories.begin(), e.categories.end(), v) ==
                  e.categories.end()) {
            report.issues.push_back(
                {e.name, rec.id, "category code not in schema list"});
          }
          break;
        case CovariateKind::kNumeric:
          if (!std::isfinite(v)) {
            report.issues.push_back({e.name, rec.id, "non-finite value"});
          } else if (e.integer_valued &&
                     v != std::floor(v)) {
            report.issues.push_back(
                {e.name, rec.id, "integer-valued covariate has fraction"});
          }
          break;
      }
    }
    long prev = std::numeric_limits<long>::min();
    for (const auto& [n, count] : rec.citation_counts) {
      if (count < 0) {
        report.issues.push_back(
            {"", rec.id, "negative citation count cc_" + std::to_string(n)});
      }
      if (count < prev) {
        report.issues.push_back(
            {"", rec.id, "citation windows not nested at cc_" +
                             std::to_string(n)});
      }
      prev = count;
      if (rec.has_citing_dates &&
          count > static_cast<long>(rec.citing_dates.size())) {
        report.issues.push_back(
            {"", rec.id, "cc_" + std::to_string(n) +
                             " exceeds number of citing dates"});
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// CSV writer (the format load_dataset reads back).

// Shortest decimal representation that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return buf;
}

inline void write_dataset_csv(const Dataset& dataset, std::ostream& out) {
  bool any_citing = false;
  std::set<int> windows;
  for (const auto& r : dataset.records) {
    if (r.has_citing_dates) any_citing = true;
    for (const auto& [n, c] : r.citation_counts) windows.insert(n);
  }

  std::vector<std::string> row = {"id", "treatment", "outcome",
                                  "publication_date"};
  if (any_citing) row.push_back("citing_dates");
  for (int n : windows) row.push_back("cc_" + std::to_string(n));
  for (const auto& e : dataset.schema.entries()) row.push_back(e.name);
  csv::write_row(out, row);

  for (const auto& r : dataset.records) {
    row = {r.id, r.treatment ? "1" : "0", r.outcome ? "1" : "0",
           r.publication_date.to_string()};
    if (any_citing) {
      std::string joined;
      for (std::size_t i = 0; i < r.citing_dates.size(); ++i) {
        if (i) joined.push_back(';');
        joined += r.citing_dates[i].to_string();
      }
      row.push_back(joined);
    }
    for (int n : windows) {
      auto it = r.citation_counts.find(n);
      row.push_back(it == r.citation_counts.end()
                        ? std::string()
                        : std::to_string(it->second));
    }
    for (double v : r.covariates) row.push_back(format_double(v));
    csv::write_row(out, row);
  }
}

}  // namespace ncodid
