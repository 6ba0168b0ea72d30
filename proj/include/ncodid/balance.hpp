#pragma once

// Covariate standardization and balance diagnostics: standardized mean
// differences and the before/after-matching summary table. Numeric SMDs are
// control-minus-treated over the pooled sd sqrt((var_T + var_C)/2) with
// population variances; categorical covariates report per-level proportions
// plus a single multinomial Mahalanobis SMD.

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dataset.hpp"
#include "match_types.hpp"

namespace ncodid {

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // population convention
};

inline MeanSd mean_sd(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("mean_sd of empty sample");
  double m = 0.0;
  for (double v : values) m += v;
  m /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return {m, std::sqrt(ss / static_cast<double>(values.size()))};
}

// (mean_C - mean_T) / sqrt((var_T + var_C)/2). Zero pooled sd yields 0 for
// equal means and a signed infinity sentinel otherwise.
inline double smd(const std::vector<double>& treated_values,
                  const std::vector<double>& control_values) {
  MeanSd t = mean_sd(treated_values);
  MeanSd c = mean_sd(control_values);
  double pooled = std::sqrt((t.sd * t.sd + c.sd * c.sd) / 2.0);
  double diff = c.mean - t.mean;
  if (pooled == 0.0) {
    if (diff == 0.0) return 0.0;
    return diff > 0 ? std::numeric_limits<double>::infinity()
                    : -std::numeric_limits<double>::infinity();
  }
  return diff / pooled;
}

// Mahalanobis SMD for a categorical covariate: sqrt(T' S^-1 T) over the
// level-proportion differences, one level dropped as reference. Always
// nonnegative; levels empty in both groups are ignored.
inline double smd_multinomial(const std::vector<double>& treated_codes,
                              const std::vector<double>& control_codes,
                              const std::vector<double>& levels) {
  if (treated_codes.empty() || control_codes.empty()) {
    throw std::invalid_argument("smd_multinomial of empty sample");
  }
  auto proportions = [&](const std::vector<double>& codes) {
    std::vector<double> p(levels.size(), 0.0);
    for (double v : codes) {
      for (std::size_t k = 0; k < levels.size(); ++k) {
        if (v == levels[k]) {
          p[k] += 1.0;
          break;
        }
      }
    }
    for (double& x : p) x /= static_cast<double>(codes.size());
    return p;
  };
  std::vector<double> pt = proportions(treated_codes);
  std::vector<double> pc = proportions(control_codes);

  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < levels.size(); ++k) {
    if (pt[k] > 0.0 || pc[k] > 0.0) active.push_back(k);
  }
  if (active.size() <= 1) return 0.0;

  const std::size_t m = active.size() - 1;  // drop the last active level
  Eigen::VectorXd diff(m);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t ki = active[i];
    diff(static_cast<Eigen::Index>(i)) = pc[ki] - pt[ki];
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t kj = active[j];
      double st = (i == j) ? pt[ki] * (1 - pt[ki]) : -pt[ki] * pt[kj];
      double sc = (i == j) ? pc[ki] * (1 - pc[ki]) : -pc[ki] * pc[kj];
      cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (st + sc) / 2.0;
    }
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
  if (ldlt.info() != Eigen::Success) {
    cov.diagonal().array() += 1e-12;
    ldlt.compute(cov);
  }
  double q = diff.dot(ldlt.solve(diff));
  return q > 0 ? std::sqrt(q) : 0.0;
}

// ---------------------------------------------------------------------------
// Standardization (mean 0, sd 1 over the full dataset; one-hot categoricals).

struct Standardization {
  struct Column {
    int cov_index = -1;
    double level = std::numeric_limits<double>::quiet_NaN();  // one-hot level
    double mean = 0.0;
    double sd = 1.0;
    bool constant = false;
    bool one_hot = false;
  };

  std::vector<Column> columns;
  std::vector<std::string> constant_covariates;  // warning flags

  std::size_t width() const { return columns.size(); }

  double transform_value(const Column& col, double raw) const {
    if (col.one_hot) return raw == col.level ? 1.0 : 0.0;
    if (col.constant) return raw;
    return (raw - col.mean) / col.sd;
  }

  void apply(const SubmissionRecord& rec, double* out) const {
    for (std::size_t j = 0; j < columns.size(); ++j) {
      out[j] = transform_value(columns[j], rec.covariates[columns[j].cov_index]);
    }
  }
};

struct StandardizeResult {
  Standardization transform;
  std::vector<double> matrix;  // row-major, records x transform.width()
  std::size_t rows = 0;

  const double* row(std::size_t i) const {
    return matrix.data() + i * transform.width();
  }
};

inline std::vector<double> observed_levels(const Dataset& dataset,
                                           int cov_index) {
  const auto& entry = dataset.schema.at(static_cast<std::size_t>(cov_index));
  if (!entry.categories.empty()) return entry.categories;
  std::vector<double> levels;
  for (const auto& r : dataset.records) {
    double v = r.covariates[cov_index];
    if (std::find(levels.begin(), levels.end(), v) == levels.end()) {
      levels.push_back(v);
    }
  }
  std::sort(levels.begin(), levels.end());
  return levels;
}

inline StandardizeResult standardize(const Dataset& dataset) {
  StandardizeResult out;
  const auto& schema = dataset.schema;

  for (std::size_t i = 0; i < schema.size(); ++i) {
    const CovariateEntry& e = schema.at(i);
    if (e.kind == CovariateKind::kCategorical) {
      for (double level : observed_levels(dataset, static_cast<int>(i))) {
        Standardization::Column col;
        col.cov_index = static_cast<int>(i);
        col.level = level;
        col.one_hot = true;
        out.transform.columns.push_back(col);
      }
      continue;
    }
    std::vector<double> values;
    values.reserve(dataset.records.size());
    for (const auto& r : dataset.records) values.push_back(r.covariates[i]);
    MeanSd stat = mean_sd(values);
    Standardization::Column col;
    col.cov_index = static_cast<int>(i);
    col.mean = stat.mean;
    col.sd = stat.sd;
    if (stat.sd == 0.0) {
      col.constant = true;
      out.transform.constant_covariates.push_back(e.name);
    }
    out.transform.columns.push_back(col);
  }

  out.rows = dataset.records.size();
  out.matrix.resize(out.rows * out.transform.width());
  for (std::size_t r = 0; r < out.rows; ++r) {
    out.transform.apply(dataset.records[r],
                        out.matrix.data() + r * out.transform.width());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Table one.

struct BalanceRow {
  std::string covariate;
  std::string level;  // empty on main rows
  double treated_mean = std::numeric_limits<double>::quiet_NaN();
  double treated_sd = std::numeric_limits<double>::quiet_NaN();
  double control_mean = std::numeric_limits<double>::quiet_NaN();
  double control_sd = std::numeric_limits<double>::quiet_NaN();
  double matched_mean = std::numeric_limits<double>::quiet_NaN();
  double matched_sd = std::numeric_limits<double>::quiet_NaN();
  double smd_before = std::numeric_limits<double>::quiet_NaN();
  double smd_after = std::numeric_limits<double>::quiet_NaN();
};

struct BalanceTable {
  std::vector<BalanceRow> rows;
  std::size_t n_treated = 0;
  std::size_t n_control = 0;
  std::size_t n_matched = 0;
};

// Before/after-matching covariate summary. "Before" compares the treated
// group against every control; "after" compares the two sides of the matched
// pairs. Categorical covariates report per-level proportions and a single
// multinomial SMD row.
inline BalanceTable table_one(const Dataset& dataset,
                              const MatchedSample& matched) {
  BalanceTable table;

  std::vector<const SubmissionRecord*> treated_all, control_all;
  for (const auto& r : dataset.records) {
    (r.treatment ? treated_all : control_all).push_back(&r);
  }
  std::vector<const SubmissionRecord*> pair_treated, pair_control;
  for (const auto& [t, c] : matched.pairs) {
    if (!dataset.has_id(t)) {
      throw std::invalid_argument("matched pair references unknown id '" + t +
                                  "'");
    }
    if (!dataset.has_id(c)) {
      throw std::invalid_argument("matched pair references unknown id '" + c +
                                  "'");
    }
    pair_treated.push_back(&dataset.by_id(t));
    pair_control.push_back(&dataset.by_id(c));
  }
  if (treated_all.empty() || control_all.empty()) {
    throw std::invalid_argument("table_one needs both treated and controls");
  }
  if (pair_treated.empty()) {
    throw std::invalid_argument("table_one needs a nonempty matched sample");
  }

  table.n_treated = treated_all.size();
  table.n_control = control_all.size();
  table.n_matched = pair_control.size();

  auto column = [](const std::vector<const SubmissionRecord*>& group,
                   std::size_t cov) {
    std::vector<double> v;
    v.reserve(group.size());
    for (const auto* r : group) v.push_back(r->covariates[cov]);
    return v;
  };

  for (std::size_t i = 0; i < dataset.schema.size(); ++i) {
    const CovariateEntry& e = dataset.schema.at(i);
    std::vector<double> vt = column(treated_all, i);
    std::vector<double> vc = column(control_all, i);
    std::vector<double> vmt = column(pair_treated, i);
    std::vector<double> vmc = column(pair_control, i);

    bool categorical_like = e.kind != CovariateKind::kNumeric;
    if (!categorical_like) {
      BalanceRow row;
      row.covariate = e.name;
      MeanSd t = mean_sd(vt), c = mean_sd(vc), m = mean_sd(vmc);
      row.treated_mean = t.mean;
      row.treated_sd = t.sd;
      row.control_mean = c.mean;
      row.control_sd = c.sd;
      row.matched_mean = m.mean;
      row.matched_sd = m.sd;
      row.smd_before = smd(vt, vc);
      row.smd_after = smd(vmt, vmc);
      table.rows.push_back(row);
      continue;
    }

    std::vector<double> levels =
        e.kind == CovariateKind::kBinary
            ? std::vector<double>{0.0, 1.0}
            : observed_levels(dataset, static_cast<int>(i));

    BalanceRow summary;
    summary.covariate = e.name;
    summary.smd_before = smd_multinomial(vt, vc, levels);
    summary.smd_after = smd_multinomial(vmt, vmc, levels);
    table.rows.push_back(summary);

    for (double level : levels) {
      auto proportion = [&](const std::vector<double>& v) {
        double n = 0;
        for (double x : v) n += (x == level) ? 1.0 : 0.0;
        return n / static_cast<double>(v.size());
      };
      BalanceRow row;
      row.covariate = e.name;
      row.level = format_double(level);
      row.treated_mean = proportion(vt);
      row.control_mean = proportion(vc);
      row.matched_mean = proportion(vmc);
      table.rows.push_back(row);
    }
  }
  return table;
}

inline void to_json(nlohmann::json& j, const BalanceRow& r) {
  auto put = [](nlohmann::json& obj, const char* key, double v) {
    if (std::isnan(v)) return;
    if (std::isinf(v)) {
      obj[key] = v > 0 ? "inf" : "-inf";
    } else {
      obj[key] = v;
    }
  };
  j = nlohmann::json{{"covariate", r.covariate}};
  if (!r.level.empty()) j["level"] = r.level;
  put(j, "treated_mean", r.treated_mean);
  put(j, "treated_sd", r.treated_sd);
  put(j, "control_mean", r.control_mean);
  put(j, "control_sd", r.control_sd);
  put(j, "matched_mean", r.matched_mean);
  put(j, "matched_sd", r.matched_sd);
  put(j, "smd_before", r.smd_before);
  put(j, "smd_after", r.smd_after);
}

inline void to_json(nlohmann::json& j, const BalanceTable& t) {
  j = {{"rows", t.rows},
       {"n_treated", t.n_treated},
       {"n_control", t.n_control},
       {"n_matched", t.n_matched}};
}

inline void write_balance_csv(const BalanceTable& t, std::ostream& out) {
  csv::write_row(out, {"covariate", "level", "treated_mean", "treated_sd",
                       "control_mean", "control_sd", "matched_mean",
                       "matched_sd", "smd_before", "smd_after"});
  auto fmt = [](double v) {
    if (std::isnan(v)) return std::string();
    return format_double(v);
  };
  for (const auto& r : t.rows) {
    csv::write_row(out, {r.covariate, r.level, fmt(r.treated_mean),
                         fmt(r.treated_sd), fmt(r.control_mean),
                         fmt(r.control_sd), fmt(r.matched_mean),
                         fmt(r.matched_sd), fmt(r.smd_before),
                         fmt(r.smd_after)});
  }
}

// Aligned text rendering of the balance table.
inline std::string balance_table_text(const BalanceTable& t) {
  auto num = [](double v, const char* fmt_spec) {
    if (std::isnan(v)) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof(buf), fmt_spec, v);
    return std::string(buf);
  };
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"covariate", "treated", "control", "matched", "SMD before",
                   "SMD after"});
  for (const auto& r : t.rows) {
    std::string name = r.level.empty() ? r.covariate : "  " + r.level;
    auto cell = [&](double mean, double sd) {
      if (std::isnan(mean)) return std::string();
      if (!r.level.empty()) return num(100.0 * mean, "%.1f%%");
      if (std::isnan(sd)) return num(mean, "%.2f");
      return num(mean, "%.2f") + " (" + num(sd, "%.2f") + ")";
    };
    cells.push_back({name, cell(r.treated_mean, r.treated_sd),
                     cell(r.control_mean, r.control_sd),
                     cell(r.matched_mean, r.matched_sd),
                     num(r.smd_before, "%.3f"), num(r.smd_after, "%.3f")});
  }
  std::vector<std::size_t> width(cells[0].size(), 0);
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      width[i] = std::max(width[i], row[i].size());
    }
  }
  std::string out;
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      out += row[i];
      out.append(width[i] - row[i].size() + 2, ' ');
    }
    out += '\n';
  }
  return out;
}

}  // namespace ncodid
