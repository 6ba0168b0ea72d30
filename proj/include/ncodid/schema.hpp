#pragma once

// Covariate schema: names, kinds, and the roles each covariate plays in
// matching (distance, near-exact, fine balance, stratification-only).
// All covariate values are stored as doubles; categorical covariates are
// small sets of numeric codes compared by equality.

#include <algorithm>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace ncodid {

enum class CovariateKind { kNumeric, kBinary, kCategorical };

inline std::string to_string(CovariateKind k) {
  switch (k) {
    case CovariateKind::kNumeric: return "numeric";
    case CovariateKind::kBinary: return "binary";
    case CovariateKind::kCategorical: return "categorical";
  }
  return "?";
}

inline CovariateKind covariate_kind_from_string(const std::string& s) {
  if (s == "numeric") return CovariateKind::kNumeric;
  if (s == "binary") return CovariateKind::kBinary;
  if (s == "categorical") return CovariateKind::kCategorical;
  throw std::invalid_argument("unknown covariate kind '" + s + "'");
}

struct CovariateRoles {
  bool match_distance = false;
  bool near_exact = false;
  bool fine_balance = false;
  bool stratification_only = false;

  bool any_match_role() const {
    return match_distance || near_exact || fine_balance;
  }
};

struct CovariateEntry {
  std::string name;
  CovariateKind kind = CovariateKind::kNumeric;
  CovariateRoles roles;
  // Allowed codes for categorical covariates; empty = infer from data at load.
  std::vector<double> categories;
  // True for numeric covariates taking integer values (eligible for
  // near-exact matching).
  bool integer_valued = false;
};

class CovariateSchema {
 public:
  CovariateSchema() = default;
  explicit CovariateSchema(std::vector<CovariateEntry> entries)
      : entries_(std::move(entries)) {
    validate();
  }

  const std::vector<CovariateEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

  bool has(const std::string& name) const { return index_of(name) >= 0; }

  const CovariateEntry& at(const std::string& name) const {
    int i = index_of(name);
    if (i < 0) throw std::invalid_argument("no covariate named '" + name + "'");
    return entries_[static_cast<std::size_t>(i)];
  }

  const CovariateEntry& at(std::size_t i) const { return entries_.at(i); }
  CovariateEntry& at_mut(std::size_t i) { return entries_.at(i); }

  std::optional<std::string> fine_balance_covariate() const {
    for (const auto& e : entries_) {
      if (e.roles.fine_balance) return e.name;
    }
    return std::nullopt;
  }

  std::vector<std::string> names_with(bool CovariateRoles::*flag) const {
    std::vector<std::string> out;
    for (const auto& e : entries_) {
      if (e.roles.*flag) out.push_back(e.name);
    }
    return out;
  }

 private:
  void validate() const {
    std::set<std::string> seen;
    int fine_balance_count = 0;
    for (const auto& e : entries_) {
      if (e.name.empty()) throw std::invalid_argument("empty covariate name");
      if (!seen.insert(e.name).second) {
        throw std::invalid_argument("duplicate covariate name '" + e.name +
                                    "'");
      }
      if (e.roles.fine_balance) {
        ++fine_balance_count;
        if (e.kind == CovariateKind::kNumeric && !e.integer_valued) {
          throw std::invalid_argument(
              "fine-balance covariate '" + e.name +
              "' must be categorical, binary, or integer-valued");
        }
      }
      if (e.roles.near_exact && e.kind == CovariateKind::kNumeric &&
          !e.integer_valued) {
        throw std::invalid_argument(
            "near-exact covariate '" + e.name +
            "' must be binary, categorical, or integer-valued numeric");
      }
      if (e.roles.match_distance && e.kind == CovariateKind::kCategorical) {
        throw std::invalid_argument("categorical covariate '" + e.name +
                                    "' cannot carry the match-distance role");
      }
    }
    if (fine_balance_count > 1) {
      throw std::invalid_argument(
          "at most one covariate may carry the fine-balance role");
    }
  }

  std::vector<CovariateEntry> entries_;
};

// The 18-covariate submission schema used throughout: five calendar years,
// manuscript structure counts, text statistics, 20 topic clusters under
// fine balance, author counts and gender indicators, and log-scale
// institution-rank / author-citation summaries. `year` and `n_author` are
// matched near-exactly.
inline CovariateSchema default_submission_schema() {
  auto numeric = [](std::string name, bool dist = true) {
    CovariateEntry e;
    e.name = std::move(name);
    e.kind = CovariateKind::kNumeric;
    e.roles.match_distance = dist;
    return e;
  };
  auto binary = [](std::string name) {
    CovariateEntry e;
    e.name = std::move(name);
    e.kind = CovariateKind::kBinary;
    e.roles.match_distance = true;
    return e;
  };

  std::vector<CovariateEntry> entries;

  CovariateEntry year;
  year.name = "year";
  year.kind = CovariateKind::kCategorical;
  year.roles.near_exact = true;
  year.categories = {2018, 2019, 2020, 2021, 2022};
  entries.push_back(year);

  entries.push_back(numeric("n_fig"));
  entries.push_back(numeric("n_ref"));
  entries.push_back(numeric("n_sec"));
  entries.push_back(numeric("log_text_length"));
  entries.push_back(numeric("text_ppl"));

  CovariateEntry topic;
  topic.name = "topic_cluster";
  topic.kind = CovariateKind::kCategorical;
  topic.roles.fine_balance = true;
  for (int k = 0; k < 20; ++k) topic.categories.push_back(k);
  entries.push_back(topic);

  CovariateEntry n_author = numeric("n_author");
  n_author.integer_valued = true;
  n_author.roles.near_exact = true;
  entries.push_back(n_author);

  CovariateEntry naf = numeric("n_author_female");
  naf.integer_valued = true;
  entries.push_back(naf);

  entries.push_back(binary("first_author_female"));
  entries.push_back(binary("any_author_female"));
  entries.push_back(binary("no_US_author"));

  entries.push_back(numeric("log_inst_rank_min"));
  entries.push_back(numeric("log_inst_rank_avg"));
  entries.push_back(numeric("log_inst_rank_max"));
  entries.push_back(numeric("log_author_cite_min"));
  entries.push_back(numeric("log_author_cite_avg"));
  entries.push_back(numeric("log_author_cite_max"));

  return CovariateSchema(std::move(entries));
}

inline void to_json(nlohmann::json& j, const CovariateEntry& e) {
  std::vector<std::string> roles;
  if (e.roles.match_distance) roles.push_back("match-distance");
  if (e.roles.near_exact) roles.push_back("near-exact");
  if (e.roles.fine_balance) roles.push_back("fine-balance");
  if (e.roles.stratification_only) roles.push_back("stratification-only");
  j = nlohmann::json{{"name", e.name},
                     {"kind", to_string(e.kind)},
                     {"roles", roles}};
  if (!e.categories.empty()) j["categories"] = e.categories;
  if (e.integer_valued) j["integer_valued"] = true;
}

inline void from_json(const nlohmann::json& j, CovariateEntry& e) {
  e = CovariateEntry{};
  e.name = j.at("name").get<std::string>();
  e.kind = covariate_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("roles")) {
    for (const auto& r : j.at("roles")) {
      const std::string role = r.get<std::string>();
      if (role == "match-distance") e.roles.match_distance = true;
      else if (role == "near-exact") e.roles.near_exact = true;
      else if (role == "fine-balance") e.roles.fine_balance = true;
      else if (role == "stratification-only") e.roles.stratification_only = true;
      else throw std::invalid_argument("unknown covariate role '" + role + "'");
    }
  }
  if (j.contains("categories")) {
    e.categories = j.at("categories").get<std::vector<double>>();
  }
  if (j.contains("integer_valued")) {
    e.integer_valued = j.at("integer_valued").get<bool>();
  }
}

inline void to_json(nlohmann::json& j, const CovariateSchema& s) {
  j = nlohmann::json{{"covariates", s.entries()}};
}

inline void from_json(const nlohmann::json& j, CovariateSchema& s) {
  auto entries = j.at("covariates").get<std::vector<CovariateEntry>>();
  s = CovariateSchema(std::move(entries));
}

}  // namespace ncodid
