#pragma once

// Shared types between the balance diagnostics and the matcher.

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "csv.hpp"
#include "schema.hpp"

namespace ncodid {

// What to match on: L2 distance over standardized numerics, flat penalties
// for near-exact mismatches, optional fine balance category covariate,
// optional caliper that forbids distant pairs outright.
struct MatchSpec {
  std::vector<std::string> distance_covariates;
  std::vector<std::pair<std::string, double>> near_exact;  // name, penalty
  std::optional<std::string> fine_balance;
  std::optional<double> caliper;

  void validate(const CovariateSchema& schema) const {
    for (const auto& name : distance_covariates) {
      const auto& e = schema.at(name);
      if (e.kind == CovariateKind::kCategorical) {
        throw std::invalid_argument("distance covariate '" + name +
                                    "' must be numeric or binary");
      }
    }
    for (const auto& [name, penalty] : near_exact) {
      const auto& e = schema.at(name);
      if (penalty <= 0) {
        throw std::invalid_argument("near-exact penalty for '" + name +
                                    "' must be positive");
      }
      if (e.kind == CovariateKind::kNumeric && !e.integer_valued) {
        throw std::invalid_argument(
            "near-exact covariate '" + name +
            "' must be binary, categorical, or integer-valued");
      }
    }
    if (fine_balance) schema.at(*fine_balance);
  }
};

// Sentinel meaning "resolve at match time as 1000 x max finite distance".
inline constexpr double kNearExactAutoPenalty = -1.0;

// Builds a MatchSpec from the schema's role flags. Near-exact penalties
// default to the auto sentinel unless given.
inline MatchSpec match_spec_from_schema(const CovariateSchema& schema,
                                        double near_exact_penalty =
                                            kNearExactAutoPenalty) {
  MatchSpec spec;
  for (const auto& e : schema.entries()) {
    if (e.roles.match_distance) spec.distance_covariates.push_back(e.name);
    if (e.roles.near_exact) {
      spec.near_exact.emplace_back(e.name, near_exact_penalty);
    }
    if (e.roles.fine_balance) spec.fine_balance = e.name;
  }
  return spec;
}

struct MatchedSample {
  std::vector<std::pair<std::string, std::string>> pairs;  // treated, control
  MatchSpec spec;
  double total_cost = 0.0;
  std::int64_t total_cost_scaled = 0;  // cost in 1e-6 integer units
  int fine_balance_deviation = 0;      // matched-category excess over targets

  std::size_t size() const { return pairs.size(); }
};

inline void to_json(nlohmann::json& j, const MatchSpec& s) {
  nlohmann::json ne = nlohmann::json::array();
  for (const auto& [name, penalty] : s.near_exact) {
    ne.push_back({{"name", name}, {"penalty", penalty}});
  }
  j = {{"distance_covariates", s.distance_covariates}, {"near_exact", ne}};
  if (s.fine_balance) j["fine_balance"] = *s.fine_balance;
  if (s.caliper) j["caliper"] = *s.caliper;
}

inline void from_json(const nlohmann::json& j, MatchSpec& s) {
  s = MatchSpec{};
  j.at("distance_covariates").get_to(s.distance_covariates);
  for (const auto& e : j.at("near_exact")) {
    s.near_exact.emplace_back(e.at("name").get<std::string>(),
                              e.at("penalty").get<double>());
  }
  if (j.contains("fine_balance")) {
    s.fine_balance = j.at("fine_balance").get<std::string>();
  }
  if (j.contains("caliper")) s.caliper = j.at("caliper").get<double>();
}

inline void to_json(nlohmann::json& j, const MatchedSample& m) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [t, c] : m.pairs) {
    pairs.push_back({{"treated", t}, {"control", c}});
  }
  j = {{"pairs", pairs},
       {"spec", m.spec},
       {"total_cost", m.total_cost},
       {"total_cost_scaled", m.total_cost_scaled},
       {"fine_balance_deviation", m.fine_balance_deviation}};
}

inline void from_json(const nlohmann::json& j, MatchedSample& m) {
  m = MatchedSample{};
  for (const auto& p : j.at("pairs")) {
    m.pairs.emplace_back(p.at("treated").get<std::string>(),
                         p.at("control").get<std::string>());
  }
  j.at("spec").get_to(m.spec);
  j.at("total_cost").get_to(m.total_cost);
  j.at("total_cost_scaled").get_to(m.total_cost_scaled);
  j.at("fine_balance_deviation").get_to(m.fine_balance_deviation);
}

inline void write_pairs_csv(const MatchedSample& m, std::ostream& out) {
  csv::write_row(out, {"treated_id", "control_id"});
  for (const auto& [t, c] : m.pairs) csv::write_row(out, {t, c});
}

inline std::vector<std::pair<std::string, std::string>> read_pairs_csv(
    std::istream& in) {
  csv::Table table = csv::read(in);
  if (table.header != std::vector<std::string>{"treated_id", "control_id"}) {
    throw std::runtime_error("pairs CSV must have header treated_id,control_id");
  }
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& row : table.rows) pairs.emplace_back(row[0], row[1]);
  return pairs;
}

}  // namespace ncodid
