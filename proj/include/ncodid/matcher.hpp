#pragma once

// Optimal 1:1 treated-control matching. Distances are L2 over standardized
// numeric covariates plus flat penalties for near-exact mismatches; fine
// balance on one categorical covariate is enforced through category sink
// nodes in a min-cost-flow formulation. The objective is lexicographic:
// minimize the fine-balance deviation first (category slots beyond target
// cost a constant larger than any achievable total distance), then total
// distance. Costs are scaled to integers at 1e-6 resolution so the flow
// arithmetic is exact.
//
// The solver runs successive shortest paths with node potentials and an
// early-exit Dijkstra over the layered residual graph
//   treated -> control -> category -> sink,
// with the treated-control layer kept implicit (a row scan of the distance
// matrix) so dense instances stay cache-friendly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "balance.hpp"
#include "dataset.hpp"
#include "match_types.hpp"

namespace ncodid {

class MatchingError : public std::runtime_error {
 public:
  MatchingError(std::string message, std::vector<std::string> unmatched_ids)
      : std::runtime_error(std::move(message)),
        unmatched_ids_(std::move(unmatched_ids)) {}

  const std::vector<std::string>& unmatched_ids() const {
    return unmatched_ids_;
  }

 private:
  std::vector<std::string> unmatched_ids_;
};

struct DistanceMatrix {
  std::vector<std::string> treated_ids;
  std::vector<std::string> control_ids;
  // Row-major treated x control; +inf marks a forbidden pair.
  std::vector<double> cost;
  // Fine-balance category index per unit (-1 when no fine balance is used).
  std::vector<int> treated_category;
  std::vector<int> control_category;
  std::vector<double> category_codes;  // index -> category code

  std::size_t n_treated() const { return treated_ids.size(); }
  std::size_t n_controls() const { return control_ids.size(); }

  double at(std::size_t t, std::size_t c) const {
    return cost[t * n_controls() + c];
  }
};

inline constexpr double kForbidden = std::numeric_limits<double>::infinity();
inline constexpr double kCostScale = 1e6;

inline std::int64_t scale_cost(double d) {
  return static_cast<std::int64_t>(std::llround(d * kCostScale));
}

// Category counts of the treated side: the fine-balance targets the matched
// control group should mirror.
inline std::map<double, long> fine_balance_targets_from(
    const DistanceMatrix& dist) {
  std::map<double, long> targets;
  if (dist.category_codes.empty()) return targets;
  for (int k : dist.treated_category) {
    targets[dist.category_codes[static_cast<std::size_t>(k)]] += 1;
  }
  return targets;
}

// ---------------------------------------------------------------------------
// Distance construction.

inline DistanceMatrix build_distance(const Dataset& dataset,
                                     const MatchSpec& spec) {
  spec.validate(dataset.schema);
  StandardizeResult std_result = standardize(dataset);
  const Standardization& tr = std_result.transform;

  // Columns of the standardized matrix participating in the L2 part.
  std::vector<std::size_t> l2_cols;
  for (const auto& name : spec.distance_covariates) {
    const int cov = dataset.schema.index_of(name);
    for (std::size_t j = 0; j < tr.columns.size(); ++j) {
      if (tr.columns[j].cov_index == cov) l2_cols.push_back(j);
    }
  }
  std::vector<int> near_exact_idx;
  for (const auto& [name, penalty] : spec.near_exact) {
    (void)penalty;
    near_exact_idx.push_back(dataset.schema.index_of(name));
  }

  DistanceMatrix out;
  std::vector<std::size_t> treated_rows, control_rows;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    if (dataset.records[i].treatment) {
      treated_rows.push_back(i);
      out.treated_ids.push_back(dataset.records[i].id);
    } else {
      control_rows.push_back(i);
      out.control_ids.push_back(dataset.records[i].id);
    }
  }
  if (treated_rows.empty()) {
    throw MatchingError("no treated units to match", {});
  }

  if (spec.fine_balance) {
    const int cov = dataset.schema.index_of(*spec.fine_balance);
    out.category_codes = observed_levels(dataset, cov);
    auto category_of = [&](std::size_t rec) {
      double v = dataset.records[rec].covariates[cov];
      auto it = std::find(out.category_codes.begin(), out.category_codes.end(),
                          v);
      return static_cast<int>(it - out.category_codes.begin());
    };
    for (std::size_t r : treated_rows) out.treated_category.push_back(category_of(r));
    for (std::size_t r : control_rows) out.control_category.push_back(category_of(r));
  } else {
    out.treated_category.assign(treated_rows.size(), -1);
    out.control_category.assign(control_rows.size(), -1);
  }

  const std::size_t nt = treated_rows.size();
  const std::size_t nc = control_rows.size();
  const std::size_t width = tr.width();
  out.cost.resize(nt * nc);

  // First pass: L2 distances, tracking the maximum for the auto penalty.
  double max_l2 = 0.0;
  for (std::size_t t = 0; t < nt; ++t) {
    const double* zt = std_result.row(treated_rows[t]);
    for (std::size_t c = 0; c < nc; ++c) {
      const double* zc = std_result.row(control_rows[c]);
      double ss = 0.0;
      for (std::size_t j : l2_cols) {
        const double d = zt[j] - zc[j];
        ss += d * d;
      }
      const double l2 = std::sqrt(ss);
      out.cost[t * nc + c] = l2;
      max_l2 = std::max(max_l2, l2);
    }
  }
  (void)width;

  std::vector<double> penalties;
  for (const auto& [name, penalty] : spec.near_exact) {
    (void)name;
    penalties.push_back(penalty == kNearExactAutoPenalty
                            ? 1000.0 * std::max(max_l2, 1e-3)
                            : penalty);
  }

  // Second pass: near-exact penalties and the caliper.
  for (std::size_t t = 0; t < nt; ++t) {
    const SubmissionRecord& rt = dataset.records[treated_rows[t]];
    for (std::size_t c = 0; c < nc; ++c) {
      const SubmissionRecord& rc = dataset.records[control_rows[c]];
      double& entry = out.cost[t * nc + c];
      for (std::size_t j = 0; j < near_exact_idx.size(); ++j) {
        if (rt.covariates[near_exact_idx[j]] !=
            rc.covariates[near_exact_idx[j]]) {
          entry += penalties[j];
        }
      }
      if (spec.caliper && entry > *spec.caliper) entry = kForbidden;
    }
  }

  // Feasibility pre-check: a treated unit with every pair forbidden can
  // never be matched.
  std::vector<std::string> stuck;
  for (std::size_t t = 0; t < nt; ++t) {
    bool any = false;
    for (std::size_t c = 0; c < nc && !any; ++c) {
      any = std::isfinite(out.cost[t * nc + c]);
    }
    if (!any) stuck.push_back(out.treated_ids[t]);
  }
  if (!stuck.empty()) {
    throw MatchingError("treated units with all pairs forbidden by the caliper",
                        stuck);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Flow solver.

namespace detail {

struct FlowProblem {
  std::size_t nt = 0;
  std::size_t nc = 0;
  std::size_t nk = 0;
  std::vector<std::int64_t> cost;  // scaled; negative = forbidden
  std::vector<int> control_cat;    // per control
  std::vector<long> target;        // per category
  std::vector<std::vector<int>> members;  // controls per category
  std::int64_t big = 0;
};

inline FlowProblem make_flow_problem(const DistanceMatrix& dist,
                                     const std::map<double, long>& targets) {
  FlowProblem p;
  p.nt = dist.n_treated();
  p.nc = dist.n_controls();

  // Without fine balance every control feeds one pseudo-category whose
  // target is the full treated count, so no deviation is possible.
  bool fine = !dist.category_codes.empty();
  p.nk = fine ? dist.category_codes.size() : 1;
  p.target.assign(p.nk, 0);
  if (fine) {
    long total = 0;
    for (std::size_t k = 0; k < p.nk; ++k) {
      auto it = targets.find(dist.category_codes[k]);
      p.target[k] = it == targets.end() ? 0 : it->second;
      total += p.target[k];
    }
    for (const auto& [code, n] : targets) {
      if (std::find(dist.category_codes.begin(), dist.category_codes.end(),
                    code) == dist.category_codes.end() &&
          n != 0) {
        throw std::invalid_argument(
            "fine-balance target for unknown category code " +
            format_double(code));
      }
    }
    if (total != static_cast<long>(p.nt)) {
      throw std::invalid_argument(
          "fine-balance targets must sum to the treated count");
    }
    p.control_cat = dist.control_category;
  } else {
    p.target[0] = static_cast<long>(p.nt);
    p.control_cat.assign(p.nc, 0);
  }
  p.members.assign(p.nk, {});
  for (std::size_t c = 0; c < p.nc; ++c) {
    p.members[static_cast<std::size_t>(p.control_cat[c])].push_back(
        static_cast<int>(c));
  }

  p.cost.resize(p.nt * p.nc);
  std::int64_t max_cost = 0;
  for (std::size_t i = 0; i < dist.cost.size(); ++i) {
    if (std::isfinite(dist.cost[i])) {
      p.cost[i] = scale_cost(dist.cost[i]);
      max_cost = std::max(max_cost, p.cost[i]);
    } else {
      p.cost[i] = -1;
    }
  }
  p.big = max_cost * static_cast<std::int64_t>(p.nt) + 1;
  return p;
}

// Successive shortest paths with potentials. Returns the control matched to
// each treated unit, or throws naming the units that cannot be matched.
struct FlowSolution {
  std::vector<int> match_of_treated;
  std::vector<long> cat_flow;
};

inline FlowSolution solve_flow(const FlowProblem& p,
                               const std::vector<std::string>& treated_ids) {
  constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;
  const std::size_t nt = p.nt, nc = p.nc, nk = p.nk;
  const std::size_t n_nodes = nt + nc + nk + 1;
  const std::size_t sink = nt + nc + nk;
  auto cnode = [&](std::size_t c) { return nt + c; };
  auto knode = [&](std::size_t k) { return nt + nc + k; };

  std::vector<int> match_t(nt, -1);
  std::vector<int> match_c(nc, -1);
  std::vector<long> cat_flow(nk, 0);
  std::vector<std::int64_t> pot(n_nodes, 0);
  std::vector<std::int64_t> dist(n_nodes);
  std::vector<int> parent(n_nodes);
  std::vector<char> done(n_nodes);

  using Item = std::pair<std::int64_t, std::uint32_t>;  // dist, node
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> heap;

  for (std::size_t round = 0; round < nt; ++round) {
    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(parent.begin(), parent.end(), -1);
    std::fill(done.begin(), done.end(), 0);
    while (!heap.empty()) heap.pop();

    for (std::size_t t = 0; t < nt; ++t) {
      if (match_t[t] < 0) {
        dist[t] = 0;
        heap.emplace(0, static_cast<std::uint32_t>(t));
      }
    }

    std::int64_t dist_sink = kInf;
    while (!heap.empty()) {
      auto [d, uu] = heap.top();
      heap.pop();
      const std::size_t u = uu;
      if (done[u] || d > dist[u]) continue;
      done[u] = 1;
      if (u == sink) {
        dist_sink = d;
        break;
      }

      auto relax = [&](std::size_t v, std::int64_t w) {
        const std::int64_t nd = d + w;
        if (nd < dist[v]) {
          dist[v] = nd;
          parent[v] = static_cast<int>(u);
          heap.emplace(nd, static_cast<std::uint32_t>(v));
        }
      };

      if (u < nt) {
        // treated -> control (forward)
        const std::int64_t* row = p.cost.data() + u * nc;
        const std::int64_t pu = pot[u];
        for (std::size_t c = 0; c < nc; ++c) {
          if (row[c] < 0 || match_t[u] == static_cast<int>(c)) continue;
          relax(cnode(c), row[c] + pu - pot[cnode(c)]);
        }
      } else if (u < nt + nc) {
        const std::size_t c = u - nt;
        if (match_c[c] >= 0) {
          // control -> its treated partner (backward)
          const std::size_t t = static_cast<std::size_t>(match_c[c]);
          relax(t, -p.cost[t * nc + c] + pot[u] - pot[t]);
        } else {
          // control -> its category (forward)
          const std::size_t k = static_cast<std::size_t>(p.control_cat[c]);
          relax(knode(k), pot[u] - pot[knode(k)]);
        }
      } else {
        const std::size_t k = u - nt - nc;
        // category -> sink: free slot if under target, else deviation slot
        const std::int64_t slot = cat_flow[k] < p.target[k] ? 0 : p.big;
        relax(sink, slot + pot[u] - pot[sink]);
        // category -> matched member control (backward)
        for (int c : p.members[k]) {
          if (match_c[static_cast<std::size_t>(c)] >= 0) {
            relax(cnode(static_cast<std::size_t>(c)),
                  pot[u] - pot[cnode(static_cast<std::size_t>(c))]);
          }
        }
      }
    }

    if (dist_sink >= kInf) {
      std::vector<std::string> unmatched;
      for (std::size_t t = 0; t < nt; ++t) {
        if (match_t[t] < 0) unmatched.push_back(treated_ids[t]);
      }
      throw MatchingError(
          "matching infeasible: " + std::to_string(unmatched.size()) +
              " treated unit(s) cannot be matched to distinct controls",
          unmatched);
    }

    for (std::size_t v = 0; v < n_nodes; ++v) {
      pot[v] += std::min(dist[v], dist_sink);
    }

    // Walk the augmenting path sink <- ... <- seed, collecting match edits.
    std::vector<std::pair<int, int>> removed, added;  // (treated, control)
    std::size_t v = static_cast<std::size_t>(parent[sink]);  // a category
    while (true) {
      const std::size_t c_add = static_cast<std::size_t>(parent[v]) - nt;
      const std::size_t t_add = static_cast<std::size_t>(
          parent[cnode(c_add)]);
      added.emplace_back(static_cast<int>(t_add), static_cast<int>(c_add));
      if (dist[t_add] == 0 && match_t[t_add] < 0) break;
      // t_add was reached backward from the control it currently holds.
      const std::size_t c_rm =
          static_cast<std::size_t>(parent[t_add]) - nt;
      removed.emplace_back(static_cast<int>(t_add), static_cast<int>(c_rm));
      const std::size_t prev = static_cast<std::size_t>(parent[cnode(c_rm)]);
      if (prev < nt) {
        // c_rm was stolen by a new treated partner: continue from there.
        v = cnode(c_rm);
        // parent chain: ... -> t_prev -> c_rm -> t_add; next hop is c_rm's
        // own parent, a treated node.
        const std::size_t t_prev = prev;
        added.emplace_back(static_cast<int>(t_prev), static_cast<int>(c_rm));
        if (dist[t_prev] == 0 && match_t[t_prev] < 0) break;
        const std::size_t c_rm2 =
            static_cast<std::size_t>(parent[t_prev]) - nt;
        removed.emplace_back(static_cast<int>(t_prev),
                             static_cast<int>(c_rm2));
        v = cnode(c_rm2);
        continue;
      }
      // c_rm was bumped out of its category by a category node.
      v = prev;  // the category node; its parent is the control feeding it
    }

    for (auto [t, c] : removed) {
      (void)t;
      match_c[static_cast<std::size_t>(c)] = -1;
      cat_flow[static_cast<std::size_t>(p.control_cat[c])] -= 1;
    }
    for (auto [t, c] : added) {
      match_t[static_cast<std::size_t>(t)] = c;
      match_c[static_cast<std::size_t>(c)] = t;
      cat_flow[static_cast<std::size_t>(p.control_cat[c])] += 1;
    }
  }

  return FlowSolution{std::move(match_t), std::move(cat_flow)};
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline long deviation_from_targets(const std::vector<long>& cat_flow,
                                   const std::vector<long>& targets) {
  long dev = 0;
  for (std::size_t k = 0; k < cat_flow.size(); ++k) {
    dev += std::max(0L, cat_flow[k] - targets[k]);
  }
  return dev;
}

inline MatchedSample solve_matching(const DistanceMatrix& dist,
                                    const std::map<double, long>& targets,
                                    const MatchSpec& spec) {
  if (dist.n_controls() < dist.n_treated()) {
    throw MatchingError("matching infeasible: " +
                            std::to_string(dist.n_treated()) +
                            " treated units but only " +
                            std::to_string(dist.n_controls()) + " controls",
                        dist.treated_ids);
  }
  detail::FlowProblem p = detail::make_flow_problem(dist, targets);
  detail::FlowSolution sol = detail::solve_flow(p, dist.treated_ids);

  MatchedSample out;
  out.spec = spec;
  for (std::size_t t = 0; t < p.nt; ++t) {
    const std::size_t c = static_cast<std::size_t>(sol.match_of_treated[t]);
    out.pairs.emplace_back(dist.treated_ids[t], dist.control_ids[c]);
    out.total_cost_scaled += p.cost[t * p.nc + c];
  }
  out.total_cost =
      static_cast<double>(out.total_cost_scaled) / kCostScale;
  out.fine_balance_deviation = static_cast<int>(
      deviation_from_targets(sol.cat_flow, p.target));
  return out;
}

inline MatchedSample solve_matching(const DistanceMatrix& dist,
                                    const MatchSpec& spec) {
  return solve_matching(dist, fine_balance_targets_from(dist), spec);
}

// One-call convenience: distances from the dataset, targets from the treated
// side, then the flow solve.
inline MatchedSample match_dataset(const Dataset& dataset,
                                   const MatchSpec& spec) {
  DistanceMatrix dist = build_distance(dataset, spec);
  return solve_matching(dist, fine_balance_targets_from(dist), spec);
}

// ---------------------------------------------------------------------------
// Exhaustive oracle for small instances (tests only): depth-first search over
// injective assignments under the same lexicographic objective, pruned by the
// monotone (deviation, cost) partial order. Ties resolve to the assignment
// found first, i.e. lowest control indices.

inline MatchedSample brute_force_matching(const DistanceMatrix& dist,
                                          const std::map<double, long>& targets,
                                          const MatchSpec& spec = {}) {
  const std::size_t nt = dist.n_treated();
  const std::size_t nc = dist.n_controls();
  if (nt > 8) {
    throw std::invalid_argument(
        "brute_force_matching handles at most 8 treated units");
  }
  detail::FlowProblem p = detail::make_flow_problem(dist, targets);

  std::vector<int> current(nt, -1), best;
  std::vector<char> used(nc, 0);
  std::vector<long> cat_flow(p.nk, 0);
  long best_dev = std::numeric_limits<long>::max();
  std::int64_t best_cost = 0;

  auto dfs = [&](auto&& self, std::size_t t, long dev,
                 std::int64_t cost) -> void {
    if (dev > best_dev || (dev == best_dev && !best.empty() &&
                           cost >= best_cost)) {
      return;  // lexicographic bound; deviation and cost only grow
    }
    if (t == nt) {
      best = current;
      best_dev = dev;
      best_cost = cost;
      return;
    }
    for (std::size_t c = 0; c < nc; ++c) {
      if (used[c] || p.cost[t * nc + c] < 0) continue;
      const std::size_t k = static_cast<std::size_t>(p.control_cat[c]);
      const long extra = cat_flow[k] >= p.target[k] ? 1 : 0;
      used[c] = 1;
      cat_flow[k] += 1;
      current[t] = static_cast<int>(c);
      self(self, t + 1, dev + extra, cost + p.cost[t * nc + c]);
      used[c] = 0;
      cat_flow[k] -= 1;
      current[t] = -1;
    }
  };
  dfs(dfs, 0, 0, 0);

  if (best.empty()) {
    throw MatchingError("matching infeasible (exhaustive search)",
                        dist.treated_ids);
  }

  MatchedSample out;
  out.spec = spec;
  out.fine_balance_deviation = static_cast<int>(best_dev);
  out.total_cost_scaled = best_cost;
  out.total_cost = static_cast<double>(best_cost) / kCostScale;
  for (std::size_t t = 0; t < nt; ++t) {
    out.pairs.emplace_back(dist.treated_ids[t],
                           dist.control_ids[static_cast<std::size_t>(best[t])]);
  }
  return out;
}

inline MatchedSample brute_force_matching(const DistanceMatrix& dist) {
  return brute_force_matching(dist, fine_balance_targets_from(dist));
}

// ---------------------------------------------------------------------------
// Post-match balance verification.

struct BalanceReport {
  BalanceTable table;
  std::vector<std::string> flagged;  // covariates with |smd_after| > threshold
  double smd_threshold = 0.0;
  long fine_balance_deviation = 0;

  bool clean() const { return flagged.empty(); }
};

inline BalanceReport verify_balance(const Dataset& dataset,
                                    const MatchedSample& matched,
                                    double smd_threshold) {
  BalanceReport report;
  report.smd_threshold = smd_threshold;
  report.table = table_one(dataset, matched);
  for (const auto& row : report.table.rows) {
    if (!row.level.empty()) continue;
    if (std::abs(row.smd_after) > smd_threshold) {
      report.flagged.push_back(row.covariate);
    }
  }
  if (matched.spec.fine_balance) {
    const int cov = dataset.schema.index_of(*matched.spec.fine_balance);
    std::map<double, long> treated_counts, control_counts;
    for (const auto& [t, c] : matched.pairs) {
      treated_counts[dataset.by_id(t).covariates[cov]] += 1;
      control_counts[dataset.by_id(c).covariates[cov]] += 1;
    }
    for (const auto& [code, n] : control_counts) {
      long target = 0;
      auto it = treated_counts.find(code);
      if (it != treated_counts.end()) target = it->second;
      report.fine_balance_deviation += std::max(0L, n - target);
    }
  }
  return report;
}

}  // namespace ncodid
