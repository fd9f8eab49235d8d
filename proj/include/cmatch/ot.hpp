#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cmatch/tensor.hpp"

namespace cmatch {

/// Dense m x k cost per unit of flow from supplier i to demander j.
class CostMatrix {
 public:
  CostMatrix(std::size_t rows, std::size_t cols, std::vector<float> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  float at(std::size_t i, std::size_t j) const noexcept { return values_[i * cols_ + j]; }
  std::span<const float> values() const noexcept { return values_; }
  double mean() const noexcept;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<float> values_;
};

// c_ij = 1 - cos(s_i, d_j). Support nodes (row-major) are suppliers, query
// nodes are demanders. Entries are clamped to [0, 2].
CostMatrix cosine_cost_matrix(const FeatureGrid& support, const FeatureGrid& query);

struct MarginalWeights {
  std::vector<double> supply;
  std::vector<double> demand;
  // Total mass M that must flow between real nodes.
  double matched = 0.0;

  double supply_total() const noexcept;
  double demand_total() const noexcept;

  // Unit mass per node.
  static MarginalWeights unit(std::size_t suppliers, std::size_t demanders, double matched);
};

// M = round(lambda * foreground_count), clamped to [1, min(suppliers, demanders)].
double select_matched_mass(std::size_t foreground_count, double lambda, std::size_t suppliers,
                           std::size_t demanders);

// Partial OT reduced to a balanced transportation problem with one dummy
// supplier (index m) and one dummy demander (index k). Dummy edges cost
// nothing; the dummy/dummy corner is excluded from the problem entirely.
class BalancedProblem {
 public:
  const CostMatrix& real_cost() const noexcept { return cost_; }
  std::size_t real_rows() const noexcept { return cost_.rows(); }
  std::size_t real_cols() const noexcept { return cost_.cols(); }
  std::size_t rows() const noexcept { return cost_.rows() + 1; }
  std::size_t cols() const noexcept { return cost_.cols() + 1; }

  std::span<const double> supply() const noexcept { return supply_; }
  std::span<const double> demand() const noexcept { return demand_; }
  double matched() const noexcept { return matched_; }
  // M(gamma) = w_s + w_d - M.
  double balanced_total() const noexcept { return balanced_total_; }

  bool forbidden(std::size_t i, std::size_t j) const noexcept {
    return i == real_rows() && j == real_cols();
  }
  double cost(std::size_t i, std::size_t j) const noexcept {
    return i < real_rows() && j < real_cols() ? cost_.at(i, j) : 0.0;
  }

 private:
  friend BalancedProblem build_partial_problem(const MarginalWeights&, const CostMatrix&);
  BalancedProblem(CostMatrix cost, std::vector<double> supply, std::vector<double> demand,
                  double matched, double balanced_total);

  CostMatrix cost_;
  std::vector<double> supply_;
  std::vector<double> demand_;
  double matched_;
  double balanced_total_;
};

BalancedProblem build_partial_problem(const MarginalWeights& weights, const CostMatrix& cost);

struct TransportPlan {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> flows;
  // Cost of the real block under the problem's cost matrix.
  double cost = 0.0;
  // Max abs row/column defect against the prescribed marginals.
  double marginal_violation = 0.0;
  // Solver diagnostics: iterations spent and the defect before rounding.
  int iterations = 0;
  double solver_defect = 0.0;

  double at(std::size_t i, std::size_t j) const noexcept { return flows[i * cols + j]; }
  double& at(std::size_t i, std::size_t j) noexcept { return flows[i * cols + j]; }
  double total() const noexcept;
};

struct SinkhornConfig {
  // The regulariser starts at epsilon_scale * mean(real-block cost) and is
  // halved anneal_steps times, warm-starting each stage.
  double epsilon_scale = 0.05;
  // Iteration budget per annealing stage.
  int max_iters = 1000;
  // Max row/column marginal defect that ends a stage.
  double tolerance = 1e-6;
  int anneal_steps = 3;

  void validate() const;
};

// Log-domain entropic solve followed by round_to_feasible. Throws
// ConvergenceError when the final defect exceeds 100 * tolerance.
TransportPlan sinkhorn_solve(const BalancedProblem& problem, const SinkhornConfig& cfg = {});

// Scales rows then columns down to their marginals and places the residual
// greedily on the cheapest admissible cells.
TransportPlan round_to_feasible(TransportPlan plan, const BalancedProblem& problem);

// Exact solution by successive shortest augmenting paths. Limited to 16x16
// augmented problems. Ties resolve to the first path in row-major edge order.
TransportPlan exact_solve_oracle(const BalancedProblem& problem);

// Exact balanced OT without any dummy nodes; requires equal totals.
TransportPlan exact_transport(const CostMatrix& cost, std::span<const double> supply,
                              std::span<const double> demand);

TransportPlan strip_dummies(const TransportPlan& plan, std::size_t m, std::size_t k);

double transport_cost(const TransportPlan& plan, const CostMatrix& cost);
// Real-block cost of an augmented plan.
double transport_cost(const TransportPlan& plan, const BalancedProblem& problem);

double marginal_defect(const TransportPlan& plan, std::span<const double> supply,
                       std::span<const double> demand);

}  // namespace cmatch
