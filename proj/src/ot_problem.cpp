#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cmatch/error.hpp"
#include "cmatch/ot.hpp"

namespace cmatch {

CostMatrix::CostMatrix(std::size_t rows, std::size_t cols, std::vector<float> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (rows == 0 || cols == 0) throw Error(ErrorKind::kInvalidShape, "empty cost matrix");
  if (values_.size() != rows * cols) {
    throw Error(ErrorKind::kShapeMismatch, "cost payload does not match rows*cols");
  }
  for (float v : values_) {
    if (!std::isfinite(v) || v < 0.0f) {
      throw Error(ErrorKind::kInvalidShape, "costs must be finite and nonnegative");
    }
  }
}

double CostMatrix::mean() const noexcept {
  double sum = 0.0;
  for (float v : values_) sum += v;
  return sum / static_cast<double>(values_.size());
}

CostMatrix cosine_cost_matrix(const FeatureGrid& support, const FeatureGrid& query) {
  if (support.channels() != query.channels()) {
    throw Error(ErrorKind::kShapeMismatch,
                "support has " + std::to_string(support.channels()) + " channels, query has " +
                    std::to_string(query.channels()));
  }
  auto norms = [](const FeatureGrid& g, const char* which) {
    std::vector<double> out(g.nodes());
    for (std::size_t n = 0; n < g.nodes(); ++n) {
      double sq = 0.0;
      for (float v : g.node(n)) sq += static_cast<double>(v) * v;
      if (!(sq > 0.0)) {
        throw Error(ErrorKind::kDegenerateFeature,
                    std::string(which) + " node " + std::to_string(n) + " has zero norm");
      }
      out[n] = std::sqrt(sq);
    }
    return out;
  };
  const auto s_norm = norms(support, "support");
  const auto q_norm = norms(query, "query");

  const std::size_t m = support.nodes();
  const std::size_t k = query.nodes();
  std::vector<float> values(m * k);
  for (std::size_t i = 0; i < m; ++i) {
    auto s = support.node(i);
    for (std::size_t j = 0; j < k; ++j) {
      auto d = query.node(j);
      double dot = 0.0;
      for (std::size_t c = 0; c < s.size(); ++c) dot += static_cast<double>(s[c]) * d[c];
      const double cost = 1.0 - dot / (s_norm[i] * q_norm[j]);
      values[i * k + j] = static_cast<float>(std::clamp(cost, 0.0, 2.0));
    }
  }
  return CostMatrix(m, k, std::move(values));
}

double MarginalWeights::supply_total() const noexcept {
  return std::accumulate(supply.begin(), supply.end(), 0.0);
}

double MarginalWeights::demand_total() const noexcept {
  return std::accumulate(demand.begin(), demand.end(), 0.0);
}

MarginalWeights MarginalWeights::unit(std::size_t suppliers, std::size_t demanders,
                                      double matched) {
  return MarginalWeights{std::vector<double>(suppliers, 1.0),
                         std::vector<double>(demanders, 1.0), matched};
}

double select_matched_mass(std::size_t foreground_count, double lambda, std::size_t suppliers,
                           std::size_t demanders) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorKind::kConfig, "lambda must be positive");
  }
  const double upper = static_cast<double>(std::min(suppliers, demanders));
  const double m = std::round(lambda * static_cast<double>(foreground_count));
  return std::clamp(m, 1.0, upper);
}

BalancedProblem::BalancedProblem(CostMatrix cost, std::vector<double> supply,
                                 std::vector<double> demand, double matched,
                                 double balanced_total)
    : cost_(std::move(cost)),
      supply_(std::move(supply)),
      demand_(std::move(demand)),
      matched_(matched),
      balanced_total_(balanced_total) {}

BalancedProblem build_partial_problem(const MarginalWeights& weights, const CostMatrix& cost) {
  if (weights.supply.size() != cost.rows() || weights.demand.size() != cost.cols()) {
    std::ostringstream os;
    os << "weights " << weights.supply.size() << "x" << weights.demand.size()
       << " vs cost " << cost.rows() << "x" << cost.cols();
    throw Error(ErrorKind::kShapeMismatch, os.str());
  }
  auto check_mass = [](double v) {
    if (!std::isfinite(v) || v < 0.0) {
      throw Error(ErrorKind::kInfeasibleFlow, "masses must be finite and nonnegative");
    }
  };
  std::ranges::for_each(weights.supply, check_mass);
  std::ranges::for_each(weights.demand, check_mass);

  const double ws = weights.supply_total();
  const double wd = weights.demand_total();
  const double matched = weights.matched;
  const double cap = std::min(ws, wd);
  if (!(matched > 0.0) || matched > cap * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "matched mass " << matched << " outside (0, " << cap << "]";
    throw Error(ErrorKind::kInfeasibleFlow, os.str());
  }
  const double m_clamped = std::min(matched, cap);

  std::vector<double> supply(weights.supply);
  supply.push_back(wd - m_clamped);
  std::vector<double> demand(weights.demand);
  demand.push_back(ws - m_clamped);
  return BalancedProblem(cost, std::move(supply), std::move(demand), m_clamped,
                         wd + ws - m_clamped);
}

double TransportPlan::total() const noexcept {
  return std::accumulate(flows.begin(), flows.end(), 0.0);
}

TransportPlan strip_dummies(const TransportPlan& plan, std::size_t m, std::size_t k) {
  if (plan.rows != m + 1 || plan.cols != k + 1) {
    std::ostringstream os;
    os << "plan is " << plan.rows << "x" << plan.cols << ", expected " << m + 1 << "x"
       << k + 1;
    throw Error(ErrorKind::kShapeMismatch, os.str());
  }
  TransportPlan out;
  out.rows = m;
  out.cols = k;
  out.flows.resize(m * k);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(plan.flows.begin() + static_cast<std::ptrdiff_t>(i * plan.cols), k,
                out.flows.begin() + static_cast<std::ptrdiff_t>(i * k));
  }
  out.cost = plan.cost;
  out.marginal_violation = plan.marginal_violation;
  out.iterations = plan.iterations;
  out.solver_defect = plan.solver_defect;
  return out;
}

double transport_cost(const TransportPlan& plan, const CostMatrix& cost) {
  if (plan.rows != cost.rows() || plan.cols != cost.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "plan and cost shapes differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < plan.rows; ++i) {
    for (std::size_t j = 0; j < plan.cols; ++j) total += cost.at(i, j) * plan.at(i, j);
  }
  return total;
}

double transport_cost(const TransportPlan& plan, const BalancedProblem& problem) {
  if (plan.rows != problem.rows() || plan.cols != problem.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "plan and problem shapes differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < problem.real_rows(); ++i) {
    for (std::size_t j = 0; j < problem.real_cols(); ++j) {
      total += problem.cost(i, j) * plan.at(i, j);
    }
  }
  return total;
}

double marginal_defect(const TransportPlan& plan, std::span<const double> supply,
                       std::span<const double> demand) {
  if (plan.rows != supply.size() || plan.cols != demand.size()) {
    throw Error(ErrorKind::kShapeMismatch, "plan and marginal sizes differ");
  }
  double worst = 0.0;
  std::vector<double> col(plan.cols, 0.0);
  for (std::size_t i = 0; i < plan.rows; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < plan.cols; ++j) {
      row += plan.at(i, j);
      col[j] += plan.at(i, j);
    }
    worst = std::max(worst, std::abs(row - supply[i]));
  }
  for (std::size_t j = 0; j < plan.cols; ++j) worst = std::max(worst, std::abs(col[j] - demand[j]));
  return worst;
}

}  // namespace cmatch
