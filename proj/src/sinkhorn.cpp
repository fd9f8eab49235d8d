#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cmatch/error.hpp"
#include "cmatch/ot.hpp"

namespace cmatch {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Working state for the log-domain iteration over the augmented problem.
// Inactive rows/columns (zero mass) and the forbidden corner never enter a
// log-sum-exp; their kernel entries are exactly zero.
class LogSinkhorn {
 public:
  explicit LogSinkhorn(const BalancedProblem& p)
      : p_(p),
        rows_(p.rows()),
        cols_(p.cols()),
        f_(rows_, 0.0),
        g_(cols_, 0.0),
        scratch_(std::max(rows_, cols_)) {
    for (std::size_t i = 0; i < rows_; ++i) {
      if (p.supply()[i] > 0.0) active_rows_.push_back(i);
    }
    for (std::size_t j = 0; j < cols_; ++j) {
      if (p.demand()[j] > 0.0) active_cols_.push_back(j);
    }
  }

  // Returns the row defect of the state being replaced. The row sums fall out
  // of the same log-sum-exp, so no extra pass over the plan is needed.
  double update_rows(double eps) {
    previous_f_ = f_;
    double worst = 0.0;
    for (std::size_t i : active_rows_) {
      std::size_t n = 0;
      for (std::size_t j : active_cols_) {
        if (!p_.forbidden(i, j)) scratch_[n++] = (g_[j] - p_.cost(i, j)) / eps;
      }
      const double lse = log_sum_exp(n);
      worst = std::max(worst, std::abs(std::exp(f_[i] / eps + lse) - p_.supply()[i]));
      f_[i] = eps * std::log(p_.supply()[i]) - eps * lse;
    }
    return worst;
  }

  void undo_rows() { f_ = previous_f_; }

  void update_cols(double eps) {
    for (std::size_t j : active_cols_) {
      std::size_t n = 0;
      for (std::size_t i : active_rows_) {
        if (!p_.forbidden(i, j)) scratch_[n++] = (f_[i] - p_.cost(i, j)) / eps;
      }
      g_[j] = eps * std::log(p_.demand()[j]) - eps * log_sum_exp(n);
    }
  }

  double defect(double eps) const {
    double worst = 0.0;
    std::vector<double> col(cols_, 0.0);
    for (std::size_t i : active_rows_) {
      double sum = 0.0;
      for (std::size_t j : active_cols_) {
        if (p_.forbidden(i, j)) continue;
        const double x = std::exp((f_[i] + g_[j] - p_.cost(i, j)) / eps);
        sum += x;
        col[j] += x;
      }
      worst = std::max(worst, std::abs(sum - p_.supply()[i]));
    }
    for (std::size_t j : active_cols_) worst = std::max(worst, std::abs(col[j] - p_.demand()[j]));
    return worst;
  }

  TransportPlan plan(double eps) const {
    TransportPlan out;
    out.rows = rows_;
    out.cols = cols_;
    out.flows.assign(rows_ * cols_, 0.0);
    for (std::size_t i : active_rows_) {
      for (std::size_t j : active_cols_) {
        if (!p_.forbidden(i, j)) {
          out.at(i, j) = std::exp((f_[i] + g_[j] - p_.cost(i, j)) / eps);
        }
      }
    }
    return out;
  }

 private:
  double log_sum_exp(std::size_t n) const {
    if (n == 0) throw Error(ErrorKind::kInfeasibleFlow, "node with mass has no admissible edge");
    const double top = *std::max_element(scratch_.begin(), scratch_.begin() + n);
    if (top == kNegInf) return kNegInf;
    double sum = 0.0;
    for (std::size_t t = 0; t < n; ++t) sum += std::exp(scratch_[t] - top);
    return top + std::log(sum);
  }

  const BalancedProblem& p_;
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> f_;
  std::vector<double> g_;
  std::vector<double> previous_f_;
  mutable std::vector<double> scratch_;
  std::vector<std::size_t> active_rows_;
  std::vector<std::size_t> active_cols_;
};

// A run that stops on max_iters is still accepted within this multiple of the
// tolerance; rounding repairs the remaining defect.
constexpr double kAcceptFactor = 100.0;

}  // namespace

void SinkhornConfig::validate() const {
  if (!(epsilon_scale > 0.0) || max_iters < 1 || !(tolerance > 0.0) || anneal_steps < 0) {
    throw Error(ErrorKind::kConfig,
                "sinkhorn needs epsilon_scale > 0, max_iters >= 1, tolerance > 0, "
                "anneal_steps >= 0");
  }
}

TransportPlan sinkhorn_solve(const BalancedProblem& problem, const SinkhornConfig& cfg) {
  cfg.validate();
  const double mean_cost = problem.real_cost().mean();
  const double eps_start = cfg.epsilon_scale * (mean_cost > 0.0 ? mean_cost : 1.0);

  LogSinkhorn solver(problem);
  int total_iters = 0;
  double defect = std::numeric_limits<double>::infinity();
  double eps = eps_start;
  for (int stage = 0; stage <= cfg.anneal_steps; ++stage) {
    eps = std::ldexp(eps_start, -stage);
    // Intermediate stages only warm-start the next one, so they stop at the
    // acceptance ceiling rather than the final tolerance.
    const double stage_tol =
        stage < cfg.anneal_steps ? kAcceptFactor * cfg.tolerance : cfg.tolerance;
    // Columns are exact after update_cols, so the row defect reported by the
    // following row update is the full marginal defect of that state.
    bool columns_exact = false;
    bool converged = false;
    for (int it = 0; it < cfg.max_iters; ++it) {
      const double previous = solver.update_rows(eps);
      if (columns_exact && previous < stage_tol) {
        solver.undo_rows();
        defect = previous;
        converged = true;
        break;
      }
      solver.update_cols(eps);
      columns_exact = true;
      ++total_iters;
    }
    if (!converged) defect = solver.defect(eps);
  }
  if (!(defect <= kAcceptFactor * cfg.tolerance)) throw ConvergenceError(defect, total_iters);

  TransportPlan plan = solver.plan(eps);
  plan.iterations = total_iters;
  plan.solver_defect = defect;
  return round_to_feasible(std::move(plan), problem);
}

TransportPlan round_to_feasible(TransportPlan plan, const BalancedProblem& problem) {
  const std::size_t rows = problem.rows();
  const std::size_t cols = problem.cols();
  if (plan.rows != rows || plan.cols != cols) {
    throw Error(ErrorKind::kShapeMismatch, "plan does not match problem shape");
  }
  auto supply = problem.supply();
  auto demand = problem.demand();
  for (auto& x : plan.flows) x = std::max(x, 0.0);
  plan.at(rows - 1, cols - 1) = 0.0;

  for (std::size_t i = 0; i < rows; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) sum += plan.at(i, j);
    if (sum > supply[i]) {
      const double scale = supply[i] / sum;
      for (std::size_t j = 0; j < cols; ++j) plan.at(i, j) *= scale;
    }
  }
  for (std::size_t j = 0; j < cols; ++j) {
    double sum = 0.0;
    for (std::size_t i = 0; i < rows; ++i) sum += plan.at(i, j);
    if (sum > demand[j]) {
      const double scale = demand[j] / sum;
      for (std::size_t i = 0; i < rows; ++i) plan.at(i, j) *= scale;
    }
  }

  std::vector<double> row_left(rows);
  std::vector<double> col_left(cols);
  for (std::size_t i = 0; i < rows; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) sum += plan.at(i, j);
    row_left[i] = std::max(supply[i] - sum, 0.0);
  }
  for (std::size_t j = 0; j < cols; ++j) {
    double sum = 0.0;
    for (std::size_t i = 0; i < rows; ++i) sum += plan.at(i, j);
    col_left[j] = std::max(demand[j] - sum, 0.0);
  }

  // Cheapest admissible cells first; ties by position.
  std::vector<std::size_t> order;
  order.reserve(rows * cols);
  for (std::size_t c = 0; c < rows * cols; ++c) {
    if (!problem.forbidden(c / cols, c % cols)) order.push_back(c);
  }
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) {
    return problem.cost(a / cols, a % cols) < problem.cost(b / cols, b % cols);
  });
  for (std::size_t c : order) {
    const std::size_t i = c / cols;
    const std::size_t j = c % cols;
    const double push = std::min(row_left[i], col_left[j]);
    if (push > 0.0) {
      plan.at(i, j) += push;
      row_left[i] -= push;
      col_left[j] -= push;
    }
  }

  // The only residual the greedy pass cannot place is dummy row -> dummy
  // column. Route it through real cells: x_ij -= t, x_{m,j} += t, x_{i,k} += t,
  // draining the most expensive real cells first.
  const std::size_t m = problem.real_rows();
  const std::size_t k = problem.real_cols();
  double stuck = std::min(row_left[m], col_left[k]);
  if (stuck > 0.0) {
    std::vector<std::size_t> real;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        if (plan.at(i, j) > 0.0) real.push_back(i * cols + j);
      }
    }
    std::ranges::stable_sort(real, [&](std::size_t a, std::size_t b) {
      return problem.cost(a / cols, a % cols) > problem.cost(b / cols, b % cols);
    });
    for (std::size_t c : real) {
      if (stuck <= 0.0) break;
      const std::size_t i = c / cols;
      const std::size_t j = c % cols;
      const double t = std::min(plan.at(i, j), stuck);
      plan.at(i, j) -= t;
      plan.at(m, j) += t;
      plan.at(i, k) += t;
      stuck -= t;
    }
  }

  plan.cost = transport_cost(plan, problem);
  plan.marginal_violation = marginal_defect(plan, supply, demand);
  return plan;
}

}  // namespace cmatch
