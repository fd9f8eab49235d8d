#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "cmatch/error.hpp"
#include "cmatch/ot.hpp"

namespace cmatch {

namespace {

constexpr std::size_t kOracleCap = 16;

// Min-cost flow on source -> rows -> cols -> sink by successive shortest
// paths (Bellman-Ford, so residual edges may carry negative cost).
class MinCostFlow {
 public:
  explicit MinCostFlow(std::size_t nodes) : adjacency_(nodes) {}

  void add_edge(std::size_t from, std::size_t to, double capacity, double cost) {
    adjacency_[from].push_back(edges_.size());
    edges_.push_back({to, capacity, cost});
    adjacency_[to].push_back(edges_.size());
    edges_.push_back({from, 0.0, -cost});
  }

  // Pushes up to `amount` from source to sink; returns the amount sent.
  double run(std::size_t source, std::size_t sink, double amount, double slack) {
    const std::size_t n = adjacency_.size();
    double sent = 0.0;
    while (amount - sent > slack) {
      std::vector<double> dist(n, std::numeric_limits<double>::infinity());
      std::vector<std::size_t> via(n, SIZE_MAX);
      dist[source] = 0.0;
      for (std::size_t round = 0; round + 1 < n; ++round) {
        bool changed = false;
        for (std::size_t u = 0; u < n; ++u) {
          if (!std::isfinite(dist[u])) continue;
          for (std::size_t e : adjacency_[u]) {
            const Edge& edge = edges_[e];
            if (edge.capacity <= slack) continue;
            const double cand = dist[u] + edge.cost;
            if (cand < dist[edge.to] - 1e-15) {
              dist[edge.to] = cand;
              via[edge.to] = e;
              changed = true;
            }
          }
        }
        if (!changed) break;
      }
      if (!std::isfinite(dist[sink])) break;

      double push = amount - sent;
      for (std::size_t v = sink; v != source; v = edges_[via[v] ^ 1].to) {
        push = std::min(push, edges_[via[v]].capacity);
      }
      for (std::size_t v = sink; v != source; v = edges_[via[v] ^ 1].to) {
        edges_[via[v]].capacity -= push;
        edges_[via[v] ^ 1].capacity += push;
      }
      sent += push;
    }
    return sent;
  }

  // Flow currently carried by forward edge `e` (even index).
  double flow(std::size_t e) const { return edges_[e ^ 1].capacity; }
  std::size_t edge_count() const { return edges_.size(); }

 private:
  struct Edge {
    std::size_t to;
    double capacity;
    double cost;
  };
  std::vector<std::vector<std::size_t>> adjacency_;
  std::vector<Edge> edges_;
};

TransportPlan solve_exact(std::size_t rows, std::size_t cols,
                          const std::function<double(std::size_t, std::size_t)>& cost,
                          const std::function<bool(std::size_t, std::size_t)>& forbidden,
                          std::span<const double> supply, std::span<const double> demand) {
  const double total = std::accumulate(supply.begin(), supply.end(), 0.0);
  const double total_demand = std::accumulate(demand.begin(), demand.end(), 0.0);
  const double slack = 1e-12 * std::max(1.0, total);
  if (std::abs(total - total_demand) > slack) {
    throw Error(ErrorKind::kInfeasibleFlow, "supply and demand totals differ");
  }

  const std::size_t source = rows + cols;
  const std::size_t sink = source + 1;
  MinCostFlow graph(rows + cols + 2);
  for (std::size_t i = 0; i < rows; ++i) graph.add_edge(source, i, supply[i], 0.0);
  std::vector<std::size_t> cell_edge(rows * cols, SIZE_MAX);
  const double unbounded = total + 1.0;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (forbidden(i, j)) continue;
      cell_edge[i * cols + j] = graph.edge_count();
      graph.add_edge(i, rows + j, unbounded, cost(i, j));
    }
  }
  for (std::size_t j = 0; j < cols; ++j) graph.add_edge(rows + j, sink, demand[j], 0.0);

  const double sent = graph.run(source, sink, total, slack);
  if (total - sent > 1e-9 * std::max(1.0, total)) {
    throw Error(ErrorKind::kInfeasibleFlow, "no feasible transport plan");
  }

  TransportPlan plan;
  plan.rows = rows;
  plan.cols = cols;
  plan.flows.assign(rows * cols, 0.0);
  for (std::size_t c = 0; c < rows * cols; ++c) {
    if (cell_edge[c] != SIZE_MAX) plan.flows[c] = graph.flow(cell_edge[c]);
  }
  plan.marginal_violation = marginal_defect(plan, supply, demand);
  return plan;
}

}  // namespace

TransportPlan exact_solve_oracle(const BalancedProblem& problem) {
  if (problem.rows() > kOracleCap || problem.cols() > kOracleCap) {
    std::ostringstream os;
    os << "augmented problem " << problem.rows() << "x" << problem.cols()
       << " exceeds oracle cap " << kOracleCap;
    throw Error(ErrorKind::kOracleTooLarge, os.str());
  }
  auto plan = solve_exact(
      problem.rows(), problem.cols(),
      [&](std::size_t i, std::size_t j) { return problem.cost(i, j); },
      [&](std::size_t i, std::size_t j) { return problem.forbidden(i, j); }, problem.supply(),
      problem.demand());
  plan.cost = transport_cost(plan, problem);
  return plan;
}

TransportPlan exact_transport(const CostMatrix& cost, std::span<const double> supply,
                              std::span<const double> demand) {
  if (supply.size() != cost.rows() || demand.size() != cost.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "marginals do not match cost matrix");
  }
  if (cost.rows() > kOracleCap || cost.cols() > kOracleCap) {
    throw Error(ErrorKind::kOracleTooLarge, "problem exceeds oracle cap");
  }
  auto plan = solve_exact(
      cost.rows(), cost.cols(), [&](std::size_t i, std::size_t j) { return double{cost.at(i, j)}; },
      [](std::size_t, std::size_t) { return false; }, supply, demand);
  plan.cost = transport_cost(plan, cost);
  return plan;
}

}  // namespace cmatch
