#include "cmatch/correspondence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cmatch/error.hpp"

namespace cmatch {

ProbabilityMap::ProbabilityMap(std::size_t height, std::size_t width, std::vector<float> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (values_.size() != height * width || values_.empty()) {
    throw Error(ErrorKind::kShapeMismatch, "probability map payload does not match H*W");
  }
  for (float v : values_) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw Error(ErrorKind::kInvalidShape, "probability outside [0,1]");
    }
  }
}

Tensor ProbabilityMap::to_tensor() const { return Tensor::f32({height_, width_}, values_); }

Tensor BestMatchMap::to_tensor() const {
  std::vector<float> values(indices.begin(), indices.end());
  return Tensor::f32({height, width}, std::move(values));
}

std::string BestMatchMap::to_csv(std::size_t support_width) const {
  std::ostringstream os;
  os << "r,c,match_r,match_c\n";
  for (std::size_t n = 0; n < indices.size(); ++n) {
    if (indices[n] < 0) continue;
    const auto idx = static_cast<std::size_t>(indices[n]);
    os << n / width << ',' << n % width << ',' << idx / support_width << ','
       << idx % support_width << '\n';
  }
  return os.str();
}

FilteredPlan filter_by_support_mask(const TransportPlan& plan, const BinaryMask& mask) {
  if (mask.size() != plan.rows) {
    throw Error(ErrorKind::kShapeMismatch,
                "mask has " + std::to_string(mask.size()) + " cells, plan has " +
                    std::to_string(plan.rows) + " suppliers");
  }
  FilteredPlan fp;
  fp.suppliers = plan.rows;
  fp.demanders = plan.cols;
  fp.foreground.assign(mask.values().begin(), mask.values().end());
  fp.foreground_inflow.assign(plan.cols, 0.0);
  fp.total_inflow.assign(plan.cols, 0.0);
  for (std::size_t i = 0; i < plan.rows; ++i) {
    for (std::size_t j = 0; j < plan.cols; ++j) {
      const double x = plan.at(i, j);
      fp.total_inflow[j] += x;
      if (fp.foreground[i]) fp.foreground_inflow[j] += x;
    }
  }
  return fp;
}

ProbabilityMap foreground_probability_map(const FilteredPlan& fp, const MarginalWeights& demand,
                                          std::size_t height, std::size_t width) {
  if (fp.demanders != height * width || demand.demand.size() != fp.demanders) {
    throw Error(ErrorKind::kShapeMismatch, "query grid does not match plan columns");
  }
  std::vector<float> values(fp.demanders, 0.0f);
  for (std::size_t j = 0; j < fp.demanders; ++j) {
    const double u = demand.demand[j];
    if (u > 0.0) {
      values[j] = static_cast<float>(std::clamp(fp.foreground_inflow[j] / u, 0.0, 1.0));
    }
  }
  return ProbabilityMap(height, width, std::move(values));
}

ProbabilityMap prior_mask(const FeatureGrid& query, const FeatureGrid& support,
                          const BinaryMask& mask) {
  if (mask.height() != support.height() || mask.width() != support.width()) {
    throw Error(ErrorKind::kShapeMismatch, "support mask is not at feature resolution");
  }
  if (mask.count() == 0) {
    throw Error(ErrorKind::kEmptySupportForeground, "support mask has no foreground node");
  }
  // cosine similarity = 1 - cost
  const CostMatrix cost = cosine_cost_matrix(support, query);
  std::vector<double> raw(query.nodes(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < support.nodes(); ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < query.nodes(); ++j) {
      raw[j] = std::max(raw[j], 1.0 - static_cast<double>(cost.at(i, j)));
    }
  }
  const auto [lo, hi] = std::ranges::minmax(raw);
  std::vector<float> values(raw.size(), 0.0f);
  if (hi > lo) {
    for (std::size_t j = 0; j < raw.size(); ++j) {
      values[j] = static_cast<float>(std::clamp((raw[j] - lo) / (hi - lo), 0.0, 1.0));
    }
  }
  return ProbabilityMap(query.height(), query.width(), std::move(values));
}

BestMatchMap best_match_map(const TransportPlan& plan, std::size_t height, std::size_t width) {
  if (plan.cols != height * width) {
    throw Error(ErrorKind::kShapeMismatch, "plan columns do not match query grid");
  }
  BestMatchMap out{height, width, std::vector<std::int32_t>(plan.cols, -1)};
  for (std::size_t j = 0; j < plan.cols; ++j) {
    double best = 0.0;
    for (std::size_t i = 0; i < plan.rows; ++i) {
      if (plan.at(i, j) > best) {
        best = plan.at(i, j);
        out.indices[j] = static_cast<std::int32_t>(i);
      }
    }
  }
  return out;
}

BinaryMask threshold_prediction(const ProbabilityMap& p, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw Error(ErrorKind::kInvalidThreshold, "tau must lie in [0,1]");
  }
  std::vector<std::uint8_t> out(p.values().size());
  std::ranges::transform(p.values(), out.begin(), [tau](float v) {
    return static_cast<std::uint8_t>(static_cast<double>(v) >= tau ? 1 : 0);
  });
  return BinaryMask(p.height(), p.width(), std::move(out));
}

}  // namespace cmatch
