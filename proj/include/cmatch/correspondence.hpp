#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cmatch/ot.hpp"
#include "cmatch/tensor.hpp"

namespace cmatch {

// Real-block flows with suppliers tagged by the support annotation.
struct FilteredPlan {
  std::size_t suppliers = 0;
  std::size_t demanders = 0;
  std::vector<std::uint8_t> foreground;  // per supplier
  std::vector<double> foreground_inflow;  // per query node
  std::vector<double> total_inflow;       // per query node
};

class ProbabilityMap {
 public:
  ProbabilityMap(std::size_t height, std::size_t width, std::vector<float> values);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::span<const float> values() const noexcept { return values_; }
  float at(std::size_t r, std::size_t c) const noexcept { return values_[r * width_ + c]; }

  Tensor to_tensor() const;

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<float> values_;
};

// Per query node, the support node sending it the most flow, or -1.
struct BestMatchMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> indices;

  // Indices as float32 [H,W] (exact for any grid the pipeline handles).
  Tensor to_tensor() const;
  // `r,c,match_r,match_c` rows for matched nodes; the support grid width maps
  // a supplier index back to (row, col).
  std::string to_csv(std::size_t support_width) const;
};

FilteredPlan filter_by_support_mask(const TransportPlan& plan, const BinaryMask& mask);

// p_j = foreground inflow / u_j, clamped to [0, 1]; p_j = 0 where u_j = 0.
ProbabilityMap foreground_probability_map(const FilteredPlan& fp, const MarginalWeights& demand,
                                          std::size_t height, std::size_t width);

// Max cosine similarity of each query node to any foreground support node,
// min-max normalised over the map. A constant map becomes all zeros.
ProbabilityMap prior_mask(const FeatureGrid& query, const FeatureGrid& support,
                          const BinaryMask& mask);

BestMatchMap best_match_map(const TransportPlan& plan, std::size_t height, std::size_t width);

BinaryMask threshold_prediction(const ProbabilityMap& p, double tau);

}  // namespace cmatch
