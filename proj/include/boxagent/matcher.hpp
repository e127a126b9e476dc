#pragma once

// One-to-one matching of predictions to ground truth and the set loss built
// on it: softmax cross-entropy with a no-object class, L1 and GIoU terms.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "boxagent/decoder.hpp"
#include "boxagent/geometry.hpp"
#include "boxagent/tensor.hpp"

namespace boxagent::matcher {

// P x T, row-major by prediction.
struct CostMatrix {
  std::size_t preds = 0;
  std::size_t targets = 0;
  std::vector<double> values;

  CostMatrix() = default;
  CostMatrix(std::size_t p, std::size_t t, std::vector<double> v);
  double operator()(std::size_t p, std::size_t t) const { return values[p * targets + t]; }
};

struct Assignment {
  // (prediction, target), ordered by target.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;

  // Prediction matched to each target.
  std::vector<std::size_t> prediction_of_target(std::size_t targets) const;
};

// Sum of matched costs, accumulated in target order.
double total_cost(const CostMatrix& cost, const Assignment& a);

// Minimum-cost assignment of every target (requires P >= T). Among equal-cost
// alternatives the search prefers lower prediction indices.
Assignment hungarian(const CostMatrix& cost);

constexpr std::size_t kBruteForceLimit = 8;
// Exhaustive search over injections of targets into predictions; the first
// minimum in lexicographic order of (prediction of target 0, target 1, ...)
// wins. Requires P >= T and T <= kBruteForceLimit.
Assignment brute_force(const CostMatrix& cost);

struct Targets {
  std::vector<geometry::BoxCCWH> boxes;
  std::vector<std::size_t> classes;  // in [0, C)

  std::size_t size() const { return boxes.size(); }
};

struct LossWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
  // Cross-entropy weight of predictions whose label is no-object.
  double no_object = 0.1;
};

// cls * (-p(class)) + l1 * |b - t|_1 + giou * (1 - GIoU).
CostMatrix matching_cost(const decoder::StagePrediction& pred, const Targets& targets, const LossWeights& w);

struct LossTerms {
  numerics::Tensor total;
  double cls = 0.0;
  double l1 = 0.0;   // mean over targets
  double giou = 0.0; // mean of 1 - GIoU over targets
};

// Loss of one stage. Matches with hungarian unless `fixed` is given.
LossTerms stage_loss(const decoder::StagePrediction& pred, const Targets& targets, const LossWeights& w,
                     const Assignment* fixed = nullptr);

// Sum of stage losses, each stage matched independently. `fixed`, if given,
// holds one assignment per stage.
numerics::Tensor set_loss(std::span<const decoder::StagePrediction> stages, const Targets& targets,
                          const LossWeights& w, const std::vector<Assignment>* fixed = nullptr);

// Assignments that set_loss would use, one per stage.
std::vector<Assignment> match_stages(std::span<const decoder::StagePrediction> stages, const Targets& targets,
                                     const LossWeights& w);

}  // namespace boxagent::matcher
