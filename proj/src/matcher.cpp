#include "boxagent/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "boxagent/ops.hpp"

namespace boxagent::matcher {

namespace nx = boxagent::numerics;
using nx::Tensor;

CostMatrix::CostMatrix(std::size_t p, std::size_t t, std::vector<double> v)
    : preds(p), targets(t), values(std::move(v)) {
  if (values.size() != p * t) {
    throw nx::ShapeError("CostMatrix: " + std::to_string(values.size()) + " values for " + std::to_string(p) + "x" +
                         std::to_string(t));
  }
  for (double x : values) {
    if (!std::isfinite(x)) throw nx::NumericError("CostMatrix: non-finite entry");
  }
}

std::vector<std::size_t> Assignment::prediction_of_target(std::size_t targets) const {
  std::vector<std::size_t> out(targets, 0);
  for (auto [p, t] : pairs) out.at(t) = p;
  return out;
}

double total_cost(const CostMatrix& cost, const Assignment& a) {
  double s = 0.0;
  for (auto [p, t] : a.pairs) s += cost(p, t);
  return s;
}

namespace {

void check_shape(const CostMatrix& c, const char* who) {
  if (c.values.size() != c.preds * c.targets) throw nx::ShapeError(std::string(who) + ": malformed cost matrix");
  if (c.preds < c.targets) {
    throw std::invalid_argument(std::string(who) + ": " + std::to_string(c.preds) + " predictions for " +
                                std::to_string(c.targets) + " targets; pad predictions first");
  }
}

}  // namespace

Assignment hungarian(const CostMatrix& cost) {
  check_shape(cost, "hungarian");
  const std::size_t rows = cost.targets, cols = cost.preds;
  Assignment out;
  if (rows == 0) return out;
  constexpr double inf = std::numeric_limits<double>::infinity();
  // Shortest augmenting paths with potentials; rows are targets, columns are
  // predictions, index 0 is a sentinel column.
  std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
  std::vector<std::size_t> match(cols + 1, 0), way(cols + 1, 0);
  for (std::size_t i = 1; i <= rows; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(cols + 1, inf);
    std::vector<char> used(cols + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        const double cur = cost(j - 1, i0 - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  out.pairs.resize(rows);
  for (std::size_t j = 1; j <= cols; ++j) {
    if (match[j] != 0) out.pairs[match[j] - 1] = {j - 1, match[j] - 1};
  }
  return out;
}

namespace {

struct Search {
  const CostMatrix& cost;
  std::vector<std::size_t> current;
  std::vector<char> taken;
  std::vector<std::size_t> best;
  double best_total = std::numeric_limits<double>::infinity();

  void run(std::size_t t, double partial) {
    if (t == cost.targets) {
      if (partial < best_total) {
        best_total = partial;
        best = current;
      }
      return;
    }
    for (std::size_t p = 0; p < cost.preds; ++p) {
      if (taken[p]) continue;
      taken[p] = 1;
      current[t] = p;
      run(t + 1, partial + cost(p, t));
      taken[p] = 0;
    }
  }
};

}  // namespace

Assignment brute_force(const CostMatrix& cost) {
  check_shape(cost, "brute_force");
  if (cost.targets > kBruteForceLimit) {
    throw std::invalid_argument("brute_force: " + std::to_string(cost.targets) + " targets exceeds limit " +
                                std::to_string(kBruteForceLimit));
  }
  Search s{cost, std::vector<std::size_t>(cost.targets), std::vector<char>(cost.preds, 0), {}};
  s.run(0, 0.0);
  Assignment out;
  for (std::size_t t = 0; t < cost.targets; ++t) out.pairs.emplace_back(s.best[t], t);
  return out;
}

namespace {

void check_prediction(const decoder::StagePrediction& pred, const Targets& targets) {
  if (pred.boxes.rank() != 2 || pred.boxes.dim(1) != 4 || pred.class_logits.rank() != 2 ||
      pred.class_logits.dim(0) != pred.boxes.dim(0) || pred.class_logits.dim(1) < 2) {
    throw nx::ShapeError("matcher: boxes " + nx::shape_str(pred.boxes.shape()) + ", class logits " +
                         nx::shape_str(pred.class_logits.shape()));
  }
  if (targets.classes.size() != targets.boxes.size()) {
    throw std::invalid_argument("matcher: target boxes and classes differ in length");
  }
  const std::size_t classes = pred.class_logits.dim(1) - 1;
  for (std::size_t c : targets.classes) {
    if (c >= classes) throw std::invalid_argument("matcher: target class " + std::to_string(c) + " out of range");
  }
}

Tensor target_tensor(const Targets& targets, std::span<const std::size_t> order) {
  std::vector<double> v;
  v.reserve(order.size() * 4);
  for (std::size_t t : order) {
    const auto& b = targets.boxes[t];
    v.insert(v.end(), {b.cx, b.cy, b.w, b.h});
  }
  return Tensor::constant({order.size(), 4}, std::move(v));
}

}  // namespace

CostMatrix matching_cost(const decoder::StagePrediction& pred, const Targets& targets, const LossWeights& w) {
  check_prediction(pred, targets);
  const std::size_t n = pred.boxes.dim(0), t_count = targets.size(), width = pred.class_logits.dim(1);
  std::vector<double> values(n * t_count);
  for (std::size_t p = 0; p < n; ++p) {
    const double* row = pred.class_logits.data() + p * width;
    const double mx = *std::max_element(row, row + width);
    double z = 0.0;
    for (std::size_t j = 0; j < width; ++j) z += std::exp(row[j] - mx);
    const geometry::BoxCCWH pb{pred.boxes[4 * p], pred.boxes[4 * p + 1], pred.boxes[4 * p + 2],
                               pred.boxes[4 * p + 3]};
    for (std::size_t t = 0; t < t_count; ++t) {
      const double prob = std::exp(row[targets.classes[t]] - mx) / z;
      const auto& tb = targets.boxes[t];
      values[p * t_count + t] = w.cls * -prob + w.l1 * geometry::box_l1(pb, tb) +
                                w.giou * (1.0 - geometry::giou(geometry::to_corners(pb), geometry::to_corners(tb)));
    }
  }
  return {n, t_count, std::move(values)};
}

LossTerms stage_loss(const decoder::StagePrediction& pred, const Targets& targets, const LossWeights& w,
                     const Assignment* fixed) {
  check_prediction(pred, targets);
  const std::size_t n = pred.boxes.dim(0), t_count = targets.size(), width = pred.class_logits.dim(1);
  if (n < t_count) {
    throw std::invalid_argument("stage_loss: " + std::to_string(n) + " predictions for " + std::to_string(t_count) +
                                " targets");
  }
  const Assignment a = fixed ? *fixed : hungarian(matching_cost(pred, targets, w));
  if (a.pairs.size() != t_count) throw std::invalid_argument("stage_loss: assignment does not cover the targets");

  // Weighted cross-entropy, normalized by the weight total.
  std::vector<std::size_t> label(n, width - 1);
  for (auto [p, t] : a.pairs) label.at(p) = targets.classes.at(t);
  std::vector<double> mask(n * width, 0.0);
  double weight_total = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    const double wp = label[p] == width - 1 ? w.no_object : 1.0;
    mask[p * width + label[p]] = wp;
    weight_total += wp;
  }
  LossTerms out;
  Tensor ce = Tensor::scalar(0.0);
  if (weight_total > 0) {
    ce = nx::scale(nx::sum(nx::mul(nx::log_softmax(pred.class_logits), Tensor::constant({n, width}, std::move(mask)))),
                   -1.0 / weight_total);
  }
  out.cls = ce.item();
  Tensor total = nx::scale(ce, w.cls);
  if (t_count > 0) {
    std::vector<std::size_t> pred_rows, target_rows;
    for (auto [p, t] : a.pairs) {
      pred_rows.push_back(p);
      target_rows.push_back(t);
    }
    const Tensor matched = nx::gather_rows(pred.boxes, pred_rows);
    const Tensor tgt = target_tensor(targets, target_rows);
    const double inv_t = 1.0 / static_cast<double>(t_count);
    const Tensor l1 = nx::scale(nx::sum(geometry::box_l1(matched, tgt)), inv_t);
    const Tensor gi =
        nx::scale(nx::sum(nx::add_scalar(nx::neg(geometry::giou(matched, tgt)), 1.0)), inv_t);
    out.l1 = l1.item();
    out.giou = gi.item();
    total = nx::add(total, nx::add(nx::scale(l1, w.l1), nx::scale(gi, w.giou)));
  }
  out.total = total;
  return out;
}

std::vector<Assignment> match_stages(std::span<const decoder::StagePrediction> stages, const Targets& targets,
                                     const LossWeights& w) {
  std::vector<Assignment> out;
  for (const auto& s : stages) out.push_back(hungarian(matching_cost(s, targets, w)));
  return out;
}

Tensor set_loss(std::span<const decoder::StagePrediction> stages, const Targets& targets, const LossWeights& w,
                const std::vector<Assignment>* fixed) {
  if (stages.empty()) throw std::invalid_argument("set_loss: no stages");
  if (fixed && fixed->size() != stages.size()) {
    throw std::invalid_argument("set_loss: " + std::to_string(fixed->size()) + " fixed assignments for " +
                                std::to_string(stages.size()) + " stages");
  }
  Tensor total;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    Tensor l = stage_loss(stages[s], targets, w, fixed ? &(*fixed)[s] : nullptr).total;
    total = total.defined() ? nx::add(total, l) : l;
  }
  return total;
}

}  // namespace boxagent::matcher
