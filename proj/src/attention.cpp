#include "boxagent/attention.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "boxagent/ops.hpp"

namespace boxagent::attention {

namespace nx = boxagent::numerics;
using nx::Tensor;

namespace {

void check_embed_args(std::size_t dim, double temperature) {
  if (dim == 0 || dim % 4 != 0) {
    throw nx::ShapeError("sinusoidal_embed: dimension " + std::to_string(dim) + " is not a positive multiple of 4");
  }
  if (!(temperature > 0)) throw std::invalid_argument("sinusoidal_embed: temperature must be > 0");
}

// 2*pi / w_i for each of the D/4 frequencies.
std::vector<double> angular_rates(std::size_t dim, double temperature) {
  const std::size_t pairs = dim / 4;
  const double half = static_cast<double>(dim / 2);
  std::vector<double> rates(pairs);
  for (std::size_t i = 0; i < pairs; ++i) {
    rates[i] = 2.0 * std::numbers::pi / std::pow(temperature, 2.0 * static_cast<double>(i) / half);
  }
  return rates;
}

void embed_into(double x, double y, const std::vector<double>& rates, double* out) {
  const std::size_t pairs = rates.size();
  for (std::size_t i = 0; i < pairs; ++i) {
    out[2 * i] = std::sin(x * rates[i]);
    out[2 * i + 1] = std::cos(x * rates[i]);
    out[2 * pairs + 2 * i] = std::sin(y * rates[i]);
    out[2 * pairs + 2 * i + 1] = std::cos(y * rates[i]);
  }
}

}  // namespace

std::vector<double> sinusoidal_embed(double x, double y, std::size_t dim, double temperature) {
  check_embed_args(dim, temperature);
  std::vector<double> out(dim);
  embed_into(x, y, angular_rates(dim, temperature), out.data());
  return out;
}

Tensor sinusoidal_embed(const Tensor& points, std::size_t dim, double temperature) {
  check_embed_args(dim, temperature);
  if (points.rank() != 2 || points.dim(1) != 2) {
    throw nx::ShapeError("sinusoidal_embed: expected points [R,2], got " + nx::shape_str(points.shape()));
  }
  const std::size_t rows = points.dim(0);
  auto rates = angular_rates(dim, temperature);
  std::vector<double> out(rows * dim);
  for (std::size_t r = 0; r < rows; ++r) embed_into(points[2 * r], points[2 * r + 1], rates, out.data() + r * dim);
  return Tensor::from_op(nx::OpKind::custom, {rows, dim}, std::move(out), {points},
                         [rows, dim, rates = std::move(rates)](nx::Node& self) {
                           auto g = self.parents[0]->grad_buffer();
                           const std::size_t pairs = rates.size();
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* e = self.value.data() + r * dim;
                             const double* d = self.grad.data() + r * dim;
                             for (std::size_t axis = 0; axis < 2; ++axis) {
                               const std::size_t base = axis * 2 * pairs;
                               double acc = 0.0;
                               for (std::size_t i = 0; i < pairs; ++i) {
                                 const double s = e[base + 2 * i];
                                 const double c = e[base + 2 * i + 1];
                                 acc += rates[i] * (d[base + 2 * i] * c - d[base + 2 * i + 1] * s);
                               }
                               g[2 * r + axis] += acc;
                             }
                           }
                         });
}

void HeadLayout::validate() const {
  if (heads == 0 || model_dim == 0 || model_dim % heads != 0) {
    throw nx::ShapeError("head layout: " + std::to_string(heads) + " heads do not divide width " +
                         std::to_string(model_dim));
  }
}

Tensor lambda_from_embedding(const Tensor& f, const layers::Mlp2& ffn) {
  if (f.rank() != 2 || f.dim(1) != ffn.first.in_features()) {
    throw nx::ShapeError("lambda_from_embedding: embedding " + nx::shape_str(f.shape()) + " does not match FFN input " +
                         std::to_string(ffn.first.in_features()));
  }
  return ffn(f);
}

Tensor conditional_spatial_query(const Tensor& lambda, const Tensor& p_ref) {
  if (lambda.shape() != p_ref.shape()) {
    throw nx::ShapeError("conditional_spatial_query: lambda " + nx::shape_str(lambda.shape()) + " vs reference " +
                         nx::shape_str(p_ref.shape()));
  }
  return nx::mul(lambda, p_ref);
}

CrossAttentionOutput cross_attention(const CrossAttentionInputs& in, const HeadLayout& layout,
                                     const layers::Linear* out_proj) {
  layout.validate();
  const std::size_t n_heads = layout.heads;
  const std::size_t dh = layout.head_dim();
  const Tensor& cq = in.content_q;
  const Tensor& ck = in.content_k;
  if (cq.rank() != 2 || ck.rank() != 2 || cq.dim(1) != layout.model_dim || ck.dim(1) != layout.model_dim ||
      in.values.shape() != ck.shape()) {
    throw nx::ShapeError("cross_attention: content query " + nx::shape_str(cq.shape()) + ", key " +
                         nx::shape_str(ck.shape()) + ", values " + nx::shape_str(in.values.shape()) +
                         " inconsistent with width " + std::to_string(layout.model_dim));
  }
  if (in.spatial_q.size() != 1 && in.spatial_q.size() != n_heads) {
    throw nx::ShapeError("cross_attention: " + std::to_string(in.spatial_q.size()) + " spatial queries for " +
                         std::to_string(n_heads) + " heads");
  }
  const std::size_t n_q = cq.dim(0);
  const std::size_t n_k = ck.dim(0);
  const Tensor& sk = in.spatial_k;
  if (sk.rank() != 2 || sk.dim(0) != n_k) {
    throw nx::ShapeError("cross_attention: spatial key " + nx::shape_str(sk.shape()) + " for " +
                         std::to_string(n_k) + " keys");
  }
  for (const auto& sq : in.spatial_q) {
    if (sq.rank() != 2 || sq.dim(0) != n_q || sq.dim(1) != sk.dim(1)) {
      throw nx::ShapeError("cross_attention: spatial query " + nx::shape_str(sq.shape()) + " vs key " +
                           nx::shape_str(sk.shape()));
    }
  }

  // All spatial logits in one product: [n*N, S] x [K, S]^T.
  const Tensor stacked = in.spatial_q.size() == 1 ? in.spatial_q[0] : nx::concat(in.spatial_q, 0);
  const Tensor spatial_all = nx::matmul_nt(stacked, sk);

  const double inv_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(dh));
  CrossAttentionOutput out;
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Tensor spatial = in.spatial_q.size() == 1 ? spatial_all : nx::slice(spatial_all, 0, h * n_q, n_q);
    const Tensor content = nx::matmul_nt(nx::slice(cq, 1, h * dh, dh), nx::slice(ck, 1, h * dh, dh));
    const Tensor w = nx::softmax(nx::scale(nx::add(content, spatial), inv_scale));
    head_outputs.push_back(nx::matmul(w, nx::slice(in.values, 1, h * dh, dh)));
    out.weights.push_back(w);
    out.spatial_logits.push_back(spatial);
  }
  Tensor joined = n_heads == 1 ? head_outputs[0] : nx::concat(head_outputs, 1);
  out.output = out_proj ? (*out_proj)(joined) : joined;
  return out;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const HeadLayout& layout) {
  layout.validate();
  const std::size_t dh = layout.head_dim();
  if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != layout.model_dim || k.shape() != v.shape() ||
      k.dim(1) != layout.model_dim) {
    throw nx::ShapeError("multi_head_attention: q " + nx::shape_str(q.shape()) + ", k " + nx::shape_str(k.shape()) +
                         ", v " + nx::shape_str(v.shape()));
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < layout.heads; ++h) {
    const Tensor logits = nx::matmul_nt(nx::slice(q, 1, h * dh, dh), nx::slice(k, 1, h * dh, dh));
    heads.push_back(nx::matmul(nx::softmax(nx::scale(logits, inv_scale)), nx::slice(v, 1, h * dh, dh)));
  }
  return layout.heads == 1 ? heads[0] : nx::concat(heads, 1);
}

const char* to_string(WhmMode mode) {
  switch (mode) {
    case WhmMode::off: return "off";
    case WhmMode::original: return "original";
    case WhmMode::scale_free: return "scale-free";
  }
  return "?";
}

WhmMode parse_whm_mode(const std::string& s) {
  if (s == "off") return WhmMode::off;
  if (s == "original") return WhmMode::original;
  if (s == "scale-free") return WhmMode::scale_free;
  throw std::invalid_argument("unknown WH-modulation mode: " + s);
}

double wh_modulate(double x_term, double y_term, const ModulationFactors& f, std::size_t dim) {
  double fx = 1.0, fy = 1.0;
  switch (f.mode) {
    case WhmMode::off:
      break;
    case WhmMode::original:
      if (!(f.w_q > 0) || !(f.h_q > 0)) {
        throw std::invalid_argument("wh_modulate: box width/height must be positive, got " + std::to_string(f.w_q) +
                                    ", " + std::to_string(f.h_q));
      }
      fx = f.w_ref / f.w_q;
      fy = f.h_ref / f.h_q;
      break;
    case WhmMode::scale_free:
      fx = 2.0 * f.w_ref;
      fy = 2.0 * f.h_ref;
      break;
  }
  return (x_term * fx + y_term * fy) / std::sqrt(static_cast<double>(dim));
}

Tensor modulate_spatial_query(const Tensor& spatial_q, const Tensor& ref_wh, const Tensor& box_wh, WhmMode mode) {
  if (mode == WhmMode::off) return spatial_q;
  if (spatial_q.rank() != 2 || spatial_q.dim(1) % 2 != 0) {
    throw nx::ShapeError("modulate_spatial_query: query " + nx::shape_str(spatial_q.shape()));
  }
  const std::size_t rows = spatial_q.dim(0), width = spatial_q.dim(1);
  const nx::Shape pair{rows, 2};
  if (ref_wh.shape() != pair || box_wh.shape() != pair) {
    throw nx::ShapeError("modulate_spatial_query: factors " + nx::shape_str(ref_wh.shape()) + " / " +
                         nx::shape_str(box_wh.shape()) + " for query " + nx::shape_str(spatial_q.shape()));
  }
  Tensor factors;
  if (mode == WhmMode::original) {
    for (double v : box_wh.values()) {
      if (!(v > 0)) throw std::invalid_argument("modulate_spatial_query: non-positive box side");
    }
    factors = nx::div(ref_wh, box_wh);
  } else {
    factors = nx::scale(ref_wh, 2.0);
  }
  // [N,2] x selector [2,S]: column j takes fx for the x-half, fy for the y-half.
  std::vector<double> sel(2 * width, 0.0);
  for (std::size_t j = 0; j < width / 2; ++j) sel[j] = 1.0;
  for (std::size_t j = width / 2; j < width; ++j) sel[width + j] = 1.0;
  const Tensor expanded = nx::matmul(factors, Tensor::constant({2, width}, std::move(sel)));
  return nx::mul(spatial_q, expanded);
}

}  // namespace boxagent::attention
