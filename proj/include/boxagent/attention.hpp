#pragma once

// Sinusoidal position embeddings and the decomposed content + spatial
// cross-attention used by the decoder.

#include <span>
#include <vector>

#include "boxagent/layers.hpp"
#include "boxagent/tensor.hpp"

namespace boxagent::attention {

constexpr double kDefaultTemperature = 20.0;

// Embedding of (x, y): an x-part followed by a y-part, D/2 entries each. Each
// part interleaves sin/cos pairs sin(2*pi*t/w_i), cos(2*pi*t/w_i) with
// w_i = temperature^(2i/(D/2)), i = 0..D/4-1. Requires D % 4 == 0.
std::vector<double> sinusoidal_embed(double x, double y, std::size_t dim,
                                     double temperature = kDefaultTemperature);

// Row-wise embedding of points [R,2] -> [R,D], differentiable in the points.
numerics::Tensor sinusoidal_embed(const numerics::Tensor& points, std::size_t dim,
                                  double temperature = kDefaultTemperature);

struct HeadLayout {
  std::size_t heads = 8;
  std::size_t model_dim = 256;

  std::size_t head_dim() const { return model_dim / heads; }
  // Throws when heads does not divide model_dim.
  void validate() const;
};

// lambda_q = FFN(f); [N,D] -> [N,D'] where D' = D (shared) or n*D (per head).
numerics::Tensor lambda_from_embedding(const numerics::Tensor& f, const layers::Mlp2& ffn);

// lambda (.) p_ref; shapes must match exactly.
numerics::Tensor conditional_spatial_query(const numerics::Tensor& lambda, const numerics::Tensor& p_ref);

struct CrossAttentionInputs {
  numerics::Tensor content_q;  // [N, D]
  numerics::Tensor content_k;  // [K, D]
  // One [N, S] query per head, or a single query shared by all heads.
  std::vector<numerics::Tensor> spatial_q;
  numerics::Tensor spatial_k;  // [K, S]
  numerics::Tensor values;     // [K, D]
};

struct CrossAttentionOutput {
  numerics::Tensor output;                       // [N, D]
  std::vector<numerics::Tensor> weights;         // per head [N, K]
  std::vector<numerics::Tensor> spatial_logits;  // per head [N, K], unscaled
};

// Per head: softmax((c_q c_k^T + p_q p_k^T) / sqrt(2 d_h)) v. Heads are
// concatenated and passed through out_proj when given.
CrossAttentionOutput cross_attention(const CrossAttentionInputs& in, const HeadLayout& layout,
                                     const layers::Linear* out_proj = nullptr);

// Standard scaled dot-product attention, 1/sqrt(d_h); returns concatenated heads.
numerics::Tensor multi_head_attention(const numerics::Tensor& q, const numerics::Tensor& k,
                                      const numerics::Tensor& v, const HeadLayout& layout);

enum class WhmMode { off, original, scale_free };

const char* to_string(WhmMode mode);
WhmMode parse_whm_mode(const std::string& s);

struct ModulationFactors {
  double w_ref = 1.0;
  double h_ref = 1.0;
  double w_q = 1.0;
  double h_q = 1.0;
  WhmMode mode = WhmMode::off;
};

// Spatial logit from separated x and y inner products:
//   off:        (x + y) / sqrt(D)
//   original:   (x * w_ref/w_q + y * h_ref/h_q) / sqrt(D)
//   scale_free: (x * 2 w_ref + y * 2 h_ref) / sqrt(D)
double wh_modulate(double x_term, double y_term, const ModulationFactors& f, std::size_t dim);

// Applies the same factors to a spatial query [N,S] (x-half, y-half) so that
// its inner product with a key embedding equals the modulated logit times
// sqrt(D). ref_wh and box_wh are [N,2].
numerics::Tensor modulate_spatial_query(const numerics::Tensor& spatial_q, const numerics::Tensor& ref_wh,
                                        const numerics::Tensor& box_wh, WhmMode mode);

}  // namespace boxagent::attention
