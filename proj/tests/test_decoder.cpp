#include <doctest.h>

#include <cstring>
#include <random>

#include "boxagent/decoder.hpp"
#include "boxagent/ops.hpp"
#include "boxagent/optim.hpp"

using namespace boxagent;
using namespace boxagent::decoder;
namespace nx = boxagent::numerics;
using nx::Tensor;

namespace {

DecoderConfig mini(box_agent::RefMode mode) {
  DecoderConfig c;
  c.stages = 2;
  c.queries = 3;
  c.model_dim = 16;
  c.heads = 2;
  c.classes = 2;
  c.ffn_hidden = 8;
  c.mode = mode;
  return c;
}

MemoryTokens random_memory(std::size_t tokens, std::size_t dim, std::uint64_t seed, bool track = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1), p(0, 1);
  std::vector<double> c(tokens * dim), pts(tokens * 2);
  for (auto& v : c) v = u(rng);
  for (auto& v : pts) v = p(rng);
  const Tensor content = track ? Tensor::parameter({tokens, dim}, c) : Tensor::constant({tokens, dim}, c);
  return {content, attention::sinusoidal_embed(Tensor::constant({tokens, 2}, pts), dim, 20.0), 0, 0};
}

void jitter(const nx::ParameterSet& ps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (Tensor t : ps.tensors())
    for (auto& v : t.mutable_values()) v += u(rng);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("query initialization") {
  DecoderConfig c = mini(box_agent::RefMode::center);
  c.queries = 1;
  Rng rng(1);
  nx::ParameterSet ps;
  const auto s = init_queries(c, rng, ps);
  CHECK(s.logits.shape() == nx::Shape{1, 4});
  CHECK(s.embeddings.shape() == nx::Shape{1, 16});
  for (double v : s.embeddings.values()) CHECK(v == 0.0);
  CHECK(ps.size() == 1);

  c.queries = 1000;
  Rng r1(5), r2(5);
  nx::ParameterSet p1, p2;
  const auto a = init_queries(c, r1, p1), b = init_queries(c, r2, p2);
  CHECK(bitwise_equal(a.logits, b.logits));
  const Tensor probs = nx::sigmoid(a.logits);
  for (double v : probs.values()) {
    CHECK(v > 0.05);
    CHECK(v < 0.95);
  }
}

TEST_CASE("same seed gives the same parameters in every mode") {
  nx::ParameterSet a, b;
  Rng r1(3), r2(3);
  create_decoder_params(mini(box_agent::RefMode::center), r1, a);
  create_decoder_params(mini(box_agent::RefMode::agent_sigma), r2, b);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.names()[i] == b.names()[i]);
    CHECK(bitwise_equal(a.tensors()[i], b.tensors()[i]));
  }
}

TEST_CASE("a zero box head leaves boxes unchanged; shapes and traces") {
  const auto c = mini(box_agent::RefMode::agent_unnormalized);
  Rng rng(4);
  nx::ParameterSet ps;
  const auto params = create_decoder_params(c, rng, ps);
  const auto memory = random_memory(10, 16, 9);
  const auto s0 = initial_state(c, params);
  const auto r = decoder_stage(s0, memory, params, c, true);
  CHECK(bitwise_equal(r.prediction.boxes, nx::sigmoid(s0.logits)));
  CHECK(r.state.logits.shape() == nx::Shape{3, 4});
  CHECK(r.state.embeddings.shape() == nx::Shape{3, 16});
  CHECK(r.prediction.class_logits.shape() == nx::Shape{3, 3});
  REQUIRE(r.trace.has_value());
  const auto& t = *r.trace;
  CHECK(t.agent_points.size() == 3);
  CHECK(t.agent_points[0].size() == 2);
  CHECK(t.walker.size() == 3 * 4);
  for (const auto* maps : {&t.attention, &t.spatial_attention}) {
    REQUIRE(maps->size() == 2);
    for (const auto& w : *maps) {
      REQUIRE(w.size() == 30);
      for (std::size_t q = 0; q < 3; ++q) {
        double s = 0;
        for (std::size_t k = 0; k < 10; ++k) s += w[q * 10 + k];
        CHECK(s == doctest::Approx(1.0));
      }
    }
  }
  for (const auto& row : t.class_scores) {
    double s = 0;
    for (double v : row) s += v;
    CHECK(s == doctest::Approx(1.0));
  }
}

TEST_CASE("zeroed walker reduces to center mode bitwise") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto c = mini(box_agent::RefMode::agent_unnormalized);
    c.stages = 3;
    Rng rng(seed);
    nx::ParameterSet ps;
    const auto params = create_decoder_params(c, rng, ps);
    jitter(ps, seed + 100);
    for (std::size_t s = 0; s < c.stages; ++s) {
      for (const char* part : {"weight", "bias"}) {
        Tensor t = ps.get(DecoderParams::walker_prefix(s) + part);
        for (auto& v : t.mutable_values()) v = 0.0;
      }
    }
    auto cc = c;
    cc.mode = box_agent::RefMode::center;
    const auto memory = random_memory(12, 16, seed);
    const auto a = forward(memory, c, params), b = forward(memory, cc, params);
    for (std::size_t s = 0; s < c.stages; ++s) {
      CHECK(bitwise_equal(a.stages[s].boxes, b.stages[s].boxes));
      CHECK(bitwise_equal(a.stages[s].class_logits, b.stages[s].class_logits));
    }
  }
}

TEST_CASE("forward: stage count and determinism") {
  auto c = mini(box_agent::RefMode::agent_tanh);
  c.stages = 1;
  Rng r1(6), r2(6);
  nx::ParameterSet p1, p2;
  const auto a = create_decoder_params(c, r1, p1), b = create_decoder_params(c, r2, p2);
  const auto memory = random_memory(7, 16, 2);
  const auto fa = forward(memory, c, a), fb = forward(memory, c, b);
  CHECK(fa.stages.size() == 1);
  CHECK(fa.traces.empty());
  CHECK(bitwise_equal(fa.stages[0].boxes, fb.stages[0].boxes));
  CHECK(bitwise_equal(fa.stages[0].class_logits, fb.stages[0].class_logits));
}

TEST_CASE("gradients through two stages match finite differences in every mode") {
  struct Variant {
    box_agent::RefMode mode;
    attention::WhmMode whm;
    bool shared_lambda;
  };
  using box_agent::RefMode;
  using attention::WhmMode;
  const Variant variants[] = {
      {RefMode::center, WhmMode::off, true},
      {RefMode::center_whm, WhmMode::off, true},
      {RefMode::agent_unnormalized, WhmMode::off, false},
      {RefMode::agent_tanh, WhmMode::scale_free, true},
      {RefMode::agent_noscale, WhmMode::original, true},
      {RefMode::agent_sigma, WhmMode::off, true},
      {RefMode::agent_fixed_grid, WhmMode::off, false},
  };
  for (const auto& v : variants) {
    CAPTURE(box_agent::to_string(v.mode));
    auto c = mini(v.mode);
    c.whm = v.whm;
    c.shared_lambda = v.shared_lambda;
    c.detach_boxes = false;
    Rng rng(11);
    nx::ParameterSet ps;
    const auto params = create_decoder_params(c, rng, ps);
    jitter(ps, 12);
    const auto memory = random_memory(6, 16, 13, true);
    std::vector<double> wb(3 * 4), wc(3 * 3);
    std::mt19937_64 mr(14);
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto& x : wb) x = u(mr);
    for (auto& x : wc) x = u(mr);
    const Tensor mb = Tensor::constant({3, 4}, wb), mc = Tensor::constant({3, 3}, wc);
    auto loss = [&] {
      Tensor acc = Tensor::scalar(0.0);
      for (const auto& s : forward(memory, c, params).stages)
        acc = nx::add(acc, nx::add(nx::sum(nx::mul(s.boxes, mb)), nx::sum(nx::mul(s.class_logits, mc))));
      return acc;
    };
    std::vector<Tensor> all = ps.tensors();
    all.push_back(memory.content);
    const auto r = nx::finite_difference_check(loss, all, 1e-6);
    CHECK(r.consistent);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("config validation and JSON") {
  DecoderConfig c;
  c.model_dim = 30;
  CHECK_THROWS(c.validate());
  c = {};
  c.heads = 5;
  CHECK_THROWS(c.validate());
  c = {};
  c.mode = box_agent::RefMode::center_whm;
  CHECK(c.effective_whm() == attention::WhmMode::original);
  c.whm = attention::WhmMode::scale_free;
  CHECK(c.effective_whm() == attention::WhmMode::scale_free);
  c.shared_lambda = false;
  c.detach_boxes = false;
  const auto back = decoder_config_from_json(to_json(c));
  CHECK(back.mode == c.mode);
  CHECK(back.whm == c.whm);
  CHECK(back.shared_lambda == false);
  CHECK(back.detach_boxes == false);
  CHECK(back.stages == c.stages);
}

TEST_CASE("bind finds the created parameters and rejects mismatches") {
  const auto c = mini(box_agent::RefMode::agent_sigma);
  Rng rng(1);
  nx::ParameterSet ps;
  const auto made = create_decoder_params(c, rng, ps);
  const auto bound = bind_decoder_params(c, ps);
  CHECK(bound.anchors.node() == made.anchors.node());
  CHECK(bound.stages[1].walker.weight.node() == made.stages[1].walker.weight.node());
  auto bigger = c;
  bigger.queries = 4;
  CHECK_THROWS(bind_decoder_params(bigger, ps));
  auto deeper = c;
  deeper.stages = 3;
  CHECK_THROWS(bind_decoder_params(deeper, ps));
}
