// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0

#include "hybridbert/gradient_suite.hpp"

#include <functional>
#include <map>
#include <stdexcept>

#include "hybridbert/attention.hpp"
#include "hybridbert/ops.hpp"
#include "hybridbert/pooling.hpp"

namespace hybridbert {

namespace {

using T64 = Tensor<double>;
using Inputs = std::vector<T64>;

T64 randn(Shape shape, Rng& rng, double scale = 1.0) {
  T64 t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

class CaseRunner {
 public:
  CaseRunner(const GradientSuiteOptions& options, std::vector<GradientCase>& out)
      : options_(options), out_(out), rng_(options.seed) {}

  Rng& rng() { return rng_; }

  // Reduces a non-scalar output with fixed random weights so every output
  // coordinate contributes a distinct amount.
  T64 project(const T64& y) {
    auto it = weights_.find(y.shape());
    if (it == weights_.end()) it = weights_.emplace(y.shape(), randn(y.shape(), rng_)).first;
    return sum(mul_constant(y, it->second));
  }

  void run(const std::string& name, Inputs inputs, const std::function<T64(const Inputs&)>& f,
           std::size_t coordinates = 0) {
    GradCheckOptions opts;
    opts.step = options_.step;
    opts.max_coordinates = coordinates;
    opts.seed = options_.seed + out_.size();
    out_.push_back({name, grad_check([&](const Inputs& in) { return f(in); }, std::move(inputs), opts)});
  }

 private:
  const GradientSuiteOptions& options_;
  std::vector<GradientCase>& out_;
  Rng rng_;
  std::map<Shape, T64> weights_;
};

AttentionWeights<double> attention_from(const Inputs& in, std::size_t first, std::size_t heads) {
  AttentionWeights<double> w;
  w.query_w = in[first];
  w.query_b = in[first + 1];
  w.key_w = in[first + 2];
  w.key_b = in[first + 3];
  w.value_w = in[first + 4];
  w.value_b = in[first + 5];
  w.output_w = in[first + 6];
  w.output_b = in[first + 7];
  w.heads = heads;
  return w;
}

PoolingWeights<double> pooling_from(const Inputs& in, std::size_t first, std::size_t heads) {
  PoolingWeights<double> w;
  w.query_w = in[first];
  w.query_b = in[first + 1];
  w.key_w = in[first + 2];
  w.key_b = in[first + 3];
  w.value_w = in[first + 4];
  w.value_b = in[first + 5];
  w.output_w = in[first + 6];
  w.output_b = in[first + 7];
  w.local_w = in[first + 8];
  w.local_b = in[first + 9];
  w.heads = heads;
  return w;
}

void append_projections(Inputs& in, std::size_t d, std::size_t count, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    in.push_back(randn({d, d}, rng, 0.4));
    in.push_back(randn({d}, rng, 0.2));
  }
}

}  // namespace

TokenBatch random_token_batch(std::size_t batch, std::size_t len, std::size_t vocab, Rng& rng) {
  if (len < 6) throw std::invalid_argument("random_token_batch: len must be at least 6");
  TokenBatch b;
  b.batch_size = batch;
  b.seq_len = len;
  const std::size_t n = batch * len;
  b.input_ids.assign(n, kPadId);
  b.segment_ids.assign(n, 0);
  b.padding_mask.assign(n, 0);
  b.mlm_labels.assign(n, kIgnoreLabel);
  b.mask_positions.assign(n, 0);
  for (std::size_t s = 0; s < batch; ++s) {
    const std::size_t used = (s % 2 == 1) ? len - 3 : len;
    const std::size_t sep1 = used / 2;
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t k = s * len + i;
      if (i >= used) {
        b.padding_mask[k] = 1;
        continue;
      }
      b.segment_ids[k] = i > sep1 ? 1 : 0;
      if (i == 0) {
        b.input_ids[k] = kClsId;
      } else if (i == sep1 || i == used - 1) {
        b.input_ids[k] = kSepId;
      } else {
        const auto id = static_cast<std::int32_t>(kNumReserved + rng.below(vocab - kNumReserved));
        b.input_ids[k] = id;
        if (i == 1 || rng.uniform() < 0.3) {
          b.mlm_labels[k] = id;
          if (rng.uniform() < 0.7) {
            b.input_ids[k] = kMaskId;
            b.mask_positions[k] = 1;
          }
        }
      }
    }
    b.sso_labels.push_back(static_cast<std::int32_t>(rng.below(3)));
  }
  return b;
}

ModelConfig gradient_model_config(const std::string& plan, std::size_t vocab) {
  ModelConfig cfg;
  cfg.plan = parse_layer_plan(plan);
  cfg.num_layers = cfg.plan.size();
  cfg.hidden = 32;
  cfg.heads = 4;
  cfg.ffn = 64;
  cfg.vocab = vocab;
  cfg.max_len = 16;
  cfg.layer_norm_eps = 1e-6;
  return cfg;
}

std::vector<GradientCase> op_gradient_cases(const GradientSuiteOptions& options) {
  std::vector<GradientCase> out;
  CaseRunner c(options, out);
  Rng& rng = c.rng();

  c.run("matmul", {randn({3, 4}, rng), randn({4, 5}, rng)}, [&](const Inputs& in) { return c.project(matmul(in[0], in[1])); });
  c.run("matmul_bt", {randn({3, 4}, rng), randn({5, 4}, rng)},
        [&](const Inputs& in) { return c.project(matmul_bt(in[0], in[1])); });
  c.run("linear", {randn({2, 3, 4}, rng), randn({4, 5}, rng), randn({5}, rng)},
        [&](const Inputs& in) { return c.project(linear(in[0], in[1], in[2])); });
  c.run("linear_bt", {randn({2, 3, 4}, rng), randn({5, 4}, rng), randn({5}, rng)},
        [&](const Inputs& in) { return c.project(linear_bt(in[0], in[1], in[2])); });
  c.run("add", {randn({3, 4}, rng), randn({3, 4}, rng)}, [&](const Inputs& in) { return c.project(add(in[0], in[1])); });
  c.run("mul", {randn({3, 4}, rng), randn({3, 4}, rng)}, [&](const Inputs& in) { return c.project(mul(in[0], in[1])); });
  c.run("scale", {randn({3, 4}, rng)}, [&](const Inputs& in) { return c.project(scale(in[0], -1.7)); });
  c.run("mul_broadcast_rows", {randn({2, 3, 4}, rng), randn({2, 4}, rng)},
        [&](const Inputs& in) { return c.project(mul_broadcast_rows(in[0], in[1])); });
  {
    const T64 constant = randn({2, 1, 4}, rng);
    c.run("mul_constant", {randn({2, 3, 4}, rng)},
          [&, constant](const Inputs& in) { return c.project(mul_constant(in[0], constant)); });
  }
  c.run("sum", {randn({3, 4}, rng)}, [](const Inputs& in) { return sum(in[0]); });
  c.run("mean", {randn({3, 4}, rng)}, [](const Inputs& in) { return mean(in[0]); });
  c.run("softmax_lastdim", {randn({2, 3, 5}, rng)}, [&](const Inputs& in) { return c.project(softmax_lastdim(in[0])); });
  {
    T64 mask({2, 1, 1, 5});
    mask.data()[1] = dtype_traits<double>::mask_value;
    mask.data()[7] = dtype_traits<double>::mask_value;
    mask.data()[9] = dtype_traits<double>::mask_value;
    c.run("softmax_lastdim_masked", {randn({2, 2, 3, 5}, rng)},
          [&, mask](const Inputs& in) { return c.project(softmax_lastdim(in[0], mask)); });
  }
  c.run("layer_norm", {randn({3, 6}, rng), randn({6}, rng), randn({6}, rng)},
        [&](const Inputs& in) { return c.project(layer_norm(in[0], in[1], in[2], 1e-5)); });
  c.run("gelu", {randn({3, 5}, rng, 2.0)}, [&](const Inputs& in) { return c.project(gelu(in[0])); });
  c.run("dropout", {randn({4, 5}, rng)}, [&](const Inputs& in) {
    Rng drop_rng(options.seed);
    return c.project(dropout(in[0], 0.3, drop_rng));
  });
  {
    const Mask valid = {1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0};
    c.run("max_pool1d", {randn({2, 6, 3}, rng)},
          [&, valid](const Inputs& in) { return c.project(max_pool1d(in[0], 3, 1, valid)); });
  }
  {
    const std::vector<std::int32_t> ids = {3, 0, 6, 3, 2};
    c.run("embedding", {randn({7, 4}, rng)}, [&, ids](const Inputs& in) { return c.project(embedding(in[0], ids)); });
  }
  {
    const std::vector<std::size_t> rows = {4, 0, 4, 2};
    c.run("gather_rows", {randn({2, 3, 4}, rng)},
          [&, rows](const Inputs& in) { return c.project(gather_rows(in[0], rows)); });
  }
  c.run("reshape", {randn({2, 3, 4}, rng)}, [&](const Inputs& in) { return c.project(reshape(in[0], {6, 4})); });
  c.run("split_heads", {randn({2, 3, 4}, rng)}, [&](const Inputs& in) { return c.project(split_heads(in[0], 2)); });
  c.run("merge_heads", {randn({2, 2, 3, 2}, rng)}, [&](const Inputs& in) { return c.project(merge_heads(in[0])); });
  c.run("bmm", {randn({2, 3, 4}, rng), randn({2, 4, 5}, rng)}, [&](const Inputs& in) { return c.project(bmm(in[0], in[1])); });
  c.run("bmm_transposed", {randn({2, 3, 4}, rng), randn({2, 5, 4}, rng)},
        [&](const Inputs& in) { return c.project(bmm(in[0], in[1], true, 0.5)); });
  {
    const Mask valid = {1, 0, 1, 1, 0, 1, 1, 0};
    c.run("masked_mean_rows", {randn({2, 4, 3}, rng)},
          [&, valid](const Inputs& in) { return c.project(masked_mean_rows(in[0], valid)); });
  }
  {
    const std::vector<std::int32_t> labels = {2, kIgnoreLabel, 0, 4};
    c.run("cross_entropy", {randn({4, 5}, rng)}, [labels](const Inputs& in) { return cross_entropy(in[0], labels); });
  }

  // Token mixers, with their weights among the checked inputs.
  const std::size_t d = 8, heads = 2;
  const Mask pad = {0, 0, 0, 0, 0, 0, 0, 0, 1, 1};
  const Mask masked = {0, 1, 0, 0, 0, 0, 0, 1, 0, 0};
  {
    Inputs in = {randn({2, 5, d}, rng)};
    append_projections(in, d, 4, rng);
    c.run("multi_head_self_attention", in, [&, pad](const Inputs& v) {
      return c.project(multi_head_self_attention(v[0], attention_from(v, 1, heads), pad));
    });
    for (bool renormalize : {true, false}) {
      DropMaskConfig cfg{true, renormalize};
      c.run(renormalize ? "dropmask_self_attention" : "dropmask_self_attention_literal", in,
            [&, pad, masked, cfg](const Inputs& v) {
              return c.project(dropmask_self_attention(v[0], attention_from(v, 1, heads), pad, masked, cfg));
            });
    }
  }
  c.run("single_query_cross_attention", {randn({2, d}, rng), randn({2, 5, d}, rng), randn({2, 5, d}, rng)},
        [&, pad](const Inputs& v) { return c.project(single_query_cross_attention(v[0], v[1], v[2], pad, heads)); });
  {
    Inputs in = {randn({2, 5, d}, rng)};
    append_projections(in, d, 5, rng);
    c.run("global_aggregation", in,
          [&, pad](const Inputs& v) { return c.project(global_aggregation(v[0], pooling_from(v, 1, heads), pad)); });
    c.run("local_max_pooling", in,
          [&, pad](const Inputs& v) { return c.project(local_max_pooling(v[0], pooling_from(v, 1, heads), pad)); });
    c.run("pooling_mixer", in,
          [&, pad](const Inputs& v) { return c.project(pooling_mixer(v[0], pooling_from(v, 1, heads), pad)); });
  }
  return out;
}

std::vector<GradientCase> model_gradient_cases(const GradientSuiteOptions& options) {
  std::vector<GradientCase> out;
  constexpr std::size_t kVocab = 40;
  for (const auto& plan : options.model_plans) {
    Rng rng(options.seed);
    const ModelConfig cfg = gradient_model_config(plan, kVocab);
    auto params = ModelParams<double>::init(cfg, rng);
    // Move away from the near-symmetric initial point so every parameter
    // carries a gradient of useful size.
    for (const auto& [name, t] : params.named()) {
      T64 p = t;
      for (double& v : p.data()) v += 0.1 * rng.normal();
    }
    const TokenBatch batch = random_token_batch(2, 16, kVocab, rng);
    Inputs inputs;
    for (const auto& [name, t] : params.named()) inputs.push_back(t);
    GradCheckOptions opts;
    opts.step = options.step;
    opts.max_coordinates = options.model_coordinates;
    opts.seed = options.seed;
    auto result = grad_check([&](const Inputs&) { return pretraining_losses(batch, params, cfg).total; }, inputs, opts);
    out.push_back({"model:" + plan, result});
  }
  return out;
}

}  // namespace hybridbert
