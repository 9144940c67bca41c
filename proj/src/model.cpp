// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0

#include "hybridbert/model.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <stdexcept>

#include "hybridbert/errors.hpp"

namespace hybridbert {

namespace {

constexpr std::size_t kMaxPlanCount = 4096;
constexpr std::size_t kSsoClasses = 3;
constexpr std::size_t kTypeVocab = 2;
constexpr double kInitStddev = 0.02;

MixerKind kind_from_char(char c, std::string_view text) {
  if (c == 'A') return MixerKind::Attention;
  if (c == 'P') return MixerKind::Pooling;
  throw ParseError("layer plan '" + std::string(text) + "': unknown mixer kind '" + std::string(1, c) +
                   "' (expected A or P)");
}

// Parses "<count><kind>" occupying all of `run`.
std::pair<std::size_t, MixerKind> parse_run(std::string_view run, std::string_view text) {
  if (run.size() < 2) throw ParseError("layer plan '" + std::string(text) + "': malformed run '" + std::string(run) + "'");
  const std::string_view digits = run.substr(0, run.size() - 1);
  if (!std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    throw ParseError("layer plan '" + std::string(text) + "': malformed count '" + std::string(digits) + "'");
  }
  std::size_t count = 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), count);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || count > kMaxPlanCount) {
    throw ParseError("layer plan '" + std::string(text) + "': count out of range");
  }
  if (count == 0) throw ParseError("layer plan '" + std::string(text) + "': zero layer count");
  return {count, kind_from_char(run.back(), text)};
}

template <typename T>
Tensor<T> param(Shape shape) {
  Tensor<T> t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng) {
  for (T& v : t.data()) v = static_cast<T>(rng.truncated_normal(kInitStddev));
}

template <typename T>
LayerNormParams<T> ln_params(std::size_t d) {
  return {param<T>({d}), param<T>({d})};
}

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, const ModelConfig& cfg, Rng* rng) {
  return (rng && cfg.dropout > 0.0) ? dropout(x, cfg.dropout, *rng) : x;
}

// Visits every parameter with its stable name, in a fixed order.
template <typename T, typename F>
void visit_params(ModelParams<T>& p, F&& f) {
  f("embeddings.word", p.word);
  f("embeddings.position", p.position);
  f("embeddings.type", p.type);
  f("embeddings.ln.gamma", p.embed_ln.gamma);
  f("embeddings.ln.beta", p.embed_ln.beta);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& layer = p.layers[i];
    const std::string pre = "layers." + std::to_string(i) + ".";
    if (layer.kind == MixerKind::Attention) {
      auto& a = layer.attention;
      f(pre + "attention.query.weight", a.query_w);
      f(pre + "attention.query.bias", a.query_b);
      f(pre + "attention.key.weight", a.key_w);
      f(pre + "attention.key.bias", a.key_b);
      f(pre + "attention.value.weight", a.value_w);
      f(pre + "attention.value.bias", a.value_b);
      f(pre + "attention.output.weight", a.output_w);
      f(pre + "attention.output.bias", a.output_b);
    } else {
      auto& w = layer.pooling;
      f(pre + "pooling.query.weight", w.query_w);
      f(pre + "pooling.query.bias", w.query_b);
      f(pre + "pooling.key.weight", w.key_w);
      f(pre + "pooling.key.bias", w.key_b);
      f(pre + "pooling.value.weight", w.value_w);
      f(pre + "pooling.value.bias", w.value_b);
      f(pre + "pooling.output.weight", w.output_w);
      f(pre + "pooling.output.bias", w.output_b);
      f(pre + "pooling.local.weight", w.local_w);
      f(pre + "pooling.local.bias", w.local_b);
    }
    f(pre + "mixer_ln.gamma", layer.mixer_ln.gamma);
    f(pre + "mixer_ln.beta", layer.mixer_ln.beta);
    f(pre + "ffn.in.weight", layer.ffn_in_w);
    f(pre + "ffn.in.bias", layer.ffn_in_b);
    f(pre + "ffn.out.weight", layer.ffn_out_w);
    f(pre + "ffn.out.bias", layer.ffn_out_b);
    f(pre + "ffn_ln.gamma", layer.ffn_ln.gamma);
    f(pre + "ffn_ln.beta", layer.ffn_ln.beta);
  }
  f("mlm.transform.weight", p.mlm_transform_w);
  f("mlm.transform.bias", p.mlm_transform_b);
  f("mlm.transform_ln.gamma", p.mlm_transform_ln.gamma);
  f("mlm.transform_ln.beta", p.mlm_transform_ln.beta);
  f("mlm.decoder.bias", p.mlm_decoder_b);
  f("sso.weight", p.sso_w);
  f("sso.bias", p.sso_b);
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

std::size_t LayerPlan::count(MixerKind kind) const {
  return static_cast<std::size_t>(std::count(layers.begin(), layers.end(), kind));
}

LayerPlan parse_layer_plan(std::string_view text) {
  LayerPlan plan;
  auto append = [&plan](std::pair<std::size_t, MixerKind> run) { plan.layers.insert(plan.layers.end(), run.first, run.second); };
  const auto plus = text.find('+');
  if (plus == std::string_view::npos) {
    append(parse_run(text, text));
    return plan;
  }
  const std::string_view bottom = text.substr(0, plus);
  const std::string_view top = text.substr(plus + 1);
  if (bottom.empty() || bottom.front() != 'B' || top.empty() || top.front() != 'T') {
    throw ParseError("layer plan '" + std::string(text) + "': expected B<n><kind>+T<n><kind>");
  }
  append(parse_run(bottom.substr(1), text));
  append(parse_run(top.substr(1), text));
  if (plan.size() > kMaxPlanCount) throw ParseError("layer plan '" + std::string(text) + "': too many layers");
  return plan;
}

std::string format_layer_plan(const LayerPlan& plan) {
  if (plan.layers.empty()) throw std::invalid_argument("format_layer_plan: empty plan");
  std::vector<std::pair<std::size_t, MixerKind>> runs;
  for (MixerKind k : plan.layers) {
    if (runs.empty() || runs.back().second != k) runs.emplace_back(0, k);
    ++runs.back().first;
  }
  auto run_str = [](const std::pair<std::size_t, MixerKind>& r) {
    return std::to_string(r.first) + static_cast<char>(r.second);
  };
  if (runs.size() == 1) return run_str(runs[0]);
  if (runs.size() == 2) return "B" + run_str(runs[0]) + "+T" + run_str(runs[1]);
  std::string out;
  for (MixerKind k : plan.layers) out += static_cast<char>(k);
  return out;
}

void ModelConfig::validate() const {
  if (hidden == 0) throw ConfigError("hidden", "must be positive");
  if (heads == 0 || hidden % heads != 0) {
    throw ConfigError("heads", std::to_string(hidden) + " is not divisible by " + std::to_string(heads));
  }
  if (ffn == 0) throw ConfigError("ffn", "must be positive");
  if (vocab <= static_cast<std::size_t>(kNumReserved)) throw ConfigError("vocab", "must exceed the reserved ids");
  if (max_len < 3) throw ConfigError("max_len", "must be at least 3");
  if (plan.size() == 0) throw ConfigError("layer_plan", "empty plan");
  if (num_layers != plan.size()) {
    throw ConfigError("num_layers", std::to_string(num_layers) + " does not match layer plan " + format_layer_plan(plan) +
                                        " with " + std::to_string(plan.size()) + " layers");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout", "must lie in [0, 1)");
  if (ablation.disable_ga && ablation.disable_lmp) {
    throw ConfigError("disable_lmp", "cannot disable both pooling branches");
  }
  if (!(layer_norm_eps > 0.0)) throw ConfigError("layer_norm_eps", "must be positive");
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.hidden;
  ModelParams p;
  p.word = param<T>({cfg.vocab, d});
  p.position = param<T>({cfg.max_len, d});
  p.type = param<T>({kTypeVocab, d});
  p.embed_ln = ln_params<T>(d);
  for (MixerKind kind : cfg.plan.layers) {
    BlockParams<T> b;
    b.kind = kind;
    if (kind == MixerKind::Attention) {
      auto& a = b.attention;
      for (auto* m : {&a.query_w, &a.key_w, &a.value_w, &a.output_w}) *m = param<T>({d, d});
      for (auto* v : {&a.query_b, &a.key_b, &a.value_b, &a.output_b}) *v = param<T>({d});
      a.heads = cfg.heads;
    } else {
      auto& w = b.pooling;
      for (auto* m : {&w.query_w, &w.key_w, &w.value_w, &w.output_w, &w.local_w}) *m = param<T>({d, d});
      for (auto* v : {&w.query_b, &w.key_b, &w.value_b, &w.output_b, &w.local_b}) *v = param<T>({d});
      w.heads = cfg.heads;
    }
    b.mixer_ln = ln_params<T>(d);
    b.ffn_in_w = param<T>({d, cfg.ffn});
    b.ffn_in_b = param<T>({cfg.ffn});
    b.ffn_out_w = param<T>({cfg.ffn, d});
    b.ffn_out_b = param<T>({d});
    b.ffn_ln = ln_params<T>(d);
    p.layers.push_back(std::move(b));
  }
  p.mlm_transform_w = param<T>({d, d});
  p.mlm_transform_b = param<T>({d});
  p.mlm_transform_ln = ln_params<T>(d);
  p.mlm_decoder_b = param<T>({cfg.vocab});
  p.sso_w = param<T>({d, kSsoClasses});
  p.sso_b = param<T>({kSsoClasses});
  p.register_all();
  return p;
}

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& cfg, Rng& rng) {
  ModelParams p = zeros(cfg);
  for (auto& [name, t] : p.named_) {
    if (ends_with(name, ".gamma")) {
      std::fill(t.data().begin(), t.data().end(), T(1));
    } else if (!ends_with(name, ".bias") && !ends_with(name, ".beta")) {
      fill_normal(t, rng);
    }
  }
  return p;
}

template <typename T>
ModelParams<T> ModelParams<T>::clone() const {
  ModelParams copy = *this;
  visit_params(copy, [](const std::string&, Tensor<T>& t) {
    Tensor<T> fresh(t.shape(), std::vector<T>(t.data().begin(), t.data().end()));
    fresh.set_requires_grad(t.requires_grad());
    t = std::move(fresh);
  });
  copy.register_all();
  return copy;
}

template <typename T>
void ModelParams<T>::register_all() {
  named_.clear();
  visit_params(*this, [this](std::string name, Tensor<T>& t) { named_.emplace_back(std::move(name), t); });
}

template <typename T>
Tensor<T>* ModelParams<T>::find(std::string_view name) {
  for (auto& [n, t] : named_) {
    if (n == name) return &t;
  }
  return nullptr;
}

template <typename T>
const Tensor<T>* ModelParams<T>::find(std::string_view name) const {
  return const_cast<ModelParams*>(this)->find(name);
}

template <typename T>
Tensor<T>& ModelParams<T>::at(std::string_view name) {
  if (auto* t = find(name)) return *t;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

template <typename T>
std::size_t ModelParams<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_) n += t.numel();
  return n;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto& [name, t] : named_) t.zero_grad();
}

template <typename T>
Tensor<T> embed(const TokenBatch& batch, const ModelParams<T>& params, const ModelConfig& cfg) {
  const std::size_t B = batch.batch_size, l = batch.seq_len, d = cfg.hidden;
  if (B == 0 || l == 0) throw ShapeError("embed: empty batch");
  if (l > cfg.max_len) {
    throw std::out_of_range("embed: sequence length " + std::to_string(l) + " exceeds max_len " + std::to_string(cfg.max_len));
  }
  if (batch.input_ids.size() != B * l || batch.segment_ids.size() != B * l) {
    throw ShapeError("embed: batch arrays do not match " + std::to_string(B) + " x " + std::to_string(l));
  }
  std::vector<std::int32_t> positions(B * l);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int32_t>(i % l);
  auto sum3 = add(add(embedding(params.word, batch.input_ids), embedding(params.position, positions)),
                  embedding(params.type, batch.segment_ids));
  auto normed = layer_norm(sum3, params.embed_ln.gamma, params.embed_ln.beta, static_cast<T>(cfg.layer_norm_eps));
  return reshape(normed, {B, l, d});
}

template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, const BlockParams<T>& block, const TokenBatch& batch,
                        const ModelConfig& cfg, Rng* rng) {
  const T eps = static_cast<T>(cfg.layer_norm_eps);
  Tensor<T> mixed;
  if (block.kind == MixerKind::Attention) {
    if (cfg.dropmask.enabled && batch.any_masked()) {
      mixed = dropmask_self_attention(x, block.attention, batch.padding_mask, batch.mask_positions, cfg.dropmask);
    } else {
      mixed = multi_head_self_attention(x, block.attention, batch.padding_mask);
    }
  } else {
    mixed = pooling_mixer(x, block.pooling, batch.padding_mask, cfg.ablation);
  }
  auto h = layer_norm(add(x, maybe_dropout(mixed, cfg, rng)), block.mixer_ln.gamma, block.mixer_ln.beta, eps);
  auto f = linear(gelu(linear(h, block.ffn_in_w, block.ffn_in_b)), block.ffn_out_w, block.ffn_out_b);
  return layer_norm(add(h, maybe_dropout(f, cfg, rng)), block.ffn_ln.gamma, block.ffn_ln.beta, eps);
}

template <typename T>
Tensor<T> encoder_forward(const TokenBatch& batch, const ModelParams<T>& params, const ModelConfig& cfg,
                          std::vector<Tensor<T>>* per_layer, Rng* rng) {
  if (params.layers.size() != cfg.plan.size()) throw ShapeError("encoder_forward: parameters do not match the layer plan");
  Tensor<T> h = maybe_dropout(embed(batch, params, cfg), cfg, rng);
  for (const auto& block : params.layers) {
    h = block_forward(h, block, batch, cfg, rng);
    if (per_layer) per_layer->push_back(h);
  }
  return h;
}

template <typename T>
Tensor<T> mlm_loss(const Tensor<T>& hidden, const ModelParams<T>& params, std::span<const std::int32_t> labels,
                   const ModelConfig& cfg) {
  const std::size_t rows_total = hidden.numel() / hidden.shape().back();
  if (labels.size() != rows_total) {
    throw ShapeError("mlm_loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(rows_total) + " positions");
  }
  std::vector<std::size_t> rows;
  std::vector<std::int32_t> kept;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kIgnoreLabel) continue;
    rows.push_back(i);
    kept.push_back(labels[i]);
  }
  if (rows.empty()) throw std::invalid_argument("mlm_loss: no labeled positions");
  auto x = gather_rows(hidden, rows);
  x = gelu(linear(x, params.mlm_transform_w, params.mlm_transform_b));
  x = layer_norm(x, params.mlm_transform_ln.gamma, params.mlm_transform_ln.beta, static_cast<T>(cfg.layer_norm_eps));
  return cross_entropy(linear_bt(x, params.word, params.mlm_decoder_b), kept);
}

template <typename T>
Tensor<T> sso_loss(const Tensor<T>& hidden, const ModelParams<T>& params, std::span<const std::int32_t> labels) {
  if (hidden.rank() != 3) throw ShapeError("sso_loss: expected [B x l x d], got " + shape_str(hidden.shape()));
  const std::size_t B = hidden.dim(0), l = hidden.dim(1);
  if (labels.size() != B) throw ShapeError("sso_loss: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(B));
  for (std::int32_t y : labels) {
    if (y < 0 || y >= static_cast<std::int32_t>(kSsoClasses)) {
      throw std::out_of_range("sso_loss: label " + std::to_string(y) + " outside {0, 1, 2}");
    }
  }
  std::vector<std::size_t> rows(B);
  for (std::size_t b = 0; b < B; ++b) rows[b] = b * l;
  return cross_entropy(linear(gather_rows(hidden, rows), params.sso_w, params.sso_b), labels);
}

template <typename T>
Losses<T> pretraining_losses(const TokenBatch& batch, const ModelParams<T>& params, const ModelConfig& cfg, Rng* rng) {
  auto hidden = encoder_forward<T>(batch, params, cfg, nullptr, rng);
  Losses<T> out;
  const bool any_label = std::any_of(batch.mlm_labels.begin(), batch.mlm_labels.end(),
                                     [](std::int32_t y) { return y != kIgnoreLabel; });
  out.mlm = any_label ? mlm_loss(hidden, params, batch.mlm_labels, cfg) : Tensor<T>::scalar(T(0));
  out.sso = sso_loss(hidden, params, batch.sso_labels);
  out.total = add(out.mlm, out.sso);
  return out;
}

#define HYBRIDBERT_INSTANTIATE(T)                                                                              \
  template class ModelParams<T>;                                                                               \
  template Tensor<T> embed(const TokenBatch&, const ModelParams<T>&, const ModelConfig&);                      \
  template Tensor<T> encoder_forward(const TokenBatch&, const ModelParams<T>&, const ModelConfig&,             \
                                     std::vector<Tensor<T>>*, Rng*);                                           \
  template Tensor<T> block_forward(const Tensor<T>&, const BlockParams<T>&, const TokenBatch&,                 \
                                   const ModelConfig&, Rng*);                                                  \
  template Tensor<T> mlm_loss(const Tensor<T>&, const ModelParams<T>&, std::span<const std::int32_t>,          \
                              const ModelConfig&);                                                             \
  template Tensor<T> sso_loss(const Tensor<T>&, const ModelParams<T>&, std::span<const std::int32_t>);         \
  template Losses<T> pretraining_losses(const TokenBatch&, const ModelParams<T>&, const ModelConfig&, Rng*);

HYBRIDBERT_INSTANTIATE(float)
HYBRIDBERT_INSTANTIATE(double)

#undef HYBRIDBERT_INSTANTIATE

}  // namespace hybridbert
