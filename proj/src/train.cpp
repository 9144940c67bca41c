// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0

#include "hybridbert/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <unordered_map>

#include "json.hpp"

#include "hybridbert/errors.hpp"

namespace hybridbert {

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

template <typename T>
std::vector<std::uint32_t> dims_of(const Shape& shape) {
  return std::vector<std::uint32_t>(shape.begin(), shape.end());
}

template <typename T>
ArrayRecord record_of(std::string name, std::span<const T> values, const Shape& shape) {
  return ArrayRecord::from_values(std::move(name), values, dims_of<T>(shape));
}

using RecordIndex = std::unordered_map<std::string_view, const ArrayRecord*>;

RecordIndex index_records(const std::vector<ArrayRecord>& arrays) {
  RecordIndex idx;
  for (const auto& a : arrays) idx.emplace(a.name, &a);
  return idx;
}

const ArrayRecord& require(const RecordIndex& idx, const std::string& name, const Shape& shape) {
  auto it = idx.find(name);
  if (it == idx.end()) throw CheckpointError("checkpoint is missing array '" + name + "'");
  const ArrayRecord& a = *it->second;
  if (a.dims != std::vector<std::uint32_t>(shape.begin(), shape.end())) {
    throw CheckpointError("array '" + name + "' has shape " + shape_str(Shape(a.dims.begin(), a.dims.end())) +
                          ", expected " + shape_str(shape));
  }
  return a;
}

std::size_t count_valid(const TokenBatch& b) {
  return static_cast<std::size_t>(std::count(b.padding_mask.begin(), b.padding_mask.end(), 0));
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr", "must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2", "must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps", "must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be non-negative");
  if (total_steps == 0) throw ConfigError("total_steps", "must be positive");
  if (warmup_steps > total_steps) throw ConfigError("warmup_steps", "exceeds total_steps");
  if (batch_size == 0) throw ConfigError("batch_size", "must be positive");
  if (!(grad_clip_norm >= 0.0)) throw ConfigError("grad_clip_norm", "must be non-negative");
  if (eval_batches == 0) throw ConfigError("eval_batches", "must be positive");
  if (eval_shard_stride < 2) throw ConfigError("eval_shard_stride", "must be at least 2");
}

double lr_schedule(std::size_t step, const TrainConfig& cfg) {
  if (step == 0) throw std::invalid_argument("lr_schedule: steps start at 1");
  const auto s = static_cast<double>(step);
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) return cfg.lr * s / static_cast<double>(cfg.warmup_steps);
  if (step >= cfg.total_steps) return 0.0;
  const double span = static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return cfg.lr * (static_cast<double>(cfg.total_steps) - s) / span;
}

bool applies_weight_decay(std::string_view name) {
  return !(ends_with(name, ".bias") || ends_with(name, ".gamma") || ends_with(name, ".beta"));
}

template <typename T>
void AdamW<T>::reset_state(const std::vector<Named>& params) {
  m_.clear();
  v_.clear();
  for (const auto& [name, t] : params) {
    m_.emplace_back(t.numel(), T(0));
    v_.emplace_back(t.numel(), T(0));
  }
}

template <typename T>
double AdamW<T>::step(const std::vector<Named>& params, std::size_t t, double lr) {
  if (t == 0) throw std::invalid_argument("AdamW: steps start at 1");
  if (m_.size() != params.size()) reset_state(params);
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) {
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in parameter '" + name + "'");
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  const double norm = std::sqrt(sq);
  const double clip = (cfg_.grad_clip_norm > 0.0 && norm > cfg_.grad_clip_norm) ? cfg_.grad_clip_norm / norm : 1.0;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, tensor] = params[i];
    if (!tensor.has_grad()) continue;
    Tensor<T> p = tensor;
    auto w = p.data();
    auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.size() != w.size()) throw ShapeError("AdamW: parameter '" + name + "' changed size");
    const double decay = applies_weight_decay(name) ? lr * cfg_.weight_decay : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = static_cast<double>(g[j]) * clip;
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
      const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      double wj = static_cast<double>(w[j]);
      wj -= decay * wj;
      wj -= lr * (mj / c1) / (std::sqrt(vj / c2) + cfg_.eps);
      w[j] = static_cast<T>(wj);
    }
  }
  return norm;
}

std::string to_json_line(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["loss_total"] = r.loss_total;
  j["loss_mlm"] = r.loss_mlm;
  j["loss_sso"] = r.loss_sso;
  j["lr"] = r.lr;
  j["tokens_per_sec"] = r.tokens_per_sec;
  j["peak_resident_estimate"] = r.peak_resident_estimate;
  return j.dump();
}

std::string to_json_line(const EvalResult& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["loss_total"] = r.loss_total;
  j["loss_mlm"] = r.loss_mlm;
  j["loss_sso"] = r.loss_sso;
  j["batches"] = r.batches;
  return j.dump();
}

template <typename T>
Trainer<T>::Trainer(ModelConfig model_cfg, TrainConfig train_cfg, CorruptionConfig corruption,
                    const DocStore& train_docs, const DocStore& eval_docs)
    : model_cfg_(std::move(model_cfg)),
      train_cfg_(train_cfg),
      eval_corruption_([&] {
        CorruptionConfig c = corruption;
        c.seed = train_cfg.eval_seed;
        return c;
      }()),
      train_source_(train_docs, model_cfg_.vocab, train_cfg.batch_size, model_cfg_.max_len, corruption),
      eval_source_(eval_docs, model_cfg_.vocab, train_cfg.batch_size, model_cfg_.max_len, eval_corruption_),
      params_([&] {
        model_cfg_.validate();
        train_cfg_.validate();
        Rng rng(model_cfg_.seed);
        return ModelParams<T>::init(model_cfg_, rng);
      }()),
      optimizer_(train_cfg_) {
  optimizer_.reset_state(params_.named());
}

template <typename T>
MetricsRecord Trainer<T>::step() {
  const std::size_t t = step_ + 1;
  const auto start = std::chrono::steady_clock::now();
  const TokenBatch batch = train_source_.batch(t);
  Rng dropout_rng = Rng::derive(train_cfg_.seed ^ 0x5bd1e995ULL, t);
  Tape<T> tape;
  Losses<T> losses;
  {
    TapeScope<T> scope(tape);
    losses = pretraining_losses(batch, params_, model_cfg_, model_cfg_.dropout > 0 ? &dropout_rng : nullptr);
  }
  MetricsRecord rec;
  rec.step = t;
  rec.loss_total = static_cast<double>(losses.total.item());
  rec.loss_mlm = static_cast<double>(losses.mlm.item());
  rec.loss_sso = static_cast<double>(losses.sso.item());
  if (!std::isfinite(rec.loss_total)) {
    throw NumericError("non-finite loss at step " + std::to_string(t));
  }
  params_.zero_grad();
  tape.backward(losses.total);
  rec.lr = lr_schedule(t, train_cfg_);
  optimizer_.step(params_.named(), t, rec.lr);
  const std::size_t elements = 4 * params_.element_count() + tape.recorded_elements();
  rec.peak_resident_estimate = elements * sizeof(T);
  step_ = t;
  if (train_cfg_.timing_metrics) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rec.tokens_per_sec = secs > 0 ? static_cast<double>(count_valid(batch)) / secs : 0.0;
  }
  return rec;
}

template <typename T>
EvalResult Trainer<T>::evaluate() const {
  NoGradScope<T> no_grad;
  EvalResult r;
  r.step = step_;
  for (std::size_t i = 0; i < train_cfg_.eval_batches; ++i) {
    const auto losses = pretraining_losses(eval_source_.batch(i), params_, model_cfg_);
    r.loss_mlm += static_cast<double>(losses.mlm.item());
    r.loss_sso += static_cast<double>(losses.sso.item());
  }
  r.batches = train_cfg_.eval_batches;
  r.loss_mlm /= static_cast<double>(r.batches);
  r.loss_sso /= static_cast<double>(r.batches);
  r.loss_total = r.loss_mlm + r.loss_sso;
  return r;
}

template <typename T>
std::vector<ArrayRecord> param_arrays(const ModelParams<T>& params) {
  std::vector<ArrayRecord> out;
  for (const auto& [name, t] : params.named()) out.push_back(record_of<T>(name, t.data(), t.shape()));
  return out;
}

template <typename T>
void load_param_arrays(ModelParams<T>& params, const std::vector<ArrayRecord>& arrays) {
  const auto idx = index_records(arrays);
  std::vector<const ArrayRecord*> found;
  for (const auto& [name, t] : params.named()) {
    const auto& a = require(idx, name, t.shape());
    if (a.dtype != (dtype_traits<T>::dtype == DType::f32 ? ArrayDType::f32 : ArrayDType::f64)) {
      throw CheckpointError("array '" + name + "' has dtype " + dtype_name(a.dtype) + ", expected " + dtype_traits<T>::name);
    }
    found.push_back(&a);
  }
  for (std::size_t i = 0; i < found.size(); ++i) {
    Tensor<T> t = params.named()[i].second;
    found[i]->copy_to(t.data());
  }
}

template <typename T>
std::vector<ArrayRecord> Trainer<T>::checkpoint_arrays() const {
  auto out = param_arrays(params_);
  auto& opt = const_cast<AdamW<T>&>(optimizer_);
  const auto& named = params_.named();
  for (std::size_t i = 0; i < named.size(); ++i) {
    out.push_back(record_of<T>("adam.m." + named[i].first, opt.first_moment(i), named[i].second.shape()));
    out.push_back(record_of<T>("adam.v." + named[i].first, opt.second_moment(i), named[i].second.shape()));
  }
  const std::int64_t step = static_cast<std::int64_t>(step_);
  out.push_back(ArrayRecord::from_values("meta.step", std::span<const std::int64_t>(&step, 1), {1}));
  return out;
}

template <typename T>
void Trainer<T>::save(const std::filesystem::path& path) const {
  write_checkpoint(path, checkpoint_arrays());
}

template <typename T>
void Trainer<T>::restore(const std::vector<ArrayRecord>& arrays) {
  // Stage into copies so a bad checkpoint leaves this trainer untouched.
  ModelParams<T> staged = params_.clone();
  load_param_arrays(staged, arrays);
  const auto idx = index_records(arrays);
  const auto& named = params_.named();
  std::vector<std::vector<T>> m(named.size()), v(named.size());
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& shape = named[i].second.shape();
    m[i].resize(shape_numel(shape));
    v[i].resize(shape_numel(shape));
    require(idx, "adam.m." + named[i].first, shape).copy_to(std::span<T>(m[i]));
    require(idx, "adam.v." + named[i].first, shape).copy_to(std::span<T>(v[i]));
  }
  std::int64_t step = 0;
  require(idx, "meta.step", {1}).copy_to(std::span<std::int64_t>(&step, 1));
  if (step < 0) throw CheckpointError("negative step in checkpoint");

  for (std::size_t i = 0; i < named.size(); ++i) {
    Tensor<T> dst = named[i].second;
    const auto src = staged.named()[i].second.data();
    std::copy(src.begin(), src.end(), dst.data().begin());
    dst.zero_grad();
    optimizer_.first_moment(i) = std::move(m[i]);
    optimizer_.second_moment(i) = std::move(v[i]);
  }
  step_ = static_cast<std::size_t>(step);
}

#define HYBRIDBERT_INSTANTIATE(T)                                                            \
  template class AdamW<T>;                                                                   \
  template class Trainer<T>;                                                                 \
  template std::vector<ArrayRecord> param_arrays(const ModelParams<T>&);                     \
  template void load_param_arrays(ModelParams<T>&, const std::vector<ArrayRecord>&);

HYBRIDBERT_INSTANTIATE(float)
HYBRIDBERT_INSTANTIATE(double)

#undef HYBRIDBERT_INSTANTIATE

}  // namespace hybridbert
