// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "hybridbert/errors.hpp"
#include "hybridbert/gradient_suite.hpp"
#include "hybridbert/model.hpp"

using namespace hybridbert;

namespace {

std::string plan_letters(const LayerPlan& p) {
  std::string s;
  for (MixerKind k : p.layers) s += static_cast<char>(k);
  return s;
}

ModelConfig small_config(const std::string& plan) {
  ModelConfig cfg = gradient_model_config(plan, 40);
  return cfg;
}

// Sequence b of `batch` alone, without its padded tail.
TokenBatch trimmed_row(const TokenBatch& batch, std::size_t b) {
  std::size_t len = 0;
  while (len < batch.seq_len && !batch.padding_mask[b * batch.seq_len + len]) ++len;
  TokenBatch one;
  one.batch_size = 1;
  one.seq_len = len;
  auto take = [&](const auto& src, auto& dst) { dst.assign(src.begin() + b * batch.seq_len, src.begin() + b * batch.seq_len + len); };
  take(batch.input_ids, one.input_ids);
  take(batch.segment_ids, one.segment_ids);
  take(batch.padding_mask, one.padding_mask);
  take(batch.mlm_labels, one.mlm_labels);
  take(batch.mask_positions, one.mask_positions);
  one.sso_labels = {batch.sso_labels[b]};
  return one;
}

}  // namespace

TEST(LayerPlan, ParsesSingleAndTwoRunPlans) {
  EXPECT_EQ(plan_letters(parse_layer_plan("12A")), "AAAAAAAAAAAA");
  EXPECT_EQ(plan_letters(parse_layer_plan("3P")), "PPP");
  EXPECT_EQ(plan_letters(parse_layer_plan("B8A+T4P")), "AAAAAAAAPPPP");
  EXPECT_EQ(plan_letters(parse_layer_plan("B4P+T8A")), "PPPPAAAAAAAA");
  EXPECT_EQ(parse_layer_plan("B8A+T4P").count(MixerKind::Attention), 8u);
}

TEST(LayerPlan, RejectsMalformedPlans) {
  for (const char* bad : {"", "B8X", "8X", "A", "12", "0A", "B0A+T4P", "B8A+", "8A+4P", "B8A+T4P+T1A", "b8a+t4p", "12 A",
                          "-3A", "99999A"}) {
    SCOPED_TRACE(bad);
    EXPECT_THROW(parse_layer_plan(bad), ParseError);
  }
}

TEST(LayerPlan, FormatRoundTrips) {
  for (const char* text : {"12A", "B8A+T4P", "B4P+T8A", "B4A+T8P", "B8P+T4A", "12P", "2A", "B1A+T1P"}) {
    EXPECT_EQ(format_layer_plan(parse_layer_plan(text)), text);
  }
  EXPECT_EQ(format_layer_plan(parse_layer_plan("B2A+T3A")), "5A");
  LayerPlan three{{MixerKind::Attention, MixerKind::Pooling, MixerKind::Attention}};
  EXPECT_EQ(format_layer_plan(three), "APA");
}

TEST(ModelConfig, ValidationNamesTheKey) {
  ModelConfig cfg;
  cfg.num_layers = 3;
  try {
    cfg.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "num_layers");
  }
  cfg = ModelConfig{};
  cfg.heads = 3;
  try {
    cfg.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "heads");
  }
}

TEST(ModelParams, InitFollowsConventions) {
  ModelConfig cfg = small_config("B1A+T1P");
  Rng rng(1);
  auto p = ModelParams<double>::init(cfg, rng);
  std::set<std::string> names;
  std::size_t total = 0;
  for (const auto& [name, t] : p.named()) {
    EXPECT_TRUE(names.insert(name).second) << name;
    total += t.numel();
    for (double v : t.data()) {
      if (name.ends_with(".gamma")) EXPECT_EQ(v, 1.0);
      else if (name.ends_with(".bias") || name.ends_with(".beta")) EXPECT_EQ(v, 0.0);
      else EXPECT_LE(std::abs(v), 0.04 + 1e-15);
    }
  }
  EXPECT_EQ(total, p.element_count());
  EXPECT_NE(p.find("layers.0.attention.query.weight"), nullptr);
  EXPECT_NE(p.find("layers.1.pooling.local.weight"), nullptr);
  EXPECT_EQ(p.find("layers.1.attention.query.weight"), nullptr);
  EXPECT_TRUE(p.at("embeddings.word").same_node(p.word));
  EXPECT_THROW(p.at("missing"), std::out_of_range);
}

TEST(ModelParams, CloneIsIndependent) {
  ModelConfig cfg = small_config("2P");
  Rng rng(2);
  auto p = ModelParams<double>::init(cfg, rng);
  auto q = p.clone();
  q.word.data()[0] += 1.0;
  EXPECT_NE(p.word.data()[0], q.word.data()[0]);
  EXPECT_EQ(p.named().size(), q.named().size());
}

TEST(Model, ZeroParametersGiveUniformLosses) {
  ModelConfig cfg = small_config("B1A+T1P");
  auto p = ModelParams<double>::zeros(cfg);
  Rng rng(3);
  auto batch = random_token_batch(2, 12, cfg.vocab, rng);
  auto losses = pretraining_losses(batch, p, cfg);
  EXPECT_NEAR(losses.mlm.item(), std::log(static_cast<double>(cfg.vocab)), 1e-12);
  EXPECT_NEAR(losses.sso.item(), std::log(3.0), 1e-12);
}

TEST(Model, TotalLossIsSumOfParts) {
  for (const char* plan : {"2A", "2P", "B1A+T1P"}) {
    ModelConfig cfg = small_config(plan);
    Rng rng(4);
    auto p = ModelParams<float>::init(cfg, rng);
    auto batch = random_token_batch(3, 14, cfg.vocab, rng);
    auto l = pretraining_losses(batch, p, cfg);
    EXPECT_EQ(l.total.item(), l.mlm.item() + l.sso.item());
  }
}

TEST(Model, BatchWithoutLabelsHasZeroMlmLoss) {
  ModelConfig cfg = small_config("2A");
  Rng rng(5);
  auto p = ModelParams<double>::init(cfg, rng);
  auto batch = random_token_batch(2, 8, cfg.vocab, rng);
  std::fill(batch.mlm_labels.begin(), batch.mlm_labels.end(), kIgnoreLabel);
  auto l = pretraining_losses(batch, p, cfg);
  EXPECT_EQ(l.mlm.item(), 0.0);
  EXPECT_EQ(l.total.item(), l.sso.item());
  auto hidden = encoder_forward<double>(batch, p, cfg);
  EXPECT_THROW(mlm_loss(hidden, p, batch.mlm_labels, cfg), std::invalid_argument);
}

TEST(Model, ForwardShapesAndPerLayerOutputs) {
  ModelConfig cfg = small_config("B1P+T1A");
  Rng rng(6);
  auto p = ModelParams<double>::init(cfg, rng);
  auto batch = random_token_batch(2, 10, cfg.vocab, rng);
  std::vector<Tensor<double>> per_layer;
  auto h = encoder_forward<double>(batch, p, cfg, &per_layer);
  EXPECT_EQ(h.shape(), (Shape{2, 10, cfg.hidden}));
  ASSERT_EQ(per_layer.size(), 2u);
  EXPECT_TRUE(per_layer[1].same_node(h));
  auto too_long = random_token_batch(1, cfg.max_len + 1, cfg.vocab, rng);
  EXPECT_THROW(encoder_forward<double>(too_long, p, cfg), std::out_of_range);
}

TEST(Model, PaddingDoesNotChangeValidPositions) {
  for (const char* plan : {"2A", "2P", "B1A+T1P"}) {
    SCOPED_TRACE(plan);
    ModelConfig cfg = small_config(plan);
    Rng rng(7);
    auto p = ModelParams<double>::init(cfg, rng);
    auto batch = random_token_batch(2, 12, cfg.vocab, rng);  // second row has a padded tail
    auto full = encoder_forward<double>(batch, p, cfg);
    auto one = trimmed_row(batch, 1);
    ASSERT_LT(one.seq_len, batch.seq_len);
    auto alone = encoder_forward<double>(one, p, cfg);
    const std::size_t d = cfg.hidden;
    for (std::size_t i = 0; i < one.seq_len * d; ++i) {
      EXPECT_NEAR(full.data()[batch.seq_len * d + i], alone.data()[i], 1e-12);
    }
  }
}

TEST(Model, DropMaskHidesMaskEmbeddingFromUnmaskedPositions) {
  ModelConfig cfg = small_config("2A");
  cfg.dropmask.enabled = true;
  Rng rng(8);
  auto p = ModelParams<double>::init(cfg, rng);
  auto batch = random_token_batch(2, 12, cfg.vocab, rng);
  ASSERT_TRUE(batch.any_masked());
  auto h0 = encoder_forward<double>(batch, p, cfg);
  for (std::size_t c = 0; c < cfg.hidden; ++c) p.word.data()[kMaskId * cfg.hidden + c] = rng.normal();
  auto h1 = encoder_forward<double>(batch, p, cfg);
  double unmasked = 0, masked = 0;
  for (std::size_t r = 0; r < batch.input_ids.size(); ++r) {
    for (std::size_t c = 0; c < cfg.hidden; ++c) {
      const double diff = std::abs(h0.data()[r * cfg.hidden + c] - h1.data()[r * cfg.hidden + c]);
      (batch.mask_positions[r] ? masked : unmasked) = std::max(batch.mask_positions[r] ? masked : unmasked, diff);
    }
  }
  EXPECT_LT(unmasked, 1e-12);
  EXPECT_GT(masked, 1e-6);
}

TEST(Model, SsoLabelsAreChecked) {
  ModelConfig cfg = small_config("2P");
  Rng rng(9);
  auto p = ModelParams<double>::init(cfg, rng);
  auto batch = random_token_batch(2, 8, cfg.vocab, rng);
  batch.sso_labels[0] = 3;
  EXPECT_THROW(pretraining_losses(batch, p, cfg), std::out_of_range);
}
