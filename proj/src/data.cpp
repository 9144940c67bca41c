// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0

#include "hybridbert/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <cctype>
#include <sstream>
#include <stdexcept>

#include "hybridbert/errors.hpp"

namespace hybridbert {

namespace {

constexpr std::array<std::string_view, kNumReserved> kReservedNames = {"[PAD]", "[CLS]", "[SEP]",
                                                                      "[MASK]", "[UNK]"};

bool is_reserved_name(std::string_view tok) {
  return std::find(kReservedNames.begin(), kReservedNames.end(), tok) != kReservedNames.end();
}

template <typename F>
void for_each_token(std::string_view line, F&& fn) {
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) fn(line.substr(start, i - start));
  }
}

bool is_blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

}  // namespace

void Vocab::add(std::string token) {
  const auto id = static_cast<std::int32_t>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
}

Vocab Vocab::build(std::istream& corpus, std::size_t max_size) {
  if (max_size <= static_cast<std::size_t>(kNumReserved)) {
    throw std::invalid_argument("vocab max_size must exceed the 5 reserved ids");
  }
  struct Count {
    std::size_t n = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Count> counts;
  std::size_t order = 0;
  std::string line;
  while (std::getline(corpus, line)) {
    for_each_token(line, [&](std::string_view tok) {
      if (is_reserved_name(tok)) return;
      auto [it, inserted] = counts.try_emplace(std::string(tok));
      if (inserted) it->second.first = order++;
      ++it->second.n;
    });
  }
  if (counts.empty()) throw DataError("cannot build a vocabulary from an empty corpus");

  std::vector<std::pair<std::string, Count>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.n != b.second.n) return a.second.n > b.second.n;
    return a.second.first < b.second.first;
  });
  Vocab v;
  for (auto name : kReservedNames) v.add(std::string(name));
  const std::size_t keep = std::min(ranked.size(), max_size - kNumReserved);
  for (std::size_t i = 0; i < keep; ++i) v.add(std::move(ranked[i].first));
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocab file " + path.string());
  Vocab v;
  for (auto name : kReservedNames) v.add(std::string(name));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || is_reserved_name(line) || v.index_.count(line)) {
      throw DataError("vocab file " + path.string() + " line " + std::to_string(lineno) +
                      ": empty, reserved or duplicate token");
    }
    v.add(line);
  }
  return v;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocab file " + path.string());
  for (std::size_t i = kNumReserved; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

std::int32_t Vocab::id(std::string_view token) const {
  if (is_reserved_name(token)) return kUnkId;
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }

std::vector<std::int32_t> Vocab::encode(std::string_view line) const {
  std::vector<std::int32_t> ids;
  for_each_token(line, [&](std::string_view tok) { ids.push_back(id(tok)); });
  return ids;
}

void CorruptionConfig::validate() const {
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw std::invalid_argument("mask_rate must lie in (0, 1)");
  if (frac_mask < 0.0 || frac_random < 0.0 || frac_keep < 0.0) {
    throw std::invalid_argument("corruption fractions must be non-negative");
  }
  if (std::abs(frac_mask + frac_random + frac_keep - 1.0) > 1e-9) {
    throw std::invalid_argument("corruption fractions must sum to 1");
  }
}

CorruptedSequence corrupt_mlm(std::span<const std::int32_t> ids, const CorruptionConfig& cfg,
                              std::size_t vocab_size, Rng& rng) {
  if (vocab_size <= static_cast<std::size_t>(kNumReserved)) {
    throw std::invalid_argument("corrupt_mlm: vocabulary has no non-reserved tokens");
  }
  CorruptedSequence out;
  out.ids.assign(ids.begin(), ids.end());
  out.labels.assign(ids.size(), kIgnoreLabel);
  out.mask_positions.assign(ids.size(), 0);
  const std::uint64_t n_words = vocab_size - kNumReserved;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::int32_t id = ids[i];
    if (id == kPadId || id == kClsId || id == kSepId) continue;
    if (rng.uniform() >= cfg.mask_rate) continue;
    out.labels[i] = id;
    const double u = rng.uniform();
    if (u < cfg.frac_mask) {
      out.ids[i] = kMaskId;
      out.mask_positions[i] = 1;
    } else if (u < cfg.frac_mask + cfg.frac_random) {
      out.ids[i] = kNumReserved + static_cast<std::int32_t>(rng.below(n_words));
    }
  }
  return out;
}

DocStore::DocStore(std::vector<Document> docs) : docs_(std::move(docs)) {
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    if (docs_[i].sentences.size() >= 2) pair_docs_.push_back(i);
  }
}

DocStore DocStore::read(std::istream& text, const Vocab& vocab) {
  std::vector<Document> docs;
  Document current;
  std::string line;
  while (std::getline(text, line)) {
    if (is_blank(line)) {
      if (!current.sentences.empty()) docs.push_back(std::move(current));
      current = Document{};
      continue;
    }
    current.sentences.push_back(vocab.encode(line));
  }
  if (!current.sentences.empty()) docs.push_back(std::move(current));
  return DocStore(std::move(docs));
}

DocStore DocStore::load(const std::filesystem::path& path, const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus " + path.string());
  return read(in, vocab);
}

std::pair<DocStore, DocStore> DocStore::split_every(std::size_t stride) const {
  if (stride < 2) throw std::invalid_argument("split_every: stride must be at least 2");
  std::vector<Document> kept, held;
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    ((i + 1) % stride == 0 ? held : kept).push_back(docs_[i]);
  }
  return {DocStore(std::move(kept)), DocStore(std::move(held))};
}

SsoPair make_sso_example(const DocStore& docs, Rng& rng) {
  const auto& eligible = docs.pair_documents();
  if (eligible.size() < 2) {
    throw DataError("SSO sampling needs at least two documents with two or more sentences");
  }
  const auto label = static_cast<SsoLabel>(rng.below(3));
  const std::size_t d = eligible[rng.below(eligible.size())];
  const auto& sents = docs.documents()[d].sentences;
  const std::size_t i = rng.below(sents.size() - 1);
  switch (label) {
    case SsoLabel::kFollows:
      return {sents[i], sents[i + 1], label};
    case SsoLabel::kPrecedes:
      return {sents[i + 1], sents[i], label};
    case SsoLabel::kOtherDocument: {
      std::size_t other = rng.below(docs.size() - 1);
      if (other >= d) ++other;
      const auto& other_sents = docs.documents()[other].sentences;
      return {sents[i], other_sents[rng.below(other_sents.size())], label};
    }
  }
  throw std::logic_error("unreachable SSO label");
}

PackedExample pack_pair(const SsoPair& pair, std::size_t max_len) {
  if (max_len < 5) throw std::invalid_argument("pack_pair: max_len must be at least 5");
  std::size_t len_a = pair.first.size(), len_b = pair.second.size();
  while (len_a + len_b + 3 > max_len) {
    if (len_a >= len_b) {
      --len_a;
    } else {
      --len_b;
    }
  }
  PackedExample ex;
  ex.ids.reserve(len_a + len_b + 3);
  ex.ids.push_back(kClsId);
  ex.ids.insert(ex.ids.end(), pair.first.begin(), pair.first.begin() + static_cast<std::ptrdiff_t>(len_a));
  ex.ids.push_back(kSepId);
  ex.segment_ids.assign(ex.ids.size(), 0);
  ex.ids.insert(ex.ids.end(), pair.second.begin(), pair.second.begin() + static_cast<std::ptrdiff_t>(len_b));
  ex.ids.push_back(kSepId);
  ex.segment_ids.resize(ex.ids.size(), 1);
  ex.sso_label = static_cast<std::int32_t>(pair.label);
  return ex;
}

Mask TokenBatch::valid_mask() const {
  Mask v(padding_mask.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = padding_mask[i] ? 0 : 1;
  return v;
}

bool TokenBatch::any_masked() const {
  return std::any_of(mask_positions.begin(), mask_positions.end(), [](std::uint8_t m) { return m != 0; });
}

TokenBatch collate_batch(std::span<const PackedExample> examples, std::size_t max_len,
                         const CorruptionConfig& cfg, std::size_t vocab_size, Rng& rng) {
  if (examples.empty()) throw std::invalid_argument("collate_batch: no examples");
  TokenBatch batch;
  batch.batch_size = examples.size();
  std::size_t longest = 0;
  for (const auto& ex : examples) longest = std::max(longest, ex.ids.size());
  if (longest > max_len) {
    throw DataError("collate_batch: example of length " + std::to_string(longest) + " exceeds max_len " +
                    std::to_string(max_len));
  }
  const std::size_t width = longest;
  batch.seq_len = width;
  const std::size_t total = examples.size() * width;
  batch.input_ids.assign(total, kPadId);
  batch.segment_ids.assign(total, 0);
  batch.padding_mask.assign(total, 1);
  batch.mlm_labels.assign(total, kIgnoreLabel);
  batch.mask_positions.assign(total, 0);
  batch.sso_labels.reserve(examples.size());
  for (std::size_t b = 0; b < examples.size(); ++b) {
    const auto& ex = examples[b];
    if (ex.segment_ids.size() != ex.ids.size()) throw DataError("collate_batch: segment ids length mismatch");
    auto corrupted = corrupt_mlm(ex.ids, cfg, vocab_size, rng);
    const std::size_t off = b * width;
    std::copy(corrupted.ids.begin(), corrupted.ids.end(), batch.input_ids.begin() + off);
    std::copy(ex.segment_ids.begin(), ex.segment_ids.end(), batch.segment_ids.begin() + off);
    std::copy(corrupted.labels.begin(), corrupted.labels.end(), batch.mlm_labels.begin() + off);
    std::copy(corrupted.mask_positions.begin(), corrupted.mask_positions.end(),
              batch.mask_positions.begin() + off);
    std::fill_n(batch.padding_mask.begin() + off, ex.ids.size(), 0);
    batch.sso_labels.push_back(ex.sso_label);
  }
  return batch;
}

BatchSource::BatchSource(const DocStore& docs, std::size_t vocab_size, std::size_t batch_size,
                         std::size_t max_len, CorruptionConfig cfg)
    : docs_(&docs), vocab_size_(vocab_size), batch_size_(batch_size), max_len_(max_len), cfg_(cfg) {
  cfg_.validate();
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
}

TokenBatch BatchSource::batch(std::uint64_t index) const {
  Rng rng = Rng::derive(cfg_.seed, index);
  std::vector<PackedExample> examples;
  examples.reserve(batch_size_);
  for (std::size_t i = 0; i < batch_size_; ++i) examples.push_back(pack_pair(make_sso_example(*docs_, rng), max_len_));
  return collate_batch(examples, max_len_, cfg_, vocab_size_, rng);
}

namespace {

std::string pseudo_word(std::size_t i) {
  static constexpr std::array<std::string_view, 12> kSyllables = {"ba", "ko", "mi", "tu", "re", "sa",
                                                                  "ne", "di", "lo", "vu", "pe", "ga"};
  constexpr std::size_t k = kSyllables.size();
  std::string w;
  if (i < k * k) {
    w += kSyllables[i / k];
    w += kSyllables[i % k];
    return w;
  }
  i -= k * k;
  w += kSyllables[(i / (k * k)) % k];
  w += kSyllables[(i / k) % k];
  w += kSyllables[i % k];
  if (i >= k * k * k) w += std::to_string(i / (k * k * k));
  return w;
}

}  // namespace

std::string generate_bigram_corpus(const SyntheticCorpusConfig& cfg) {
  if (cfg.words < cfg.successors + 1 || cfg.successors == 0 || cfg.min_words == 0 ||
      cfg.min_words > cfg.max_words || cfg.min_sentences < 2 || cfg.min_sentences > cfg.max_sentences) {
    throw std::invalid_argument("invalid synthetic corpus configuration");
  }
  Rng rng(cfg.seed);
  std::vector<std::string> words(cfg.words);
  for (std::size_t i = 0; i < cfg.words; ++i) words[i] = pseudo_word(i);

  // Zipf(1) start distribution; successors drawn from it as well.
  std::vector<double> cdf(cfg.words);
  double acc = 0.0;
  for (std::size_t i = 0; i < cfg.words; ++i) cdf[i] = (acc += 1.0 / static_cast<double>(i + 1));
  for (double& c : cdf) c /= acc;
  auto zipf = [&]() {
    const double u = rng.uniform();
    return static_cast<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
  };
  std::vector<std::vector<std::size_t>> next(cfg.words);
  for (std::size_t w = 0; w < cfg.words; ++w) {
    while (next[w].size() < cfg.successors) {
      const std::size_t s = zipf();
      if (s != w && std::find(next[w].begin(), next[w].end(), s) == next[w].end()) next[w].push_back(s);
    }
  }
  // Successor weights halve with rank.
  std::vector<double> succ_cdf(cfg.successors);
  acc = 0.0;
  for (std::size_t j = 0; j < cfg.successors; ++j) succ_cdf[j] = (acc += std::ldexp(1.0, -static_cast<int>(j)));
  for (double& c : succ_cdf) c /= acc;

  std::ostringstream out;
  for (std::size_t d = 0; d < cfg.documents; ++d) {
    if (d) out << '\n';
    std::size_t w = zipf();
    const std::size_t n_sent = cfg.min_sentences + rng.below(cfg.max_sentences - cfg.min_sentences + 1);
    for (std::size_t s = 0; s < n_sent; ++s) {
      const std::size_t n_words = cfg.min_words + rng.below(cfg.max_words - cfg.min_words + 1);
      for (std::size_t k = 0; k < n_words; ++k) {
        if (k) out << ' ';
        out << words[w];
        const double u = rng.uniform();
        const auto j = static_cast<std::size_t>(std::lower_bound(succ_cdf.begin(), succ_cdf.end(), u) -
                                                succ_cdf.begin());
        w = next[w][std::min(j, cfg.successors - 1)];
      }
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace hybridbert
