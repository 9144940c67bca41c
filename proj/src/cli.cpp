// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0

#include "hybridbert/cli.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "hybridbert/bench.hpp"
#include "hybridbert/checkpoint.hpp"
#include "hybridbert/errors.hpp"
#include "hybridbert/gradient_suite.hpp"

namespace hybridbert {
namespace {

namespace fs = std::filesystem;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) throw ConfigError(key, "expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(std::uint64_t v, int) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

struct KeySpec {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define HB_SIZE(field) \
  KeySpec { [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_size(k, v); }, [](const RunConfig& c) { return fmt(c.field); } }
#define HB_DOUBLE(field) \
  KeySpec { [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_double(k, v); }, [](const RunConfig& c) { return fmt(c.field); } }
#define HB_BOOL(field) \
  KeySpec { [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_bool(k, v); }, [](const RunConfig& c) { return fmt(c.field); } }
#define HB_STRING(field) \
  KeySpec { [](RunConfig& c, const std::string&, const std::string& v) { c.field = v; }, [](const RunConfig& c) { return c.field; } }
#define HB_U64(field) \
  KeySpec { [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_u64(k, v); }, [](const RunConfig& c) { return fmt(c.field, 0); } }

const std::vector<std::pair<std::string, KeySpec>>& key_table() {
  static const std::vector<std::pair<std::string, KeySpec>> table = {
      {"corpus", HB_STRING(corpus)},
      {"vocab", HB_STRING(vocab)},
      {"vocab_size", HB_SIZE(vocab_size)},
      {"out_dir", HB_STRING(out_dir)},
      {"checkpoint", HB_STRING(checkpoint)},
      {"resume", HB_STRING(resume)},
      {"checkpoint_every", HB_SIZE(checkpoint_every)},
      {"seed", HB_U64(seed)},
      {"hidden", HB_SIZE(model.hidden)},
      {"heads", HB_SIZE(model.heads)},
      {"ffn", HB_SIZE(model.ffn)},
      {"max_len", HB_SIZE(model.max_len)},
      {"num_layers", HB_SIZE(model.num_layers)},
      {"layer_plan",
       KeySpec{[](RunConfig& c, const std::string& k, const std::string& v) {
                 try {
                   c.model.plan = parse_layer_plan(v);
                 } catch (const ParseError& e) {
                   throw ConfigError(k, e.what());
                 }
               },
               [](const RunConfig& c) { return format_layer_plan(c.model.plan); }}},
      {"dropout", HB_DOUBLE(model.dropout)},
      {"dropmask", HB_BOOL(model.dropmask.enabled)},
      {"dropmask_renormalize", HB_BOOL(model.dropmask.renormalize)},
      {"disable_ga", HB_BOOL(model.ablation.disable_ga)},
      {"disable_lmp", HB_BOOL(model.ablation.disable_lmp)},
      {"layer_norm_eps", HB_DOUBLE(model.layer_norm_eps)},
      {"lr", HB_DOUBLE(train.lr)},
      {"beta1", HB_DOUBLE(train.beta1)},
      {"beta2", HB_DOUBLE(train.beta2)},
      {"adam_eps", HB_DOUBLE(train.eps)},
      {"weight_decay", HB_DOUBLE(train.weight_decay)},
      {"warmup_steps", HB_SIZE(train.warmup_steps)},
      {"total_steps", HB_SIZE(train.total_steps)},
      {"batch_size", HB_SIZE(train.batch_size)},
      {"grad_clip_norm", HB_DOUBLE(train.grad_clip_norm)},
      {"eval_every", HB_SIZE(train.eval_every)},
      {"eval_batches", HB_SIZE(train.eval_batches)},
      {"eval_seed", HB_U64(train.eval_seed)},
      {"eval_shard_stride", HB_SIZE(train.eval_shard_stride)},
      {"dtype",
       KeySpec{[](RunConfig& c, const std::string& k, const std::string& v) {
                 if (v == "f32") c.train.dtype = DType::f32;
                 else if (v == "f64") c.train.dtype = DType::f64;
                 else throw ConfigError(k, "expected f32 or f64, got '" + v + "'");
               },
               [](const RunConfig& c) { return std::string(c.train.dtype == DType::f64 ? "f64" : "f32"); }}},
      {"timing_metrics", HB_BOOL(train.timing_metrics)},
      {"mask_rate", HB_DOUBLE(corruption.mask_rate)},
      {"frac_mask", HB_DOUBLE(corruption.frac_mask)},
      {"frac_random", HB_DOUBLE(corruption.frac_random)},
      {"frac_keep", HB_DOUBLE(corruption.frac_keep)},
      {"bench_lengths", HB_STRING(bench_lengths)},
      {"bench_mixers", HB_STRING(bench_mixers)},
      {"bench_reps", HB_SIZE(bench_reps)},
      {"bench_warmup", HB_SIZE(bench_warmup)},
      {"grad_tolerance", HB_DOUBLE(grad_tolerance)},
  };
  return table;
}

#undef HB_SIZE
#undef HB_DOUBLE
#undef HB_BOOL
#undef HB_STRING
#undef HB_U64

const KeySpec* find_key(const std::string& key) {
  for (const auto& [name, spec] : key_table())
    if (name == key) return &spec;
  return nullptr;
}

std::string kebab(std::string s) {
  std::replace(s.begin(), s.end(), '_', '-');
  return s;
}

std::vector<std::size_t> parse_lengths(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::size_t l = to_size("bench_lengths", trim(item));
    if (l < 3) throw ConfigError("bench_lengths", "lengths must be at least 3");
    out.push_back(l);
  }
  if (out.empty()) throw ConfigError("bench_lengths", "empty list");
  return out;
}

std::vector<MixerKind> parse_mixers(const std::string& text) {
  std::vector<MixerKind> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item == "attention") out.push_back(MixerKind::Attention);
    else if (item == "pooling") out.push_back(MixerKind::Pooling);
    else throw ConfigError("bench_mixers", "unknown mixer '" + item + "'");
  }
  if (out.empty()) throw ConfigError("bench_mixers", "empty list");
  return out;
}

// Options shared by every subcommand; values land in `raw`.
struct Subcommand {
  CLI::App* app = nullptr;
  std::string config_path;
  std::map<std::string, std::string> raw;
  std::vector<std::pair<std::string, CLI::Option*>> options;
};

void add_key_options(Subcommand& sub) {
  sub.app->add_option("--config", sub.config_path, "flat key = value configuration file");
  for (const auto& [name, spec] : key_table()) {
    sub.options.emplace_back(name, sub.app->add_option("--" + kebab(name), sub.raw[name], "config key " + name));
  }
}

RunConfig load_config(const Subcommand& sub, const std::string& fallback_config = {}) {
  RunConfig cfg;
  const std::string path = !sub.config_path.empty() ? sub.config_path : fallback_config;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open " + path);
    apply_config_text(cfg, in, path);
  }
  for (const auto& [name, opt] : sub.options) {
    if (opt->count() == 0) continue;
    set_config_value(cfg, name, sub.raw.at(name));
  }
  finalize_config(cfg);
  return cfg;
}

void require(const std::string& value, const char* key) {
  if (value.empty()) throw ConfigError(key, "required");
}

struct Corpus {
  Vocab vocab;
  DocStore train, held_out;
};

Corpus load_corpus(RunConfig& cfg, bool build_vocab) {
  require(cfg.corpus, "corpus");
  Corpus c;
  if (!cfg.vocab.empty()) {
    c.vocab = Vocab::load(cfg.vocab);
  } else if (build_vocab) {
    std::ifstream in(cfg.corpus);
    if (!in) throw DataError("cannot open corpus " + cfg.corpus);
    c.vocab = Vocab::build(in, cfg.vocab_size);
    fs::create_directories(cfg.out_dir);
    cfg.vocab = (fs::path(cfg.out_dir) / "vocab.txt").string();
    c.vocab.save(cfg.vocab);
  } else {
    throw ConfigError("vocab", "required");
  }
  cfg.model.vocab = c.vocab.size();
  auto docs = DocStore::load(cfg.corpus, c.vocab);
  std::tie(c.train, c.held_out) = docs.split_every(cfg.train.eval_shard_stride);
  return c;
}

template <typename T>
int pretrain_loop(const RunConfig& cfg, const Corpus& corpus, std::ostream& out) {
  Trainer<T> trainer(cfg.model, cfg.train, cfg.corruption, corpus.train, corpus.held_out);
  if (!cfg.resume.empty()) trainer.load(cfg.resume);
  const fs::path dir(cfg.out_dir);
  const auto mode = cfg.resume.empty() ? std::ios::trunc : std::ios::app;
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::out | mode);
  std::ofstream evals(dir / "eval.jsonl", std::ios::out | mode);
  if (!metrics || !evals) throw std::runtime_error("cannot write logs in " + cfg.out_dir);
  while (trainer.steps_done() < cfg.train.total_steps) {
    const MetricsRecord rec = trainer.step();
    metrics << to_json_line(rec) << '\n' << std::flush;
    const std::size_t t = rec.step;
    if (cfg.train.eval_every > 0 && (t % cfg.train.eval_every == 0 || t == cfg.train.total_steps)) {
      const EvalResult ev = trainer.evaluate();
      evals << to_json_line(ev) << '\n' << std::flush;
      out << "step " << t << " loss " << rec.loss_total << " eval_mlm " << ev.loss_mlm << " eval_sso " << ev.loss_sso
          << '\n';
    }
    if (cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0) {
      trainer.save(dir / ("checkpoint_step" + std::to_string(t) + ".hbck"));
    }
  }
  trainer.save(dir / "checkpoint.hbck");
  out << "wrote " << (dir / "checkpoint.hbck").string() << '\n';
  return 0;
}

int cmd_pretrain(const Subcommand& sub, std::ostream& out) {
  RunConfig cfg = load_config(sub);
  fs::create_directories(cfg.out_dir);
  Corpus corpus = load_corpus(cfg, true);
  {
    std::ofstream echo(fs::path(cfg.out_dir) / "config.cfg");
    echo << format_config(cfg);
  }
  return cfg.train.dtype == DType::f64 ? pretrain_loop<double>(cfg, corpus, out) : pretrain_loop<float>(cfg, corpus, out);
}

template <typename T>
EvalResult eval_checkpoint(const RunConfig& cfg, const Corpus& corpus) {
  Trainer<T> trainer(cfg.model, cfg.train, cfg.corruption, corpus.train, corpus.held_out);
  trainer.load(cfg.checkpoint);
  return trainer.evaluate();
}

int cmd_eval(const Subcommand& sub, std::ostream& out) {
  std::string sibling;
  for (const auto& [name, opt] : sub.options) {
    if (name == "checkpoint" && opt->count() > 0) {
      const fs::path p = fs::path(sub.raw.at(name)).parent_path() / "config.cfg";
      if (fs::exists(p)) sibling = p.string();
    }
  }
  RunConfig cfg = load_config(sub, sibling);
  require(cfg.checkpoint, "checkpoint");
  Corpus corpus = load_corpus(cfg, false);
  const EvalResult ev = cfg.train.dtype == DType::f64 ? eval_checkpoint<double>(cfg, corpus)
                                                      : eval_checkpoint<float>(cfg, corpus);
  out << to_json_line(ev) << '\n';
  return 0;
}

int cmd_bench(const Subcommand& sub, std::ostream& out) {
  RunConfig cfg = load_config(sub);
  const auto lengths = parse_lengths(cfg.bench_lengths);
  const auto mixers = parse_mixers(cfg.bench_mixers);
  BenchOptions opts;
  opts.hidden = cfg.model.hidden;
  opts.heads = cfg.model.heads;
  opts.reps = cfg.bench_reps;
  opts.warmup = cfg.bench_warmup;
  opts.seed = cfg.seed;
  std::vector<ScalingReport> reports;
  for (MixerKind k : mixers) reports.push_back(time_mixer(k, lengths, opts));
  fs::create_directories(cfg.out_dir);
  const fs::path dir(cfg.out_dir);
  {
    std::ofstream csv(dir / "bench.csv");
    write_scaling_csv(csv, reports);
  }
  const std::vector<std::string> plans = {"12A", "B8A+T4P", "B4P+T8A", "B4A+T8P", "B8P+T4A", "12P"};
  {
    std::ofstream json(dir / "bench.json");
    json << scaling_summary_json(reports, plans, cfg.model.ffn) << '\n';
  }
  write_scaling_csv(out, reports);
  for (const auto& r : reports) {
    out << (r.kind == MixerKind::Attention ? "attention" : "pooling") << " exponent " << r.exponent << '\n';
  }
  return 0;
}

int cmd_gradcheck(const Subcommand& sub, std::ostream& out) {
  RunConfig cfg = load_config(sub);
  if (cfg.explicit_keys.count("dtype") && cfg.train.dtype != DType::f64) {
    throw ConfigError("dtype", "gradient checks run in f64 only");
  }
  GradientSuiteOptions opts;
  opts.seed = cfg.seed == 0 ? opts.seed : cfg.seed;
  auto cases = op_gradient_cases(opts);
  auto model_cases = model_gradient_cases(opts);
  cases.insert(cases.end(), model_cases.begin(), model_cases.end());
  bool ok = true;
  for (const auto& c : cases) {
    const bool pass = c.result.max_rel_error < cfg.grad_tolerance;
    ok = ok && pass;
    out << std::left << std::setw(36) << c.name << ' ' << std::scientific << std::setprecision(3)
        << c.result.max_rel_error << ' ' << (pass ? "ok" : "FAIL") << '\n';
  }
  out << std::defaultfloat << (ok ? "all gradients within " : "gradient check failed, tolerance ") << cfg.grad_tolerance
      << '\n';
  return ok ? 0 : 1;
}

int cmd_inspect(const Subcommand& sub, std::ostream& out) {
  RunConfig cfg = load_config(sub);
  require(cfg.checkpoint, "checkpoint");
  const auto arrays = read_checkpoint(cfg.checkpoint);
  std::size_t total = 0, params = 0;
  for (const auto& a : arrays) {
    out << a.name << ' ' << dtype_name(a.dtype) << " [";
    for (std::size_t i = 0; i < a.dims.size(); ++i) out << (i ? "," : "") << a.dims[i];
    out << "] " << a.numel();
    if (a.name == "meta.step" && a.numel() == 1) {
      std::int64_t step = 0;
      a.copy_to<std::int64_t>(std::span<std::int64_t>(&step, 1));
      out << " = " << step;
    }
    out << '\n';
    total += a.numel();
    if (a.name.rfind("adam.", 0) != 0 && a.name.rfind("meta.", 0) != 0) params += a.numel();
  }
  out << arrays.size() << " arrays, " << params << " parameter elements, " << total << " elements total\n";
  return 0;
}

}  // namespace

RunConfig::RunConfig() {
  model.plan = parse_layer_plan("B8A+T4P");
  model.num_layers = 12;
  model.max_len = 64;
  train.lr = 1e-3;
  train.beta2 = 0.98;
  train.batch_size = 12;
  train.warmup_steps = 50;
  train.total_steps = 500;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, spec] : key_table()) k.push_back(name);
    return k;
  }();
  return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const KeySpec* spec = find_key(key);
  if (!spec) throw ConfigError(key, "unknown key");
  spec->set(cfg, key, value);
  cfg.explicit_keys.insert(key);
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  const KeySpec* spec = find_key(key);
  if (!spec) throw ConfigError(key, "unknown key");
  return spec->get(cfg);
}

void apply_config_text(RunConfig& cfg, std::istream& text, const std::string& source) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(text, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = source + ":" + std::to_string(n);
    if (eq == std::string::npos) throw ConfigError(where, "expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.key(), std::string(e.what()).substr(e.key().size() + 2));
    }
  }
}

void finalize_config(RunConfig& cfg) {
  if (!cfg.explicit_keys.count("num_layers")) cfg.model.num_layers = cfg.model.plan.size();
  cfg.model.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.corruption.seed = cfg.seed;
  cfg.model.validate();
  cfg.train.validate();
  try {
    cfg.corruption.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("corruption", e.what());
  }
  if (cfg.vocab_size <= static_cast<std::size_t>(kNumReserved)) throw ConfigError("vocab_size", "must exceed the 5 reserved ids");
  if (cfg.bench_reps < 9) throw ConfigError("bench_reps", "at least 9 repetitions");
  if (cfg.bench_warmup < 3) throw ConfigError("bench_warmup", "at least 3 warmup iterations");
  if (!(cfg.grad_tolerance > 0)) throw ConfigError("grad_tolerance", "must be positive");
}

std::string format_config(const RunConfig& cfg) {
  std::string text;
  for (const auto& [name, spec] : key_table()) text += name + " = " + spec.get(cfg) + "\n";
  return text;
}

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"HybridBERT pretraining, evaluation and benchmarks", "hybridbert"};
  app.require_subcommand(1);
  const std::pair<const char*, const char*> names[] = {
      {"pretrain", "train with MLM + SSO and write metrics.jsonl, eval.jsonl and checkpoints"},
      {"eval", "held-out losses of a checkpoint"},
      {"bench", "mixer wall-time and activation scaling"},
      {"gradcheck", "finite-difference gradient checks in float64"},
      {"inspect", "list the arrays of a checkpoint"},
  };
  std::vector<Subcommand> subs(std::size(names));
  for (std::size_t i = 0; i < subs.size(); ++i) {
    subs[i].app = app.add_subcommand(names[i].first, names[i].second);
    add_key_options(subs[i]);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (subs[0].app->parsed()) return cmd_pretrain(subs[0], out);
    if (subs[1].app->parsed()) return cmd_eval(subs[1], out);
    if (subs[2].app->parsed()) return cmd_bench(subs[2], out);
    if (subs[3].app->parsed()) return cmd_gradcheck(subs[3], out);
    if (subs[4].app->parsed()) return cmd_inspect(subs[4], out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace hybridbert
