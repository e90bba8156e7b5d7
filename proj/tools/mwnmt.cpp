// Command-line workbench for the multi-way multilingual translation testbed:
// data generation, training, decoding strategies, pseudo-parallel generation,
// attention finetuning, evaluation and gradient checking.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mwnmt/checkpoint.hpp"
#include "mwnmt/metrics.hpp"
#include "mwnmt/run_config.hpp"
#include "mwnmt/zero_resource.hpp"

namespace fs = std::filesystem;
using namespace mwnmt;

namespace {

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const std::size_t comma = csv.find(',', start);
    if (comma == std::string::npos) {
      if (start < csv.size()) out.push_back(csv.substr(start));
      break;
    }
    if (comma > start) out.push_back(csv.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

// Applies "--set section.key=value" overrides onto the config JSON before
// parsing, so every config field is reachable from the command line.
void apply_overrides(nlohmann::json& j, const std::vector<std::string>& overrides) {
  for (const std::string& o : overrides) {
    const std::size_t eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override \"" + o + "\" must look like key=value");
    const std::string dotted = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
      value = raw;  // plain string
    }
    nlohmann::json* cursor = &j;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = dotted.find('.', start);
      const std::string key = dotted.substr(start, dot == std::string::npos ? dot : dot - start);
      if (key.empty()) throw ConfigError("override \"" + o + "\" has an empty key segment");
      if (dot == std::string::npos) {
        (*cursor)[key] = value;
        break;
      }
      cursor = &(*cursor)[key];
      start = dot + 1;
    }
  }
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
  }
  apply_overrides(j, overrides);
  try {
    return parse_run_config(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ParallelCorpus read_corpus(const std::string& prefix, const std::vector<std::string>& langs) {
  ParallelCorpus c;
  for (const std::string& lang : langs) {
    if (c.sentences.count(lang)) continue;
    c.languages.push_back(lang);
    c.sentences[lang] = read_corpus_side(prefix + "." + lang);
    if (c.sentences[lang].size() != c.sentences[c.languages.front()].size()) {
      throw std::runtime_error("corpus sides of " + prefix + " are not aligned");
    }
  }
  return c;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const std::string& l : lines) out << l << '\n';
}

int run_gen_data(const std::string& config_path, const std::vector<std::string>& overrides,
                 const std::string& out_dir, std::uint64_t seed) {
  RunConfig cfg = load_config(config_path, overrides);
  fs::create_directories(out_dir);
  const struct {
    const char* base;
    int count;
    std::uint64_t seed;
  } splits[] = {{"train", cfg.data.train_pairs, seed},
                {"dev", cfg.data.dev_pairs, seed + 1},
                {"test", cfg.data.test_pairs, seed + 2}};
  for (const auto& split : splits) {
    ParallelCorpus corpus = gen_parallel_corpus(cfg.data.languages, split.count, cfg.data.min_len,
                                                cfg.data.max_len, split.seed);
    write_corpus(out_dir, split.base, corpus);
    std::printf("wrote %s/%s.{", out_dir.c_str(), split.base);
    for (std::size_t i = 0; i < corpus.languages.size(); ++i) {
      std::printf("%s%s", i ? "," : "", corpus.languages[i].c_str());
    }
    std::printf("} lines=%d\n", split.count);
  }
  return 0;
}

int run_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& data_dir, const std::string& pairs_csv, const std::string& out,
              const std::string& log_path) {
  RunConfig cfg = load_config(config_path, overrides);
  std::vector<std::string> pairs = pairs_csv.empty() ? cfg.pairs : split_csv(pairs_csv);
  if (pairs.empty()) throw ConfigError("no training pairs given");

  ModelConfig mc = model_config_for_pairs(cfg, pairs);
  MultiWayModel model = make_model(mc, cfg.train.seed);
  for (const std::string& p : pairs) {
    auto [src, dst] = split_pair(p);
    for (const std::string& lang : {src, dst}) {
      if (!model.vocabs.count(lang)) model.vocabs[lang] = Vocab::for_language(cfg.language(lang));
    }
  }

  std::vector<TrainPair> train_pairs;
  std::vector<DevSet> dev_sets;
  for (const std::string& p : pairs) {
    auto [src, dst] = split_pair(p);
    TrainPair tp;
    tp.src_lang = src;
    tp.tgt_lang = dst;
    tp.src = read_corpus_side(fs::path(data_dir) / ("train." + src));
    tp.tgt = read_corpus_side(fs::path(data_dir) / ("train." + dst));
    train_pairs.push_back(std::move(tp));
    DevSet d;
    d.src_lang = src;
    d.tgt_lang = dst;
    d.src = read_corpus_side(fs::path(data_dir) / ("dev." + src));
    d.refs = read_corpus_side(fs::path(data_dir) / ("dev." + dst));
    dev_sets.push_back(std::move(d));
  }

  TrainResult result = train(model, train_pairs, dev_sets, cfg.train);
  save_checkpoint(model, out);
  write_lines(log_path.empty() ? out + ".log" : log_path, result.log);
  std::printf("trained pairs=%s updates=%d best_tb=%.3f early_stopped=%d checkpoint=%s\n",
              pairs_csv.empty() ? "(config)" : pairs_csv.c_str(), result.updates_run,
              result.best_mean_tb, result.early_stopped ? 1 : 0, out.c_str());
  return 0;
}

int run_translate(const std::string& ckpt, const std::string& strategy_name,
                  const std::string& src_langs_csv, const std::string& tgt_lang,
                  const std::string& pivot, int beam, const std::string& input_csv,
                  const std::string& output) {
  StrategyKind strategy;
  try {
    strategy = strategy_from_name(strategy_name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  MultiWayModel model = load_checkpoint(ckpt).model;
  const std::vector<std::string> src_langs = split_csv(src_langs_csv);
  const std::vector<std::string> inputs = split_csv(input_csv);
  if (src_langs.empty() || inputs.size() != src_langs.size()) {
    throw ConfigError("need one --input file per source language");
  }
  std::vector<std::vector<Sentence>> sides;
  for (const std::string& f : inputs) sides.push_back(read_corpus_side(f));
  for (const auto& s : sides) {
    if (s.size() != sides.front().size()) throw std::runtime_error("input files are not aligned");
  }

  std::vector<std::string> out_lines;
  for (std::size_t i = 0; i < sides.front().size(); ++i) {
    TranslationResult r;
    if (!pivot.empty()) {
      r = translate_pivot(model, src_langs.front(), pivot, tgt_lang,
                          model.vocab(src_langs.front()).encode(sides.front()[i]), strategy, beam);
    } else {
      std::vector<SourceSentence> sources;
      for (std::size_t k = 0; k < src_langs.size(); ++k) {
        sources.push_back({src_langs[k], sides[k][i]});
      }
      r = translate(model, strategy, sources, tgt_lang, beam);
    }
    Sentence tokens = to_tokens(model, tgt_lang, r);
    std::string line;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      if (t) line += ' ';
      line += tokens[t];
    }
    out_lines.push_back(std::move(line));
  }
  write_lines(output, out_lines);
  std::printf("translated %zu lines -> %s\n", out_lines.size(), output.c_str());
  return 0;
}

int run_gen_pseudo(const std::string& ckpt, const std::string& pivot_corpus,
                   const std::string& source_lang, const std::string& pivot_lang,
                   const std::string& target_lang, std::size_t n, std::uint64_t seed,
                   const std::string& out) {
  MultiWayModel model = load_checkpoint(ckpt).model;
  const std::vector<Sentence> target_side = read_corpus_side(pivot_corpus + "." + target_lang);
  const std::vector<Sentence> pivot_side = read_corpus_side(pivot_corpus + "." + pivot_lang);
  std::vector<PseudoPair> pairs = generate_pseudo_corpus(model, target_side, pivot_side,
                                                         pivot_corpus, source_lang, pivot_lang,
                                                         target_lang, n, seed);
  const fs::path out_path(out);
  const fs::path dir = out_path.parent_path().empty() ? fs::path(".") : out_path.parent_path();
  fs::create_directories(dir);
  write_pseudo_corpus(dir, out_path.filename().string(), source_lang, target_lang, pairs);
  std::printf("generated %zu pseudo pairs (%s->%s via %s) -> %s.{%s,%s,provenance}\n", pairs.size(),
              source_lang.c_str(), target_lang.c_str(), pivot_lang.c_str(), out.c_str(),
              source_lang.c_str(), target_lang.c_str());
  return 0;
}

int run_finetune(const std::string& ckpt, const std::string& pair, const std::string& corpus,
                 const std::string& dev_corpus, int batch, const std::string& out,
                 const std::vector<std::string>& overrides, const std::string& config_path) {
  RunConfig cfg = load_config(config_path, overrides);
  auto [src, dst] = split_pair(pair);
  MultiWayModel model = load_checkpoint(ckpt).model;

  std::string attention_id = model.attention_id_for(src, dst);
  if (attention_id == kSharedAttentionId) {
    attention_id = clone_attention(model, src, dst);
    std::printf("cloned shared attention -> %s\n", attention_id.c_str());
  } else {
    std::printf("reusing existing attention clone %s\n", attention_id.c_str());
  }

  std::vector<Sentence> src_corpus = read_corpus_side(corpus + "." + src);
  std::vector<Sentence> tgt_corpus = read_corpus_side(corpus + "." + dst);

  std::vector<DevSet> dev_sets;
  if (!dev_corpus.empty()) {
    DevSet d;
    d.src_lang = src;
    d.tgt_lang = dst;
    d.src = read_corpus_side(dev_corpus + "." + src);
    d.refs = read_corpus_side(dev_corpus + "." + dst);
    dev_sets.push_back(std::move(d));
  }

  TrainConfig tc = cfg.train;
  tc.batch_size = batch;
  FinetuneReport report = finetune_attention(model, attention_id, src_corpus, tgt_corpus, dev_sets, tc);
  save_checkpoint(model, out);
  std::printf("finetuned attention=%s corpus=%zu updates=%d frozen_digest_equal=%d\n",
              report.attention_id.c_str(), report.corpus_size, report.updates_run,
              report.frozen_digest_before == report.frozen_digest_after ? 1 : 0);
  std::printf("clone_digest_before=%s clone_digest_after=%s checkpoint=%s\n",
              digest_hex(report.clone_digest_before).c_str(),
              digest_hex(report.clone_digest_after).c_str(), out.c_str());
  return 0;
}

int run_evaluate(const std::string& ckpt, const std::string& strategy_name, const std::string& pair,
                 const std::string& test_set, const std::string& pivot, int beam) {
  StrategyKind strategy;
  try {
    strategy = strategy_from_name(strategy_name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const std::size_t dash = pair.rfind('-');
  if (dash == std::string::npos) throw ConfigError("pair must look like SRC-DST or SRC+SRC2-DST");
  std::vector<std::string> src_langs = split_csv(pair.substr(0, dash));
  {
    std::vector<std::string> expanded;
    for (const std::string& s : src_langs) {
      for (const std::string& part : split_csv(s)) {
        for (std::size_t start = 0, plus = 0; start <= part.size(); start = plus + 1) {
          plus = part.find('+', start);
          if (plus == std::string::npos) {
            expanded.push_back(part.substr(start));
            break;
          }
          expanded.push_back(part.substr(start, plus - start));
        }
      }
    }
    src_langs = expanded;
  }
  const std::string tgt_lang = pair.substr(dash + 1);

  MultiWayModel model = load_checkpoint(ckpt).model;
  std::vector<std::string> langs = src_langs;
  langs.push_back(tgt_lang);
  if (!pivot.empty()) langs.push_back(pivot);
  ParallelCorpus corpus = read_corpus(test_set, langs);
  EvalReport report = evaluate_corpus(model, strategy, corpus, src_langs, tgt_lang, beam, pivot);
  std::printf("bleu=%.2f ter_approx=%.2f tb=%.3f exact_match=%.2f\n", report.bleu,
              report.ter_approx, report.tb, report.exact_match);
  return 0;
}

int run_grad_check(std::uint64_t seed, int hidden, int embed, int attn, int vocab, double epsilon,
                   double threshold) {
  ModelConfig c;
  c.embed_dim = embed;
  c.hidden_dim = hidden;
  c.attn_dim = attn;
  c.max_decode_len = 10;
  c.encoders = {{"S", vocab}};
  c.decoders = {{"E", vocab}};
  const double err = model_grad_check(c, seed, epsilon);
  std::printf("grad_check max_rel_error=%.3e threshold=%.1e epsilon=%.1e %s\n", err, threshold,
              epsilon, err < threshold ? "OK" : "FAIL");
  return err < threshold ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-way multilingual zero-resource translation workbench"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "data", data_dir = "data", pairs_csv, out, log_path;
  std::string ckpt, strategy = "one", src_langs, tgt_lang, pivot, input, output, pair, corpus,
              dev_corpus, test_set;
  std::vector<std::string> overrides;
  std::uint64_t seed = 1;
  int beam = 1, batch = 60, n = 1000;
  int gc_hidden = 8, gc_embed = 8, gc_attn = 8, gc_vocab = 12;
  double gc_eps = 1e-5, gc_threshold = 1e-4;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration");
    cmd->add_option("--set", overrides, "override a config field, e.g. --set train.batch_size=60");
  };

  CLI::App* gen_data = app.add_subcommand("gen-data", "generate the synthetic multilingual corpora");
  add_config(gen_data);
  gen_data->add_option("--out-dir", out_dir, "output directory");
  gen_data->add_option("--seed", seed, "generation seed");

  CLI::App* train_cmd = app.add_subcommand("train", "train a model on listed directions");
  add_config(train_cmd);
  train_cmd->add_option("--data-dir", data_dir, "directory with train.*/dev.* corpora");
  train_cmd->add_option("--pairs", pairs_csv, "comma-separated directions, e.g. S-E,E-S,F-E,E-F");
  train_cmd->add_option("--out", out, "output checkpoint path")->required();
  train_cmd->add_option("--log", log_path, "training log path (default <out>.log)");

  CLI::App* translate_cmd = app.add_subcommand("translate", "decode a file line by line");
  translate_cmd->add_option("--checkpoint", ckpt)->required();
  translate_cmd->add_option("--strategy", strategy, "one|early|late|early-late");
  translate_cmd->add_option("--src-langs", src_langs, "comma-separated source languages")->required();
  translate_cmd->add_option("--tgt-lang", tgt_lang)->required();
  translate_cmd->add_option("--pivot", pivot, "pivot language for two-stage decoding");
  translate_cmd->add_option("--beam", beam, "beam width (1 = greedy)");
  translate_cmd->add_option("--input", input, "comma-separated input files, one per source language")
      ->required();
  translate_cmd->add_option("--output", output)->required();

  CLI::App* pseudo_cmd = app.add_subcommand("gen-pseudo", "generate a pseudo-parallel corpus");
  pseudo_cmd->add_option("--checkpoint", ckpt)->required();
  pseudo_cmd->add_option("--pivot-corpus", corpus, "prefix of the target-pivot corpus files")->required();
  pseudo_cmd->add_option("--source-lang", src_langs)->required();
  pseudo_cmd->add_option("--pivot-lang", pivot)->required();
  pseudo_cmd->add_option("--target-lang", tgt_lang)->required();
  pseudo_cmd->add_option("--n", n, "pairs to sample");
  pseudo_cmd->add_option("--seed", seed);
  pseudo_cmd->add_option("--out", out, "output prefix")->required();

  CLI::App* finetune_cmd = app.add_subcommand("finetune", "finetune a cloned attention mechanism");
  add_config(finetune_cmd);
  finetune_cmd->add_option("--checkpoint", ckpt)->required();
  finetune_cmd->add_option("--pair", pair, "direction, e.g. F-S")->required();
  finetune_cmd->add_option("--corpus", corpus, "prefix of the finetuning corpus")->required();
  finetune_cmd->add_option("--dev-corpus", dev_corpus, "prefix of the dev corpus for early stopping");
  finetune_cmd->add_option("--batch", batch, "update batch size");
  finetune_cmd->add_option("--out", out)->required();

  CLI::App* eval_cmd = app.add_subcommand("evaluate", "score a strategy on a test set");
  eval_cmd->add_option("--checkpoint", ckpt)->required();
  eval_cmd->add_option("--strategy", strategy, "one|early|late|early-late");
  eval_cmd->add_option("--pair", pair, "direction, e.g. F-S or S+F-E")->required();
  eval_cmd->add_option("--test-set", test_set, "prefix of the test corpus")->required();
  eval_cmd->add_option("--pivot", pivot, "pivot language");
  eval_cmd->add_option("--beam", beam);

  CLI::App* gc_cmd = app.add_subcommand("grad-check", "full-model gradient check on a tiny probe");
  add_config(gc_cmd);
  gc_cmd->add_option("--seed", seed);
  gc_cmd->add_option("--hidden", gc_hidden);
  gc_cmd->add_option("--embed", gc_embed);
  gc_cmd->add_option("--attn", gc_attn);
  gc_cmd->add_option("--vocab-size", gc_vocab);
  gc_cmd->add_option("--epsilon", gc_eps);
  gc_cmd->add_option("--threshold", gc_threshold);

  try {
    app.parse(argc, argv);
    if (gen_data->parsed()) return run_gen_data(config_path, overrides, out_dir, seed);
    if (train_cmd->parsed()) return run_train(config_path, overrides, data_dir, pairs_csv, out, log_path);
    if (translate_cmd->parsed()) {
      return run_translate(ckpt, strategy, src_langs, tgt_lang, pivot, beam, input, output);
    }
    if (pseudo_cmd->parsed()) {
      return run_gen_pseudo(ckpt, corpus, src_langs, pivot, tgt_lang, static_cast<std::size_t>(n),
                            seed, out);
    }
    if (finetune_cmd->parsed()) {
      return run_finetune(ckpt, pair, corpus, dev_corpus, batch, out, overrides, config_path);
    }
    if (eval_cmd->parsed()) return run_evaluate(ckpt, strategy, pair, test_set, pivot, beam);
    if (gc_cmd->parsed()) {
      return run_grad_check(seed, gc_hidden, gc_embed, gc_attn, gc_vocab, gc_eps, gc_threshold);
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
