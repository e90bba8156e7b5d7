#pragma once

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "model.hpp"
#include "training.hpp"

namespace mwnmt {

/// Configuration problem (bad file, unknown key, invalid flag value); the CLI
/// maps these to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  int latent_vocab = 20;
  int train_pairs = 8000;
  int dev_pairs = 500;
  int test_pairs = 500;
  int min_len = 3;
  int max_len = 12;
  std::vector<LanguageSpec> languages;
};

/// Everything a run needs: model dims, training recipe, testbed languages and
/// the pair topology. Every field is overridable from the command line.
struct RunConfig {
  int embed_dim = 32;
  int hidden_dim = 64;
  int attn_dim = 64;
  int max_decode_len = 24;
  TrainConfig train;
  DataConfig data;
  std::vector<std::string> pairs = {"S-E", "E-S", "F-E", "E-F"};

  RunConfig() {
    train.max_len = 20;
    data.languages = {
        {"E", "e", LanguageSpec::Transform::identity, 1, false, 20},
        {"S", "s", LanguageSpec::Transform::merge, 2, false, 20},
        {"F", "f", LanguageSpec::Transform::multiply, 3, true, 20},
    };
  }

  const LanguageSpec& language(const std::string& name) const {
    for (const LanguageSpec& s : data.languages) {
      if (s.name == name) return s;
    }
    throw ConfigError("unknown language " + name);
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                                const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unknown config key \"" + where + key + "\"");
    }
  }
}

inline LanguageSpec::Transform transform_from_name(const std::string& name) {
  if (name == "identity") return LanguageSpec::Transform::identity;
  if (name == "shift") return LanguageSpec::Transform::shift;
  if (name == "multiply") return LanguageSpec::Transform::multiply;
  if (name == "merge") return LanguageSpec::Transform::merge;
  throw ConfigError("unknown transform \"" + name + "\"");
}

inline std::string transform_name(LanguageSpec::Transform t) {
  switch (t) {
    case LanguageSpec::Transform::identity: return "identity";
    case LanguageSpec::Transform::shift: return "shift";
    case LanguageSpec::Transform::multiply: return "multiply";
    case LanguageSpec::Transform::merge: return "merge";
  }
  return "?";
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig cfg;
  detail::reject_unknown_keys(j, {"model", "train", "data", "pairs"}, "");
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::reject_unknown_keys(m, {"embed_dim", "hidden_dim", "attn_dim", "max_decode_len"},
                                "model.");
    cfg.embed_dim = m.value("embed_dim", cfg.embed_dim);
    cfg.hidden_dim = m.value("hidden_dim", cfg.hidden_dim);
    cfg.attn_dim = m.value("attn_dim", cfg.attn_dim);
    cfg.max_decode_len = m.value("max_decode_len", cfg.max_decode_len);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown_keys(t,
                                {"learning_rate", "beta1", "beta2", "epsilon", "clip_norm",
                                 "batch_size", "eval_interval", "patience", "max_updates",
                                 "max_len", "seed"},
                                "train.");
    cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
    cfg.train.beta1 = t.value("beta1", cfg.train.beta1);
    cfg.train.beta2 = t.value("beta2", cfg.train.beta2);
    cfg.train.epsilon = t.value("epsilon", cfg.train.epsilon);
    cfg.train.clip_norm = t.value("clip_norm", cfg.train.clip_norm);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.eval_interval = t.value("eval_interval", cfg.train.eval_interval);
    cfg.train.patience = t.value("patience", cfg.train.patience);
    cfg.train.max_updates = t.value("max_updates", cfg.train.max_updates);
    cfg.train.max_len = t.value("max_len", cfg.train.max_len);
    cfg.train.seed = t.value("seed", cfg.train.seed);
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::reject_unknown_keys(d,
                                {"latent_vocab", "train_pairs", "dev_pairs", "test_pairs",
                                 "min_len", "max_len", "languages"},
                                "data.");
    cfg.data.latent_vocab = d.value("latent_vocab", cfg.data.latent_vocab);
    cfg.data.train_pairs = d.value("train_pairs", cfg.data.train_pairs);
    cfg.data.dev_pairs = d.value("dev_pairs", cfg.data.dev_pairs);
    cfg.data.test_pairs = d.value("test_pairs", cfg.data.test_pairs);
    cfg.data.min_len = d.value("min_len", cfg.data.min_len);
    cfg.data.max_len = d.value("max_len", cfg.data.max_len);
    if (d.contains("languages")) {
      cfg.data.languages.clear();
      for (const auto& l : d.at("languages")) {
        detail::reject_unknown_keys(l, {"name", "prefix", "transform", "k", "reversed"},
                                    "data.languages.");
        LanguageSpec spec;
        spec.name = l.at("name").get<std::string>();
        spec.prefix = l.value("prefix", spec.name);
        spec.transform = detail::transform_from_name(l.value("transform", std::string("identity")));
        spec.k = l.value("k", 1);
        spec.reversed = l.value("reversed", false);
        spec.latent_vocab = cfg.data.latent_vocab;
        cfg.data.languages.push_back(spec);
      }
    }
  }
  for (LanguageSpec& s : cfg.data.languages) s.latent_vocab = cfg.data.latent_vocab;
  if (j.contains("pairs")) cfg.pairs = j.at("pairs").get<std::vector<std::string>>();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  try {
    return parse_run_config(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
}

inline std::pair<std::string, std::string> split_pair(const std::string& pair) {
  const std::size_t dash = pair.find('-');
  if (dash == std::string::npos || dash == 0 || dash + 1 == pair.size()) {
    throw ConfigError("pair \"" + pair + "\" must look like SRC-DST");
  }
  return {pair.substr(0, dash), pair.substr(dash + 1)};
}

/// Model over exactly the languages the pair list touches: encoders for the
/// sources, decoders for the targets.
inline ModelConfig model_config_for_pairs(const RunConfig& cfg, const std::vector<std::string>& pairs) {
  ModelConfig mc;
  mc.embed_dim = cfg.embed_dim;
  mc.hidden_dim = cfg.hidden_dim;
  mc.attn_dim = cfg.attn_dim;
  mc.max_decode_len = cfg.max_decode_len;
  std::vector<std::string> enc_names, dec_names;
  for (const std::string& p : pairs) {
    auto [src, dst] = split_pair(p);
    if (std::find(enc_names.begin(), enc_names.end(), src) == enc_names.end()) enc_names.push_back(src);
    if (std::find(dec_names.begin(), dec_names.end(), dst) == dec_names.end()) dec_names.push_back(dst);
  }
  for (const std::string& n : enc_names) {
    mc.encoders.push_back({n, Vocab::for_language(cfg.language(n)).size()});
  }
  for (const std::string& n : dec_names) {
    mc.decoders.push_back({n, Vocab::for_language(cfg.language(n)).size()});
  }
  return mc;
}

}  // namespace mwnmt
