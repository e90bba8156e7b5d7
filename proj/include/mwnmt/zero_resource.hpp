#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "strategies.hpp"
#include "training.hpp"

namespace mwnmt {

struct Provenance {
  std::string corpus_id;
  std::size_t line_index = 0;
  std::string checkpoint_id;
};

/// One machine-generated training pair: the source side was translated from
/// the pivot side of a true target-pivot corpus, the target side is kept
/// verbatim.
struct PseudoPair {
  Sentence source;
  Sentence target;
  Provenance provenance;
};

inline std::string digest_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

/// Samples n (target, pivot) pairs without replacement from a true
/// target-pivot corpus and replaces the pivot side by its greedy one-to-one
/// translation into the source language. Reads no true source-language data.
inline std::vector<PseudoPair> generate_pseudo_corpus(
    const MultiWayModel& model, const std::vector<Sentence>& target_side,
    const std::vector<Sentence>& pivot_side, const std::string& corpus_id,
    const std::string& source_lang, const std::string& pivot_lang, const std::string& target_lang,
    std::size_t n, std::uint64_t seed) {
  if (target_side.size() != pivot_side.size()) {
    throw std::invalid_argument("generate_pseudo_corpus: target/pivot sides are not aligned");
  }
  if (n > target_side.size()) {
    throw std::invalid_argument("generate_pseudo_corpus: n exceeds the corpus size");
  }
  model.encoder_index(pivot_lang);
  model.decoder_index(source_lang);
  model.decoder_index(target_lang);
  if (!model.trained_pairs.count(MultiWayModel::pair_key(pivot_lang, source_lang))) {
    throw std::invalid_argument("generate_pseudo_corpus: " + pivot_lang + "->" + source_lang +
                                " is not a trained direction");
  }

  const std::string checkpoint_id = digest_hex(model_digest(model));
  Rng rng(seed);
  std::vector<std::size_t> picks = rng.sample_without_replacement(target_side.size(), n);

  std::vector<PseudoPair> out;
  out.reserve(n);
  for (std::size_t idx : picks) {
    TranslationResult r = translate(model, StrategyKind::OneToOne,
                                    {{pivot_lang, pivot_side[idx]}}, source_lang, 1);
    PseudoPair pair;
    pair.source = to_tokens(model, source_lang, r);
    pair.target = target_side[idx];
    pair.provenance = {corpus_id, idx, checkpoint_id};
    out.push_back(std::move(pair));
  }
  return out;
}

/// Pseudo corpora persist in the standard corpus format plus a provenance
/// sidecar (one tab-separated line per pair: corpus id, line index,
/// checkpoint id).
inline void write_pseudo_corpus(const std::filesystem::path& dir, const std::string& base,
                                const std::string& source_lang, const std::string& target_lang,
                                const std::vector<PseudoPair>& pairs) {
  std::vector<Sentence> src, tgt;
  src.reserve(pairs.size());
  tgt.reserve(pairs.size());
  for (const PseudoPair& p : pairs) {
    src.push_back(p.source);
    tgt.push_back(p.target);
  }
  write_corpus_side(dir / (base + "." + source_lang), src);
  write_corpus_side(dir / (base + "." + target_lang), tgt);
  std::ofstream prov(dir / (base + ".provenance"));
  if (!prov) throw std::runtime_error("cannot write provenance sidecar in " + dir.string());
  for (const PseudoPair& p : pairs) {
    prov << p.provenance.corpus_id << '\t' << p.provenance.line_index << '\t'
         << p.provenance.checkpoint_id << '\n';
  }
}

/// Copies the shared attention into a target-specific clone for one
/// (encoder, decoder) pair. The copy is byte-identical, so translations are
/// unchanged until the clone is finetuned.
inline std::string clone_attention(MultiWayModel& model, const std::string& encoder_id,
                                   const std::string& decoder_id) {
  model.encoder_index(encoder_id);
  model.decoder_index(decoder_id);
  const std::string key = MultiWayModel::pair_key(encoder_id, decoder_id);
  if (model.attention_id_for(encoder_id, decoder_id) != kSharedAttentionId) {
    throw std::invalid_argument("clone_attention: pair " + key + " already has a clone");
  }
  model.attention.emplace(key, model.attention.at(kSharedAttentionId));
  model.pair_attention[key] = key;
  return key;
}

struct FinetuneReport {
  std::string attention_id;
  std::size_t corpus_size = 0;
  std::vector<double> tb_trajectory;  // mean dev T-B per eval
  std::uint64_t frozen_digest_before = 0;
  std::uint64_t frozen_digest_after = 0;
  std::uint64_t clone_digest_before = 0;
  std::uint64_t clone_digest_after = 0;
  int updates_run = 0;
  std::vector<std::string> log;
};

namespace detail {

inline std::uint64_t digest_by_prefix(const MultiWayModel& m, const std::string& prefix, bool inside) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for_each_parameter(m, [&](const std::string& path, const Tensor& t) {
    const bool in = path.rfind(prefix, 0) == 0;
    if (in != inside) return;
    h = fnv1a64(path.data(), path.size(), h);
    h = digest_tensor(t, h);
  });
  return h;
}

}  // namespace detail

/// Finetunes only the cloned attention's parameters on a (pseudo or true)
/// bilingual corpus; every encoder, decoder and shared-attention parameter is
/// bit-identical before and after. The clone's Adam moments start at zero.
inline FinetuneReport finetune_attention(MultiWayModel& model, const std::string& attention_id,
                                         const std::vector<Sentence>& src_corpus,
                                         const std::vector<Sentence>& tgt_corpus,
                                         const std::vector<DevSet>& dev_sets, TrainConfig cfg) {
  if (attention_id == kSharedAttentionId) {
    throw std::invalid_argument("finetune_attention: refusing to finetune the shared attention");
  }
  model.attention_for(attention_id);  // must exist
  std::string enc, dec;
  for (const auto& [pair, id] : model.pair_attention) {
    if (id != attention_id) continue;
    const std::size_t dash = pair.find('-');
    enc = pair.substr(0, dash);
    dec = pair.substr(dash + 1);
    break;
  }
  if (enc.empty()) {
    throw std::invalid_argument("finetune_attention: no pair resolves to attention " + attention_id);
  }
  if (src_corpus.empty() || src_corpus.size() != tgt_corpus.size()) {
    throw std::invalid_argument("finetune_attention: empty or misaligned corpus");
  }
  const Vocab& src_vocab = model.vocab(enc);
  const Vocab& tgt_vocab = model.vocab(dec);
  for (std::size_t i = 0; i < src_corpus.size(); ++i) {
    for (int id : src_vocab.encode(src_corpus[i])) {
      if (id == Vocab::kUnk) {
        throw std::invalid_argument("finetune_attention: source line " + std::to_string(i) +
                                    " leaves the vocabulary");
      }
    }
    for (int id : tgt_vocab.encode(tgt_corpus[i])) {
      if (id == Vocab::kUnk) {
        throw std::invalid_argument("finetune_attention: target line " + std::to_string(i) +
                                    " leaves the vocabulary");
      }
    }
  }

  const std::string prefix = "attention/" + attention_id + "/";
  FinetuneReport report;
  report.attention_id = attention_id;
  report.corpus_size = src_corpus.size();
  report.frozen_digest_before = detail::digest_by_prefix(model, prefix, false);
  report.clone_digest_before = detail::digest_by_prefix(model, prefix, true);

  cfg.trainable = [prefix](const std::string& path) { return path.rfind(prefix, 0) == 0; };
  TrainPair pair;
  pair.src_lang = enc;
  pair.tgt_lang = dec;
  pair.src = src_corpus;
  pair.tgt = tgt_corpus;
  TrainResult result = train(model, {pair}, dev_sets, cfg);

  report.frozen_digest_after = detail::digest_by_prefix(model, prefix, false);
  report.clone_digest_after = detail::digest_by_prefix(model, prefix, true);
  report.tb_trajectory = result.eval_mean_tb;
  report.updates_run = result.updates_run;
  report.log = std::move(result.log);
  if (report.frozen_digest_before != report.frozen_digest_after) {
    throw std::logic_error("finetune_attention: freeze contract violated");
  }
  return report;
}

inline FinetuneReport finetune_attention(MultiWayModel& model, const std::string& attention_id,
                                         const std::vector<PseudoPair>& corpus,
                                         const std::vector<DevSet>& dev_sets, const TrainConfig& cfg) {
  std::vector<Sentence> src, tgt;
  src.reserve(corpus.size());
  tgt.reserve(corpus.size());
  for (const PseudoPair& p : corpus) {
    src.push_back(p.source);
    tgt.push_back(p.target);
  }
  return finetune_attention(model, attention_id, src, tgt, dev_sets, cfg);
}

}  // namespace mwnmt
