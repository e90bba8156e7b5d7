#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "rng.hpp"

namespace mwnmt {

using Sentence = std::vector<std::string>;

/// Synthetic language: a per-symbol transform of a shared latent alphabet,
/// optional sequence reversal, and a token prefix. shift/multiply are
/// bijections on [0, V); merge is deliberately lossy (d-to-1).
struct LanguageSpec {
  enum class Transform { identity, shift, multiply, merge };

  std::string name;
  std::string prefix;
  Transform transform = Transform::identity;
  int k = 1;
  bool reversed = false;
  int latent_vocab = 20;

  void validate() const {
    if (name.empty() || prefix.empty()) throw std::invalid_argument("LanguageSpec: name and prefix required");
    if (latent_vocab < 1) throw std::invalid_argument("LanguageSpec: latent vocab must be positive");
    switch (transform) {
      case Transform::identity:
        break;
      case Transform::shift:
        break;
      case Transform::multiply:
        if (std::gcd(k, latent_vocab) != 1) {
          throw std::invalid_argument("LanguageSpec " + name + ": multiply(" + std::to_string(k) +
                                      ") is not a bijection mod " + std::to_string(latent_vocab));
        }
        break;
      case Transform::merge:
        if (k < 1) throw std::invalid_argument("LanguageSpec " + name + ": merge factor must be >= 1");
        break;
    }
  }

  bool bijective() const { return transform != Transform::merge || k == 1; }

  /// Number of distinct surface symbols.
  int surface_vocab() const {
    if (transform == Transform::merge) return (latent_vocab + k - 1) / k;
    return latent_vocab;
  }

  int apply_symbol(int v) const {
    switch (transform) {
      case Transform::identity: return v;
      case Transform::shift: return (v + k) % latent_vocab;
      case Transform::multiply: return static_cast<int>((static_cast<long long>(v) * k) % latent_vocab);
      case Transform::merge: return v / k;
    }
    return v;
  }

  /// Inverse of apply_symbol; only valid for bijective specs.
  int invert_symbol(int s) const {
    switch (transform) {
      case Transform::identity: return s;
      case Transform::shift: return (s - k % latent_vocab + latent_vocab) % latent_vocab;
      case Transform::multiply: {
        for (int v = 0; v < latent_vocab; ++v) {
          if (apply_symbol(v) == s) return v;
        }
        throw std::logic_error("LanguageSpec::invert_symbol: no preimage");
      }
      case Transform::merge:
        throw std::logic_error("LanguageSpec::invert_symbol: merge is not invertible");
    }
    return s;
  }
};

inline Sentence render(const LanguageSpec& spec, const std::vector<int>& latent) {
  spec.validate();
  std::vector<int> symbols;
  symbols.reserve(latent.size());
  for (int v : latent) {
    if (v < 0 || v >= spec.latent_vocab) {
      throw std::invalid_argument("render: latent symbol " + std::to_string(v) + " outside [0, " +
                                  std::to_string(spec.latent_vocab) + ")");
    }
    symbols.push_back(spec.apply_symbol(v));
  }
  if (spec.reversed) std::reverse(symbols.begin(), symbols.end());
  Sentence out;
  out.reserve(symbols.size());
  for (int s : symbols) out.push_back(spec.prefix + std::to_string(s));
  return out;
}

/// Ground-truth translation between two bijective specs (the oracle for all
/// zero-resource tests). The source spec must be bijective.
inline Sentence reference_translate(const LanguageSpec& from, const LanguageSpec& to,
                                    const Sentence& sentence) {
  std::vector<int> latent;
  latent.reserve(sentence.size());
  for (const std::string& tok : sentence) {
    if (tok.rfind(from.prefix, 0) != 0) {
      throw std::invalid_argument("reference_translate: token " + tok + " lacks prefix " + from.prefix);
    }
    latent.push_back(from.invert_symbol(std::stoi(tok.substr(from.prefix.size()))));
  }
  if (from.reversed) std::reverse(latent.begin(), latent.end());
  return render(to, latent);
}

/// Token <-> id maps with fixed specials.
struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;

  static Vocab from_tokens(const std::vector<std::string>& tokens) {
    Vocab v;
    v.id_to_token = {"<pad>", "<bos>", "<eos>", "<unk>"};
    for (const std::string& t : tokens) v.id_to_token.push_back(t);
    for (std::size_t i = 0; i < v.id_to_token.size(); ++i) {
      if (!v.token_to_id.emplace(v.id_to_token[i], static_cast<int>(i)).second) {
        throw std::invalid_argument("Vocab: duplicate token " + v.id_to_token[i]);
      }
    }
    return v;
  }

  static Vocab for_language(const LanguageSpec& spec) {
    std::vector<std::string> tokens;
    for (int s = 0; s < spec.surface_vocab(); ++s) tokens.push_back(spec.prefix + std::to_string(s));
    return from_tokens(tokens);
  }

  int size() const { return static_cast<int>(id_to_token.size()); }

  int id(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
  }

  std::vector<int> encode(const Sentence& s) const {
    std::vector<int> ids;
    ids.reserve(s.size());
    for (const std::string& t : s) ids.push_back(id(t));
    return ids;
  }

  Sentence decode(const std::vector<int>& ids) const {
    Sentence s;
    for (int i : ids) {
      if (i < 0 || i >= size()) throw std::invalid_argument("Vocab: id out of range");
      s.push_back(id_to_token[static_cast<std::size_t>(i)]);
    }
    return s;
  }
};

/// Line-aligned sentences for several languages rendering one latent stream.
struct ParallelCorpus {
  std::vector<std::string> languages;
  std::map<std::string, std::vector<Sentence>> sentences;

  std::size_t size() const {
    return sentences.empty() ? 0 : sentences.begin()->second.size();
  }

  const std::vector<Sentence>& side(const std::string& lang) const {
    auto it = sentences.find(lang);
    if (it == sentences.end()) throw std::invalid_argument("ParallelCorpus: unknown language " + lang);
    return it->second;
  }
};

inline ParallelCorpus gen_parallel_corpus(const std::vector<LanguageSpec>& specs, std::size_t n,
                                          int len_lo, int len_hi, std::uint64_t seed) {
  if (specs.empty()) throw std::invalid_argument("gen_parallel_corpus: no languages");
  if (n < 1) throw std::invalid_argument("gen_parallel_corpus: n must be >= 1");
  if (len_lo < 1 || len_hi < len_lo) throw std::invalid_argument("gen_parallel_corpus: empty length range");
  const int V = specs.front().latent_vocab;
  for (const LanguageSpec& s : specs) {
    s.validate();
    if (s.latent_vocab != V) {
      throw std::invalid_argument("gen_parallel_corpus: specs must share one latent vocabulary");
    }
  }
  ParallelCorpus corpus;
  for (const LanguageSpec& s : specs) {
    corpus.languages.push_back(s.name);
    corpus.sentences[s.name] = {};
  }
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const int len = rng.range(len_lo, len_hi);
    std::vector<int> latent(static_cast<std::size_t>(len));
    for (int& v : latent) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(V)));
    for (const LanguageSpec& s : specs) corpus.sentences[s.name].push_back(render(s, latent));
  }
  return corpus;
}

// --- corpus files: one sentence per line, single-space-separated tokens -------

inline void write_corpus_side(const std::filesystem::path& path, const std::vector<Sentence>& lines) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const Sentence& s : lines) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out << ' ';
      out << s[i];
    }
    out << '\n';
  }
}

inline std::vector<Sentence> read_corpus_side(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<Sentence> lines;
  std::string line;
  while (std::getline(in, line)) {
    Sentence s;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) s.push_back(tok);
    lines.push_back(std::move(s));
  }
  return lines;
}

/// Parallel corpora are same-named files with language-suffixed extensions.
inline void write_corpus(const std::filesystem::path& dir, const std::string& base,
                         const ParallelCorpus& corpus) {
  for (const std::string& lang : corpus.languages) {
    write_corpus_side(dir / (base + "." + lang), corpus.side(lang));
  }
}

// --- batching ------------------------------------------------------------------

/// One padded side of a minibatch; mask is 1.0 exactly on real tokens.
struct PaddedSide {
  int batch = 0;
  int width = 0;
  std::vector<int> ids;       // batch x width, row-major
  std::vector<double> mask;   // batch x width
  std::vector<int> lengths;

  int at(int row, int col) const { return ids[static_cast<std::size_t>(row) * width + col]; }

  std::vector<int> column(int col) const {
    std::vector<int> out(static_cast<std::size_t>(batch));
    for (int r = 0; r < batch; ++r) out[static_cast<std::size_t>(r)] = at(r, col);
    return out;
  }

  std::vector<double> mask_column(int col) const {
    std::vector<double> out(static_cast<std::size_t>(batch));
    for (int r = 0; r < batch; ++r) out[static_cast<std::size_t>(r)] = mask[static_cast<std::size_t>(r) * width + col];
    return out;
  }
};

struct Batch {
  PaddedSide src;
  PaddedSide tgt;  // EOS-terminated
};

namespace detail {

inline PaddedSide pad_side(const std::vector<std::vector<int>>& rows, bool append_eos) {
  PaddedSide side;
  side.batch = static_cast<int>(rows.size());
  int width = 0;
  for (const auto& r : rows) width = std::max(width, static_cast<int>(r.size()) + (append_eos ? 1 : 0));
  side.width = width;
  side.ids.assign(static_cast<std::size_t>(side.batch) * width, Vocab::kPad);
  side.mask.assign(static_cast<std::size_t>(side.batch) * width, 0.0);
  for (int r = 0; r < side.batch; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    std::size_t off = static_cast<std::size_t>(r) * width;
    for (std::size_t c = 0; c < row.size(); ++c) {
      side.ids[off + c] = row[c];
      side.mask[off + c] = 1.0;
    }
    std::size_t len = row.size();
    if (append_eos) {
      side.ids[off + len] = Vocab::kEos;
      side.mask[off + len] = 1.0;
      ++len;
    }
    side.lengths.push_back(static_cast<int>(len));
  }
  return side;
}

}  // namespace detail

/// Filters pairs longer than max_len on either side, shuffles by seed, pads
/// with PAD and appends EOS to targets.
inline std::vector<Batch> make_batches(const std::vector<Sentence>& src_sents,
                                       const std::vector<Sentence>& tgt_sents,
                                       const Vocab& src_vocab, const Vocab& tgt_vocab,
                                       int batch_size, int max_len, std::uint64_t seed) {
  if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
  if (src_sents.size() != tgt_sents.size()) {
    throw std::invalid_argument("make_batches: corpus sides are not aligned");
  }
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < src_sents.size(); ++i) {
    if (static_cast<int>(src_sents[i].size()) > max_len) continue;
    if (static_cast<int>(tgt_sents[i].size()) > max_len) continue;
    if (src_sents[i].empty() || tgt_sents[i].empty()) continue;
    kept.push_back(i);
  }
  if (kept.empty()) throw std::invalid_argument("make_batches: every pair was filtered out");
  Rng rng(seed);
  rng.shuffle(kept);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < kept.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(kept.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::vector<int>> src_rows, tgt_rows;
    for (std::size_t i = start; i < end; ++i) {
      src_rows.push_back(src_vocab.encode(src_sents[kept[i]]));
      tgt_rows.push_back(tgt_vocab.encode(tgt_sents[kept[i]]));
    }
    Batch b;
    b.src = detail::pad_side(src_rows, false);
    b.tgt = detail::pad_side(tgt_rows, true);
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace mwnmt
