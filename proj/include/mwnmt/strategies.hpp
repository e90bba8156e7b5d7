#pragma once

#include <algorithm>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "model.hpp"

namespace mwnmt {

enum class StrategyKind { OneToOne, EarlyAverage, LateAverage, EarlyPlusLate };

inline StrategyKind strategy_from_name(const std::string& name) {
  if (name == "one") return StrategyKind::OneToOne;
  if (name == "early") return StrategyKind::EarlyAverage;
  if (name == "late") return StrategyKind::LateAverage;
  if (name == "early-late") return StrategyKind::EarlyPlusLate;
  throw std::invalid_argument("unknown strategy " + name);
}

inline const char* strategy_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::OneToOne: return "one";
    case StrategyKind::EarlyAverage: return "early";
    case StrategyKind::LateAverage: return "late";
    case StrategyKind::EarlyPlusLate: return "early-late";
  }
  return "?";
}

namespace detail {

inline Tensor mean_rows(const std::vector<Tensor>& parts) {
  Tensor out = parts.front();
  for (std::size_t k = 1; k < parts.size(); ++k) {
    if (!parts[k].same_shape(out)) throw std::invalid_argument(shape_mismatch("mean", parts[k], out));
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += parts[k].data()[i];
  }
  if (parts.size() > 1) {
    const double inv = 1.0 / static_cast<double>(parts.size());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= inv;
  }
  return out;
}

}  // namespace detail

/// Early averaging: arithmetic means of per-source contexts and initializers.
inline std::pair<Tensor, Tensor> combine_context_early(const std::vector<Tensor>& contexts,
                                                       const std::vector<Tensor>& inits) {
  if (contexts.size() < 2 || inits.size() != contexts.size()) {
    throw std::invalid_argument("combine_context_early: need at least two aligned sources");
  }
  return {detail::mean_rows(contexts), detail::mean_rows(inits)};
}

/// Late averaging: arithmetic mean of per-path output distributions.
inline Tensor combine_distributions_late(const std::vector<Tensor>& dists) {
  if (dists.size() < 2) throw std::invalid_argument("combine_distributions_late: need at least two paths");
  for (const Tensor& d : dists) {
    if (d.cols() != dists.front().cols() || d.rows() != 1) {
      throw std::invalid_argument(shape_mismatch("combine_distributions_late", d, dists.front()));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) sum += d.data()[i];
    if (std::abs(sum - 1.0) > 1e-6) {
      throw std::invalid_argument("combine_distributions_late: input does not sum to 1");
    }
  }
  return detail::mean_rows(dists);
}

/// Stepwise decoding session. One advance() consumes the previous token,
/// updates every path and returns the strategy-combined distribution over the
/// next target symbol. Copies share the encoded sources and duplicate only the
/// decoder states, so beam search clones are cheap.
class DecodeSession {
 public:
  DecodeSession(const MultiWayModel& model, StrategyKind strategy,
                const std::vector<std::pair<std::string, std::vector<int>>>& sources,
                const std::string& target_lang)
      : model_(&model), strategy_(strategy), target_(target_lang) {
    if (sources.empty()) throw std::invalid_argument("translate: no sources given");
    if (strategy == StrategyKind::OneToOne && sources.size() != 1) {
      throw std::invalid_argument("translate: one-to-one needs exactly one source");
    }
    if (strategy != StrategyKind::OneToOne && sources.size() < 2) {
      throw std::invalid_argument("translate: many-to-one strategies need at least two sources");
    }
    dec_index_ = model.decoder_index(target_lang);

    auto encoded = std::make_shared<std::vector<EncodedSource>>();
    std::vector<const AttentionParams*> attns;
    std::vector<bool> all_bits(model.config.encoders.size(), false);
    for (const auto& [lang, ids] : sources) {
      encoded->push_back(encode_source(model, lang, ids));
      attns.push_back(&model.attention_for(model.attention_id_for(lang, target_lang)));
      all_bits[static_cast<std::size_t>(encoded->back().encoder_index)] = true;
    }
    encoded_ = encoded;

    const bool want_early = strategy == StrategyKind::EarlyAverage || strategy == StrategyKind::EarlyPlusLate;
    const bool want_late = strategy == StrategyKind::LateAverage || strategy == StrategyKind::EarlyPlusLate;
    if (strategy == StrategyKind::OneToOne || want_early) {
      Path p;
      for (std::size_t k = 0; k < encoded_->size(); ++k) p.source_idx.push_back(k);
      p.attns = attns;
      p.indicator = all_bits;
      paths_.push_back(std::move(p));
    }
    if (want_late) {
      for (std::size_t k = 0; k < encoded_->size(); ++k) {
        Path p;
        p.source_idx = {k};
        p.attns = {attns[k]};
        p.indicator.assign(model.config.encoders.size(), false);
        p.indicator[static_cast<std::size_t>((*encoded_)[k].encoder_index)] = true;
        paths_.push_back(std::move(p));
      }
    }
    for (Path& p : paths_) {
      std::vector<const EncodedSource*> srcs;
      for (std::size_t k : p.source_idx) srcs.push_back(&(*encoded_)[k]);
      p.state = init_decoder_state(model, target_lang, srcs);
    }
  }

  int vocab_size() const {
    return model_->config.decoders[static_cast<std::size_t>(dec_index_)].vocab_size;
  }

  int max_len() const { return model_->config.max_decode_len; }

  /// Feed the previously emitted token and return the distribution over the
  /// next one.
  Tensor advance(int prev_token) {
    std::vector<Tensor> dists;
    dists.reserve(paths_.size());
    for (Path& p : paths_) dists.push_back(step_path(p, prev_token));
    if (strategy_ == StrategyKind::EarlyPlusLate) {
      // Half weight on the early-averaged path, half on the late average.
      std::vector<Tensor> late(dists.begin() + 1, dists.end());
      return detail::mean_rows({dists[0], detail::mean_rows(late)});
    }
    if (dists.size() == 1) return dists[0];
    return detail::mean_rows(dists);
  }

 private:
  struct Path {
    std::vector<std::size_t> source_idx;
    std::vector<const AttentionParams*> attns;
    std::vector<bool> indicator;
    DecoderState state;
  };

  Tensor step_path(Path& p, int prev_token) {
    const MultiWayModel& m = *model_;
    const DecoderParams& dec = m.decoders[static_cast<std::size_t>(dec_index_)];
    Tensor emb = plain::embed_row(dec.embed, prev_token);
    Tensor q = matmul_plain(p.state.z, dec.W_state);
    std::vector<Tensor> contexts;
    contexts.reserve(p.source_idx.size());
    for (std::size_t k = 0; k < p.source_idx.size(); ++k) {
      const EncodedSource& s = (*encoded_)[p.source_idx[k]];
      contexts.push_back(attention_step(*p.attns[k], s.ann, s.proj, q, emb).context);
    }
    Tensor ctx = detail::mean_rows(contexts);
    p.state = decoder_step(m, target_, p.state, prev_token, ctx);
    return output_distribution(m, target_, p.state, ctx, prev_token, p.indicator);
  }

  const MultiWayModel* model_;
  StrategyKind strategy_;
  std::string target_;
  int dec_index_ = -1;
  std::shared_ptr<const std::vector<EncodedSource>> encoded_;
  std::vector<Path> paths_;
};

struct TranslationResult {
  std::vector<int> token_ids;  // without the final EOS
  double logprob = 0.0;        // sum over emitted steps, EOS included when reached
  bool reached_eos = false;
};

namespace detail {

inline int argmax_lowest(const Tensor& dist) {
  int best = 0;
  for (std::size_t j = 1; j < dist.cols(); ++j) {
    if (dist.data()[j] > dist.data()[best]) best = static_cast<int>(j);
  }
  return best;
}

inline TranslationResult greedy_decode(DecodeSession session) {
  TranslationResult out;
  int prev = Vocab::kBos;
  for (int step = 0; step < session.max_len() + 1; ++step) {
    Tensor dist = session.advance(prev);
    const int pick = argmax_lowest(dist);
    out.logprob += std::log(dist.data()[pick]);
    if (pick == Vocab::kEos) {
      out.reached_eos = true;
      break;
    }
    out.token_ids.push_back(pick);
    if (static_cast<int>(out.token_ids.size()) >= session.max_len()) break;
    prev = pick;
  }
  return out;
}

struct BeamHypothesis {
  std::vector<int> tokens;
  double logprob = 0.0;  // non-increasing as tokens are appended
  bool finished = false;
  DecodeSession session;
  int prev = Vocab::kBos;
};

inline bool hyp_better(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.logprob != b.logprob) return a.logprob > b.logprob;
  return a.tokens < b.tokens;  // ties broken toward lower token ids
}

inline TranslationResult beam_decode(const DecodeSession& root, int beam_width) {
  std::vector<BeamHypothesis> live;
  live.push_back(BeamHypothesis{{}, 0.0, false, root, Vocab::kBos});
  std::vector<BeamHypothesis> finished;

  const int max_len = root.max_len();
  for (int step = 0; step < max_len + 1 && !live.empty(); ++step) {
    std::vector<BeamHypothesis> candidates;
    for (BeamHypothesis& h : live) {
      Tensor dist = h.session.advance(h.prev);
      for (int tok = 0; tok < static_cast<int>(dist.cols()); ++tok) {
        const double p = dist.data()[tok];
        BeamHypothesis child = h;
        child.logprob += std::log(p);
        if (tok == Vocab::kEos) {
          child.finished = true;
        } else {
          child.tokens.push_back(tok);
          child.prev = tok;
        }
        candidates.push_back(std::move(child));
      }
    }
    std::sort(candidates.begin(), candidates.end(), hyp_better);
    if (candidates.size() > static_cast<std::size_t>(beam_width)) {
      candidates.erase(candidates.begin() + beam_width, candidates.end());
    }
    live.clear();
    for (BeamHypothesis& c : candidates) {
      if (c.finished || static_cast<int>(c.tokens.size()) >= max_len) {
        finished.push_back(std::move(c));
      } else {
        live.push_back(std::move(c));
      }
    }
  }
  for (BeamHypothesis& h : live) finished.push_back(std::move(h));

  const BeamHypothesis* best = nullptr;
  for (const BeamHypothesis& h : finished) {
    if (!best || hyp_better(h, *best)) best = &h;
  }
  TranslationResult out;
  out.token_ids = best->tokens;
  out.logprob = best->logprob;
  out.reached_eos = best->finished;
  return out;
}

}  // namespace detail

/// Decode one sentence (given in one or more source languages) into the target
/// language. beam_width 1 is stepwise argmax; wider beams score by the sum of
/// log-probabilities without length normalization and never return a
/// hypothesis scoring below the greedy one.
inline TranslationResult translate_ids(const MultiWayModel& model, StrategyKind strategy,
                                       const std::vector<std::pair<std::string, std::vector<int>>>& sources,
                                       const std::string& target_lang, int beam_width = 1) {
  if (beam_width < 1) throw std::invalid_argument("translate: beam width must be >= 1");
  DecodeSession session(model, strategy, sources, target_lang);
  if (beam_width == 1) return detail::greedy_decode(std::move(session));
  TranslationResult beam = detail::beam_decode(session, beam_width);
  TranslationResult greedy = detail::greedy_decode(std::move(session));
  return beam.logprob >= greedy.logprob ? beam : greedy;
}

struct SourceSentence {
  std::string lang;
  Sentence tokens;
};

inline TranslationResult translate(const MultiWayModel& model, StrategyKind strategy,
                                   const std::vector<SourceSentence>& sources,
                                   const std::string& target_lang, int beam_width = 1) {
  std::vector<std::pair<std::string, std::vector<int>>> ids;
  ids.reserve(sources.size());
  for (const SourceSentence& s : sources) {
    ids.emplace_back(s.lang, model.vocab(s.lang).encode(s.tokens));
  }
  return translate_ids(model, strategy, ids, target_lang, beam_width);
}

inline Sentence to_tokens(const MultiWayModel& model, const std::string& lang,
                          const TranslationResult& r) {
  return model.vocab(lang).decode(r.token_ids);
}

/// Pivot composition: source -> pivot with greedy one-to-one, then pivot (or
/// source+pivot under a many-to-one strategy) -> target. Keeps only the 1-best
/// pivot translation.
inline TranslationResult translate_pivot(const MultiWayModel& model, const std::string& source_lang,
                                         const std::string& pivot_lang, const std::string& target_lang,
                                         const std::vector<int>& token_ids,
                                         StrategyKind second_stage = StrategyKind::OneToOne,
                                         int beam_width = 1) {
  if (pivot_lang == target_lang) {
    throw std::invalid_argument("translate_pivot: pivot language equals the target language");
  }
  if (!model.trained_pairs.empty()) {
    if (!model.trained_pairs.count(MultiWayModel::pair_key(source_lang, pivot_lang))) {
      throw std::invalid_argument("translate_pivot: " + source_lang + "->" + pivot_lang +
                                  " is not a trained direction");
    }
    if (!model.trained_pairs.count(MultiWayModel::pair_key(pivot_lang, target_lang))) {
      throw std::invalid_argument("translate_pivot: " + pivot_lang + "->" + target_lang +
                                  " is not a trained direction");
    }
  }
  TranslationResult stage1 =
      translate_ids(model, StrategyKind::OneToOne, {{source_lang, token_ids}}, pivot_lang, 1);
  if (second_stage == StrategyKind::OneToOne) {
    return translate_ids(model, StrategyKind::OneToOne, {{pivot_lang, stage1.token_ids}},
                         target_lang, beam_width);
  }
  return translate_ids(model, second_stage,
                       {{source_lang, token_ids}, {pivot_lang, stage1.token_ids}}, target_lang,
                       beam_width);
}

}  // namespace mwnmt
