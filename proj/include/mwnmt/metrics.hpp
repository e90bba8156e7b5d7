#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "strategies.hpp"

namespace mwnmt {

struct BleuReport {
  std::vector<double> precisions;  // modified n-gram precisions, n = 1..max_n
  double brevity_penalty = 0.0;
  double score = 0.0;  // percentage, 0..100
};

/// Corpus-level BLEU with brevity penalty. Higher-order precisions with a zero
/// numerator get add-one smoothing; short desk-scale sentences would otherwise
/// collapse the geometric mean to zero.
inline BleuReport bleu(const std::vector<Sentence>& hypotheses,
                       const std::vector<Sentence>& references, int max_n = 4) {
  if (hypotheses.empty()) throw std::invalid_argument("bleu: empty hypothesis set");
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("bleu: hypothesis/reference counts differ");
  }
  if (max_n < 1) throw std::invalid_argument("bleu: max_n must be >= 1");

  std::vector<long long> matched(static_cast<std::size_t>(max_n), 0);
  std::vector<long long> total(static_cast<std::size_t>(max_n), 0);
  long long hyp_len = 0, ref_len = 0;

  using Ngram = std::vector<std::string>;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const Sentence& hyp = hypotheses[i];
    const Sentence& ref = references[i];
    hyp_len += static_cast<long long>(hyp.size());
    ref_len += static_cast<long long>(ref.size());
    for (int n = 1; n <= max_n; ++n) {
      std::map<Ngram, long long> ref_counts;
      for (std::size_t s = 0; s + n <= ref.size(); ++s) {
        ref_counts[Ngram(ref.begin() + s, ref.begin() + s + n)]++;
      }
      std::map<Ngram, long long> hyp_counts;
      for (std::size_t s = 0; s + n <= hyp.size(); ++s) {
        hyp_counts[Ngram(hyp.begin() + s, hyp.begin() + s + n)]++;
      }
      for (const auto& [gram, count] : hyp_counts) {
        total[n - 1] += count;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matched[n - 1] += std::min(count, it->second);
      }
    }
  }

  BleuReport report;
  report.precisions.resize(static_cast<std::size_t>(max_n));
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 1; n <= max_n; ++n) {
    double p;
    if (n >= 2 && matched[n - 1] == 0) {
      p = (static_cast<double>(matched[n - 1]) + 1.0) / (static_cast<double>(total[n - 1]) + 1.0);
    } else if (total[n - 1] == 0) {
      p = 0.0;
    } else {
      p = static_cast<double>(matched[n - 1]) / static_cast<double>(total[n - 1]);
    }
    report.precisions[n - 1] = p;
    if (p <= 0.0) {
      zero = true;
    } else {
      log_sum += std::log(p);
    }
  }
  report.brevity_penalty =
      (hyp_len >= ref_len || hyp_len == 0)
          ? (hyp_len == 0 ? 0.0 : 1.0)
          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  report.score = zero ? 0.0
                      : 100.0 * report.brevity_penalty * std::exp(log_sum / static_cast<double>(max_n));
  return report;
}

struct EditRateReport {
  long long distance = 0;
  long long reference_length = 0;
  double rate = 0.0;
};

/// Word-level Levenshtein rate (TER approximation without block shifts,
/// reported as "ter_approx" everywhere).
inline EditRateReport edit_rate(const Sentence& hypothesis, const Sentence& reference) {
  if (reference.empty()) throw std::invalid_argument("edit_rate: empty reference");
  const std::size_t H = hypothesis.size(), R = reference.size();
  std::vector<long long> prev(R + 1), cur(R + 1);
  for (std::size_t j = 0; j <= R; ++j) prev[j] = static_cast<long long>(j);
  for (std::size_t i = 1; i <= H; ++i) {
    cur[0] = static_cast<long long>(i);
    for (std::size_t j = 1; j <= R; ++j) {
      const long long sub = prev[j - 1] + (hypothesis[i - 1] == reference[j - 1] ? 0 : 1);
      cur[j] = std::min(std::min(prev[j] + 1, cur[j - 1] + 1), sub);
    }
    std::swap(prev, cur);
  }
  EditRateReport report;
  report.distance = prev[R];
  report.reference_length = static_cast<long long>(R);
  report.rate = static_cast<double>(report.distance) /
                static_cast<double>(std::max<long long>(1, report.reference_length));
  return report;
}

/// Early-stopping score (TER - BLEU) / 2, both in percentage points; lower is
/// better.
inline double tb_score(double ter_percent, double bleu_percent) {
  return (ter_percent - bleu_percent) / 2.0;
}

struct EvalReport {
  double bleu = 0.0;
  double ter_approx = 0.0;  // percent: 100 * total edits / total reference words
  double tb = 0.0;
  double exact_match = 0.0;  // percent of exactly matching sentences
  std::vector<Sentence> hypotheses;
};

/// Decode a held-out corpus with a strategy and score it against references.
/// An empty pivot_lang decodes directly; otherwise the pivot composition of
/// translate_pivot is used with `strategy` as its second stage.
inline EvalReport evaluate_corpus(const MultiWayModel& model, StrategyKind strategy,
                                  const ParallelCorpus& corpus,
                                  const std::vector<std::string>& source_langs,
                                  const std::string& target_lang, int beam_width = 1,
                                  const std::string& pivot_lang = "") {
  if (source_langs.empty()) throw std::invalid_argument("evaluate_corpus: no source languages");
  const std::vector<Sentence>& refs = corpus.side(target_lang);
  EvalReport report;
  report.hypotheses.reserve(refs.size());
  long long exact = 0;
  long long edits = 0, ref_words = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    TranslationResult r;
    if (pivot_lang.empty()) {
      std::vector<SourceSentence> sources;
      for (const std::string& lang : source_langs) {
        sources.push_back({lang, corpus.side(lang)[i]});
      }
      r = translate(model, strategy, sources, target_lang, beam_width);
    } else {
      const std::vector<int> src_ids =
          model.vocab(source_langs.front()).encode(corpus.side(source_langs.front())[i]);
      r = translate_pivot(model, source_langs.front(), pivot_lang, target_lang, src_ids, strategy,
                          beam_width);
    }
    Sentence hyp = to_tokens(model, target_lang, r);
    if (hyp == refs[i]) ++exact;
    EditRateReport er = edit_rate(hyp, refs[i]);
    edits += er.distance;
    ref_words += er.reference_length;
    report.hypotheses.push_back(std::move(hyp));
  }
  report.bleu = bleu(report.hypotheses, refs).score;
  report.ter_approx = 100.0 * static_cast<double>(edits) / static_cast<double>(std::max<long long>(1, ref_words));
  report.tb = tb_score(report.ter_approx, report.bleu);
  report.exact_match = 100.0 * static_cast<double>(exact) / static_cast<double>(refs.size());
  return report;
}

}  // namespace mwnmt
