#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "mwnmt/metrics.hpp"
#include "mwnmt/rng.hpp"

using namespace mwnmt;

namespace {

// Brute-force corpus BLEU over explicit n-gram scans; kept deliberately naive
// and separate from the library implementation.
double oracle_bleu(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs, int max_n) {
  double log_sum = 0.0;
  bool zero = false;
  long long hyp_len = 0, ref_len = 0;
  for (const Sentence& h : hyps) hyp_len += static_cast<long long>(h.size());
  for (const Sentence& r : refs) ref_len += static_cast<long long>(r.size());
  for (int n = 1; n <= max_n; ++n) {
    long long matched = 0, total = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      const Sentence& h = hyps[i];
      const Sentence& r = refs[i];
      const long long hn = static_cast<long long>(h.size()) - n + 1;
      total += std::max(0ll, hn);
      // clipped counts by scanning every distinct hyp n-gram
      for (long long s = 0; s < hn; ++s) {
        bool first = true;
        for (long long p = 0; p < s; ++p) {
          bool same = true;
          for (int q = 0; q < n; ++q) same &= h[p + q] == h[s + q];
          if (same) {
            first = false;
            break;
          }
        }
        if (!first) continue;
        long long in_hyp = 0;
        for (long long p = 0; p < hn; ++p) {
          bool same = true;
          for (int q = 0; q < n; ++q) same &= h[p + q] == h[s + q];
          if (same) ++in_hyp;
        }
        long long in_ref = 0;
        for (long long p = 0; p + n <= static_cast<long long>(r.size()); ++p) {
          bool same = true;
          for (int q = 0; q < n; ++q) same &= r[p + q] == h[s + q];
          if (same) ++in_ref;
        }
        matched += std::min(in_hyp, in_ref);
      }
    }
    double p;
    if (n >= 2 && matched == 0) {
      p = (matched + 1.0) / (total + 1.0);
    } else if (total == 0) {
      p = 0.0;
    } else {
      p = double(matched) / double(total);
    }
    if (p <= 0.0) {
      zero = true;
    } else {
      log_sum += std::log(p);
    }
  }
  double bp = (hyp_len >= ref_len || hyp_len == 0) ? (hyp_len == 0 ? 0.0 : 1.0)
                                                   : std::exp(1.0 - double(ref_len) / double(hyp_len));
  return zero ? 0.0 : 100.0 * bp * std::exp(log_sum / max_n);
}

// Full-table Levenshtein oracle.
long long oracle_edit_distance(const Sentence& h, const Sentence& r) {
  std::vector<std::vector<long long>> dp(h.size() + 1, std::vector<long long>(r.size() + 1));
  for (std::size_t i = 0; i <= h.size(); ++i) dp[i][0] = static_cast<long long>(i);
  for (std::size_t j = 0; j <= r.size(); ++j) dp[0][j] = static_cast<long long>(j);
  for (std::size_t i = 1; i <= h.size(); ++i) {
    for (std::size_t j = 1; j <= r.size(); ++j) {
      dp[i][j] = std::min({dp[i - 1][j] + 1, dp[i][j - 1] + 1,
                           dp[i - 1][j - 1] + (h[i - 1] == r[j - 1] ? 0 : 1)});
    }
  }
  return dp[h.size()][r.size()];
}

Sentence random_sentence(Rng& rng, int max_len, int vocab) {
  Sentence s;
  const int len = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len)));
  for (int i = 0; i < len; ++i) {
    s.push_back("w" + std::to_string(rng.below(static_cast<std::uint64_t>(vocab))));
  }
  return s;
}

}  // namespace

TEST_CASE("identical corpora score BLEU 100") {
  std::vector<Sentence> c{{"a", "b", "c"}, {"d", "e"}};
  CHECK(bleu(c, c).score == Catch::Approx(100.0).margin(1e-12));
}

TEST_CASE("hand-counted bigram BLEU example") {
  std::vector<Sentence> hyp{{"a", "b", "c", "d"}};
  std::vector<Sentence> ref{{"a", "b", "c", "e"}};
  BleuReport r = bleu(hyp, ref, 2);
  CHECK(r.brevity_penalty == 1.0);
  CHECK(r.precisions[0] == Catch::Approx(0.75).margin(1e-15));
  CHECK(r.precisions[1] == Catch::Approx(2.0 / 3.0).margin(1e-15));
  CHECK(r.score == Catch::Approx(100.0 * std::sqrt(0.5)).margin(1e-9));
}

TEST_CASE("bleu rejects bad inputs") {
  std::vector<Sentence> one{{"a"}};
  CHECK_THROWS_AS(bleu({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(bleu(one, {}), std::invalid_argument);
}

TEST_CASE("edit rate examples") {
  CHECK(edit_rate({"a", "b", "c"}, {"a", "b", "c"}).rate == 0.0);
  CHECK(edit_rate({"a", "x", "c"}, {"a", "b", "c"}).rate == Catch::Approx(1.0 / 3).margin(1e-15));
  EditRateReport r = edit_rate({}, {"a", "b", "c", "d"});
  CHECK(r.rate == 1.0);
  CHECK(r.distance == 4);
  CHECK_THROWS_AS(edit_rate({"a"}, {}), std::invalid_argument);
}

TEST_CASE("bleu and edit rate match brute-force oracles on 100 random cases") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const int corpus_size = 1 + static_cast<int>(rng.below(4));
    std::vector<Sentence> hyps, refs;
    for (int i = 0; i < corpus_size; ++i) {
      hyps.push_back(random_sentence(rng, 10, 5));
      refs.push_back(random_sentence(rng, 10, 5));
    }
    const double mine = bleu(hyps, refs).score;
    const double oracle = oracle_bleu(hyps, refs, 4);
    CHECK(mine == Catch::Approx(oracle).margin(1e-12));
    for (int i = 0; i < corpus_size; ++i) {
      CHECK(edit_rate(hyps[i], refs[i]).distance == oracle_edit_distance(hyps[i], refs[i]));
    }
  }
}

TEST_CASE("bleu is invariant under bijective token renaming") {
  Rng rng(7);
  std::map<std::string, std::string> rename;
  for (int i = 0; i < 5; ++i) rename["w" + std::to_string(i)] = "tok_" + std::to_string(9 - i);
  std::vector<Sentence> hyps, refs;
  for (int i = 0; i < 6; ++i) {
    hyps.push_back(random_sentence(rng, 10, 5));
    refs.push_back(random_sentence(rng, 10, 5));
  }
  auto renamed = [&](const std::vector<Sentence>& in) {
    std::vector<Sentence> out = in;
    for (Sentence& s : out) {
      for (std::string& t : s) t = rename.at(t);
    }
    return out;
  };
  CHECK(bleu(hyps, refs).score == Catch::Approx(bleu(renamed(hyps), renamed(refs)).score).margin(1e-12));
}

TEST_CASE("score ranges and T-B monotonicity") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Sentence> hyps{random_sentence(rng, 10, 5)};
    std::vector<Sentence> refs{random_sentence(rng, 10, 5)};
    const double b = bleu(hyps, refs).score;
    CHECK(b >= 0.0);
    CHECK(b <= 100.0);
    CHECK(edit_rate(hyps[0], refs[0]).rate >= 0.0);
  }
  CHECK(tb_score(40.0, 10.0) > tb_score(40.0, 30.0));
}

TEST_CASE("tb_score follows the (TER - BLEU) / 2 rule") {
  CHECK(tb_score(30.0, 20.0) == 5.0);
  CHECK(tb_score(25.0, 25.0) == 0.0);
  CHECK(tb_score(0.0, 100.0) == -50.0);
}

TEST_CASE("evaluate_corpus is deterministic and aggregates all four scores") {
  ModelConfig c;
  c.embed_dim = 3;
  c.hidden_dim = 4;
  c.attn_dim = 4;
  c.max_decode_len = 8;
  LanguageSpec se{"S", "s", LanguageSpec::Transform::merge, 2, false, 8};
  LanguageSpec ee{"E", "e", LanguageSpec::Transform::identity, 1, false, 8};
  c.encoders = {{"S", Vocab::for_language(se).size()}, {"E", Vocab::for_language(ee).size()}};
  c.decoders = c.encoders;
  MultiWayModel m = make_model(c, 5);
  m.vocabs["S"] = Vocab::for_language(se);
  m.vocabs["E"] = Vocab::for_language(ee);

  ParallelCorpus corpus = gen_parallel_corpus({se, ee}, 10, 2, 5, 3);
  EvalReport a = evaluate_corpus(m, StrategyKind::OneToOne, corpus, {"S"}, "E");
  EvalReport b = evaluate_corpus(m, StrategyKind::OneToOne, corpus, {"S"}, "E");
  CHECK(a.bleu == b.bleu);
  CHECK(a.ter_approx == b.ter_approx);
  CHECK(a.tb == b.tb);
  CHECK(a.exact_match == b.exact_match);
  CHECK(a.hypotheses == b.hypotheses);
  CHECK(a.tb == Catch::Approx(tb_score(a.ter_approx, a.bleu)).margin(1e-12));
  REQUIRE(a.hypotheses.size() == 10);
}
