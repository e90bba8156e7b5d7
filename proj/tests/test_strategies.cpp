#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mwnmt/strategies.hpp"

using namespace mwnmt;

namespace {

ModelConfig toy_config(int vocab = 12) {
  ModelConfig c;
  c.embed_dim = 3;
  c.hidden_dim = 4;
  c.attn_dim = 5;
  c.max_decode_len = 8;
  c.encoders = {{"S", vocab}, {"E", vocab}, {"F", vocab}};
  c.decoders = {{"S", vocab}, {"E", vocab}, {"F", vocab}};
  return c;
}

std::vector<int> ids(std::initializer_list<int> v) { return std::vector<int>(v); }

}  // namespace

TEST_CASE("combine_context_early is the arithmetic mean") {
  Tensor a = Tensor::row({1.0, 2.0});
  Tensor b = Tensor::row({3.0, 4.0});
  auto [ctx, init] = combine_context_early({a, b}, {b, a});
  CHECK(ctx.data()[0] == 2.0);
  CHECK(ctx.data()[1] == 3.0);
  CHECK(init.data()[0] == 2.0);
  CHECK(init.data()[1] == 3.0);

  SECTION("identical vectors are a fixed point") {
    auto [c2, i2] = combine_context_early({a, a}, {a, a});
    CHECK(c2.data()[0] == a.data()[0]);
    CHECK(c2.data()[1] == a.data()[1]);
  }

  SECTION("three basis vectors average to 1/3 each") {
    Tensor e1 = Tensor::row({1.0, 0.0, 0.0});
    Tensor e2 = Tensor::row({0.0, 1.0, 0.0});
    Tensor e3 = Tensor::row({0.0, 0.0, 1.0});
    auto [c3, i3] = combine_context_early({e1, e2, e3}, {e1, e2, e3});
    for (int j = 0; j < 3; ++j) CHECK(c3.data()[j] == Catch::Approx(1.0 / 3).margin(1e-15));
  }

  SECTION("width mismatch and single input are rejected") {
    Tensor w = Tensor::row({1.0, 2.0, 3.0});
    CHECK_THROWS_AS(combine_context_early({a, w}, {a, w}), std::invalid_argument);
    CHECK_THROWS_AS(combine_context_early({a}, {a}), std::invalid_argument);
  }
}

TEST_CASE("combine_distributions_late averages distributions") {
  Tensor a = Tensor::row({0.2, 0.8});
  Tensor b = Tensor::row({0.6, 0.4});
  Tensor m = combine_distributions_late({a, b});
  CHECK(m.data()[0] == Catch::Approx(0.4).margin(1e-15));
  CHECK(m.data()[1] == Catch::Approx(0.6).margin(1e-15));

  SECTION("identical distributions are unchanged bitwise") {
    Tensor same = combine_distributions_late({a, a});
    CHECK(same.data()[0] == a.data()[0]);
    CHECK(same.data()[1] == a.data()[1]);
  }

  SECTION("the mean of distributions sums to one") {
    Tensor c = Tensor::row({0.05, 0.95});
    Tensor m3 = combine_distributions_late({a, b, c});
    CHECK(m3.data()[0] + m3.data()[1] == Catch::Approx(1.0).margin(1e-12));
  }

  SECTION("length mismatch is rejected") {
    Tensor w = Tensor::row({0.5, 0.25, 0.25});
    CHECK_THROWS_AS(combine_distributions_late({a, w}), std::invalid_argument);
  }

  SECTION("non-distributions are rejected") {
    Tensor bad = Tensor::row({0.9, 0.9});
    CHECK_THROWS_AS(combine_distributions_late({a, bad}), std::invalid_argument);
  }
}

TEST_CASE("every per-step distribution sums to one") {
  MultiWayModel m = make_model(toy_config(), 31);
  for (StrategyKind k : {StrategyKind::OneToOne, StrategyKind::EarlyAverage,
                         StrategyKind::LateAverage, StrategyKind::EarlyPlusLate}) {
    std::vector<std::pair<std::string, std::vector<int>>> sources;
    sources.emplace_back("S", ids({4, 5, 6}));
    if (k != StrategyKind::OneToOne) sources.emplace_back("F", ids({7, 8}));
    DecodeSession session(m, k, sources, "E");
    int prev = Vocab::kBos;
    for (int step = 0; step < 6; ++step) {
      Tensor dist = session.advance(prev);
      double sum = 0.0;
      for (std::size_t j = 0; j < dist.size(); ++j) sum += dist.data()[j];
      CHECK(std::abs(sum - 1.0) <= 1e-12);
      prev = detail::argmax_lowest(dist);
      if (prev == Vocab::kEos) break;
    }
  }
}

TEST_CASE("greedy output is the stepwise argmax") {
  MultiWayModel m = make_model(toy_config(), 32);
  TranslationResult r = translate_ids(m, StrategyKind::OneToOne, {{"S", ids({4, 5, 6, 7})}}, "E", 1);

  DecodeSession session(m, StrategyKind::OneToOne, {{"S", ids({4, 5, 6, 7})}}, "E");
  int prev = Vocab::kBos;
  std::vector<int> expect;
  for (int step = 0; step < m.config.max_decode_len; ++step) {
    Tensor dist = session.advance(prev);
    int pick = detail::argmax_lowest(dist);
    if (pick == Vocab::kEos) break;
    expect.push_back(pick);
    prev = pick;
  }
  CHECK(r.token_ids == expect);
}

TEST_CASE("argmax is invariant under strictly monotone rescaling") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor d(1, 9);
    double sum = 0.0;
    for (std::size_t j = 0; j < 9; ++j) {
      d.data()[j] = rng.uniform(0.001, 1.0);
      sum += d.data()[j];
    }
    for (std::size_t j = 0; j < 9; ++j) d.data()[j] /= sum;
    Tensor scaled = d;
    for (std::size_t j = 0; j < 9; ++j) scaled.data()[j] = 3.0 * std::log(scaled.data()[j]) + 7.0;
    CHECK(detail::argmax_lowest(d) == detail::argmax_lowest(scaled));
  }
}

TEST_CASE("late average over two identical paths equals one-to-one bitwise") {
  MultiWayModel m = make_model(toy_config(), 33);
  const std::vector<int> src = ids({4, 9, 5, 6});

  DecodeSession one(m, StrategyKind::OneToOne, {{"S", src}}, "E");
  DecodeSession late(m, StrategyKind::LateAverage, {{"S", src}, {"S", src}}, "E");
  int prev = Vocab::kBos;
  for (int step = 0; step < 6; ++step) {
    Tensor a = one.advance(prev);
    Tensor b = late.advance(prev);
    REQUIRE(a.size() == b.size());
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(a.data()[j] == b.data()[j]);
    prev = detail::argmax_lowest(a);
    if (prev == Vocab::kEos) break;
  }
}

TEST_CASE("early+late with identical paths reduces to the single path exactly") {
  MultiWayModel m = make_model(toy_config(), 34);
  const std::vector<int> src = ids({7, 8, 9});
  DecodeSession one(m, StrategyKind::OneToOne, {{"F", src}}, "S");
  DecodeSession el(m, StrategyKind::EarlyPlusLate, {{"F", src}, {"F", src}}, "S");
  int prev = Vocab::kBos;
  for (int step = 0; step < 5; ++step) {
    Tensor a = one.advance(prev);
    Tensor b = el.advance(prev);
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(a.data()[j] == b.data()[j]);
    prev = detail::argmax_lowest(a);
    if (prev == Vocab::kEos) break;
  }
}

TEST_CASE("beam search never scores below greedy") {
  for (std::uint64_t seed : {41ull, 42ull, 43ull, 44ull, 45ull}) {
    MultiWayModel m = make_model(toy_config(), seed);
    const std::vector<int> src = ids({4, 5, 6, 7, 8});
    TranslationResult greedy = translate_ids(m, StrategyKind::OneToOne, {{"S", src}}, "E", 1);
    for (int w : {2, 4}) {
      TranslationResult beam = translate_ids(m, StrategyKind::OneToOne, {{"S", src}}, "E", w);
      CHECK(beam.logprob >= greedy.logprob - 1e-12);
    }
  }
}

TEST_CASE("beam hypothesis log-probability is non-increasing in length") {
  MultiWayModel m = make_model(toy_config(), 46);
  TranslationResult r = translate_ids(m, StrategyKind::OneToOne, {{"S", ids({4, 5})}}, "E", 3);
  CHECK(r.logprob <= 0.0);
}

TEST_CASE("translate validates inputs") {
  MultiWayModel m = make_model(toy_config(), 35);
  CHECK_THROWS_AS(translate_ids(m, StrategyKind::OneToOne, {}, "E", 1), std::invalid_argument);
  CHECK_THROWS_AS(translate_ids(m, StrategyKind::OneToOne, {{"X", ids({4})}}, "E", 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(translate_ids(m, StrategyKind::OneToOne, {{"S", ids({4})}}, "X", 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(translate_ids(m, StrategyKind::EarlyAverage, {{"S", ids({4})}}, "E", 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(translate_ids(m, StrategyKind::OneToOne, {{"S", ids({4})}}, "E", 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      translate_ids(m, StrategyKind::OneToOne, {{"S", ids({4})}, {"F", ids({5})}}, "E", 1),
      std::invalid_argument);
}

TEST_CASE("pivot translation composes two trained stages") {
  MultiWayModel m = make_model(toy_config(), 36);
  m.trained_pairs = {"F-E", "E-S"};

  SECTION("pivot equal to target is rejected") {
    CHECK_THROWS_AS(translate_pivot(m, "F", "S", "S", ids({4, 5})), std::invalid_argument);
  }

  SECTION("untrained stages are rejected") {
    CHECK_THROWS_AS(translate_pivot(m, "S", "E", "F", ids({4, 5})), std::invalid_argument);
  }

  SECTION("one-to-one composition equals manual two-stage decoding") {
    TranslationResult direct = translate_pivot(m, "F", "E", "S", ids({4, 5, 6}));
    TranslationResult stage1 = translate_ids(m, StrategyKind::OneToOne, {{"F", ids({4, 5, 6})}}, "E", 1);
    TranslationResult stage2 =
        translate_ids(m, StrategyKind::OneToOne, {{"E", stage1.token_ids}}, "S", 1);
    CHECK(direct.token_ids == stage2.token_ids);
  }

  SECTION("many-to-one second stage sees both source and pivot indicator bits") {
    // Rig the S decoder so the F-encoder indicator bit forces one token.
    MultiWayModel rigged = m;
    rigged.decoders[0].R_ind.fill(0.0);
    Tensor& w_out = rigged.decoders[0].W_out;
    w_out.fill(0.0);
    Tensor& r_ind = rigged.decoders[0].R_ind;
    // F is encoder index 2; push readout hidden strongly when its bit is set.
    for (std::size_t j = 0; j < r_ind.cols(); ++j) r_ind(2, j) = 50.0;
    for (std::size_t j = 0; j < w_out.rows(); ++j) w_out(j, 5) = 10.0;

    TranslationResult with_f = translate_pivot(rigged, "F", "E", "S", ids({4, 5}),
                                               StrategyKind::EarlyAverage);
    TranslationResult without_f = translate_pivot(rigged, "F", "E", "S", ids({4, 5}),
                                                  StrategyKind::OneToOne);
    REQUIRE(!with_f.token_ids.empty());
    CHECK(with_f.token_ids[0] == 5);   // indicator-driven token
    CHECK(without_f.token_ids != with_f.token_ids);
  }
}
