#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "mwnmt/data.hpp"

using namespace mwnmt;

namespace {

LanguageSpec spec_e() { return {"E", "e", LanguageSpec::Transform::identity, 1, false, 20}; }
LanguageSpec spec_s() { return {"S", "s", LanguageSpec::Transform::merge, 2, false, 20}; }
LanguageSpec spec_f() { return {"F", "f", LanguageSpec::Transform::multiply, 3, true, 20}; }

}  // namespace

TEST_CASE("render applies shift, multiply+reverse and merge") {
  LanguageSpec shift{"A", "s", LanguageSpec::Transform::shift, 7, false, 20};
  CHECK(render(shift, {3, 1, 4}) == Sentence{"s10", "s8", "s11"});

  CHECK(render(spec_f(), {3, 1, 4}) == Sentence{"f12", "f3", "f9"});

  CHECK(render(spec_s(), {3, 1, 4}) == Sentence{"s1", "s0", "s2"});
}

TEST_CASE("render rejects out-of-range latent symbols") {
  CHECK_THROWS_AS(render(spec_e(), {20}), std::invalid_argument);
  CHECK_THROWS_AS(render(spec_e(), {-1}), std::invalid_argument);
}

TEST_CASE("multiply transform must be coprime with the vocabulary") {
  LanguageSpec bad{"B", "b", LanguageSpec::Transform::multiply, 4, false, 20};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("bijective specs invert back to the latent sequence") {
  std::vector<int> latent{3, 1, 4, 15, 9};
  for (const LanguageSpec& spec : {spec_e(), spec_f()}) {
    Sentence rendered = render(spec, latent);
    std::vector<int> surface;
    for (const std::string& t : rendered) surface.push_back(std::stoi(t.substr(spec.prefix.size())));
    if (spec.reversed) std::reverse(surface.begin(), surface.end());
    std::vector<int> back;
    for (int s : surface) back.push_back(spec.invert_symbol(s));
    CHECK(back == latent);
  }
}

TEST_CASE("reference_translate is the bijective-language oracle") {
  std::vector<int> latent{5, 0, 19, 7};
  Sentence f = render(spec_f(), latent);
  Sentence e = render(spec_e(), latent);
  CHECK(reference_translate(spec_f(), spec_e(), f) == e);
  CHECK(reference_translate(spec_e(), spec_f(), e) == f);
  // Merge renders are reachable as a target through the oracle too.
  CHECK(reference_translate(spec_e(), spec_s(), e) == render(spec_s(), latent));
}

TEST_CASE("corpus generation is deterministic and aligned") {
  std::vector<LanguageSpec> specs{spec_e(), spec_s(), spec_f()};
  ParallelCorpus a = gen_parallel_corpus(specs, 50, 3, 12, 42);
  ParallelCorpus b = gen_parallel_corpus(specs, 50, 3, 12, 42);
  REQUIRE(a.size() == 50);
  for (const std::string& lang : {"E", "S", "F"}) {
    CHECK(a.side(lang) == b.side(lang));
  }
  ParallelCorpus c = gen_parallel_corpus(specs, 50, 3, 12, 43);
  CHECK(a.side("E") != c.side("E"));

  // Every line of every language decodes to a common latent sequence.
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(reference_translate(spec_f(), spec_e(), a.side("F")[i]) == a.side("E")[i]);
    CHECK(reference_translate(spec_e(), spec_s(), a.side("E")[i]) == a.side("S")[i]);
  }
}

TEST_CASE("corpus length statistics follow the uniform draw") {
  ParallelCorpus corpus = gen_parallel_corpus({spec_e()}, 10000, 3, 12, 7);
  double total = 0.0;
  for (const Sentence& s : corpus.side("E")) total += static_cast<double>(s.size());
  const double mean = total / 10000.0;
  CHECK(mean >= 7.0);
  CHECK(mean <= 8.0);
}

TEST_CASE("generated corpora never contain UNK") {
  std::vector<LanguageSpec> specs{spec_e(), spec_s(), spec_f()};
  ParallelCorpus corpus = gen_parallel_corpus(specs, 200, 3, 12, 5);
  for (const LanguageSpec& spec : specs) {
    Vocab v = Vocab::for_language(spec);
    for (const Sentence& s : corpus.side(spec.name)) {
      for (int id : v.encode(s)) CHECK(id != Vocab::kUnk);
    }
  }
}

TEST_CASE("gen_parallel_corpus rejects bad arguments") {
  CHECK_THROWS_AS(gen_parallel_corpus({spec_e()}, 0, 3, 12, 1), std::invalid_argument);
  CHECK_THROWS_AS(gen_parallel_corpus({spec_e()}, 5, 6, 5, 1), std::invalid_argument);
  LanguageSpec other = spec_s();
  other.latent_vocab = 10;
  CHECK_THROWS_AS(gen_parallel_corpus({spec_e(), other}, 5, 3, 12, 1), std::invalid_argument);
}

TEST_CASE("vocab fixes specials and round-trips tokens") {
  Vocab v = Vocab::for_language(spec_s());
  CHECK(v.id_to_token[Vocab::kPad] == "<pad>");
  CHECK(v.id_to_token[Vocab::kBos] == "<bos>");
  CHECK(v.id_to_token[Vocab::kEos] == "<eos>");
  CHECK(v.id_to_token[Vocab::kUnk] == "<unk>");
  CHECK(v.size() == 4 + 10);
  CHECK(v.id("s0") == 4);
  CHECK(v.id("nope") == Vocab::kUnk);
  Sentence s{"s3", "s0", "s9"};
  CHECK(v.decode(v.encode(s)) == s);
}

TEST_CASE("make_batches pads, masks and appends EOS to targets") {
  Vocab ve = Vocab::for_language(spec_e());
  std::vector<Sentence> src{{"e1", "e2", "e3"}, {"e4", "e5", "e6", "e7", "e8"}};
  std::vector<Sentence> tgt{{"e1", "e2", "e3"}, {"e4", "e5", "e6", "e7", "e8"}};
  std::vector<Batch> batches = make_batches(src, tgt, ve, ve, 4, 20, 1);
  REQUIRE(batches.size() == 1);
  const Batch& b = batches[0];
  CHECK(b.src.batch == 2);
  CHECK(b.src.width == 5);
  CHECK(b.tgt.width == 6);
  for (int r = 0; r < 2; ++r) {
    const int len = b.src.lengths[static_cast<std::size_t>(r)];
    for (int c = 0; c < b.src.width; ++c) {
      CHECK(b.src.mask[static_cast<std::size_t>(r) * b.src.width + c] == (c < len ? 1.0 : 0.0));
    }
    // Targets end with EOS inside the mask.
    const int tlen = b.tgt.lengths[static_cast<std::size_t>(r)];
    CHECK(b.tgt.at(r, tlen - 1) == Vocab::kEos);
  }
  // Padding slots hold PAD ids (locate the short row; the shuffle may reorder).
  const int short_row = b.src.lengths[0] == 3 ? 0 : 1;
  CHECK(b.src.at(short_row, 4) == Vocab::kPad);
}

TEST_CASE("make_batches filters long pairs and rejects an empty result") {
  Vocab ve = Vocab::for_language(spec_e());
  std::vector<Sentence> src{{"e1", "e2", "e3"}, {"e4", "e5", "e6", "e7", "e8"}};
  std::vector<Sentence> tgt = src;
  std::vector<Batch> batches = make_batches(src, tgt, ve, ve, 4, 4, 1);
  REQUIRE(batches.size() == 1);
  CHECK(batches[0].src.batch == 1);
  CHECK(batches[0].src.width == 3);

  CHECK_THROWS_AS(make_batches(src, tgt, ve, ve, 4, 2, 1), std::invalid_argument);
}

TEST_CASE("batch shuffling is deterministic per seed") {
  Vocab ve = Vocab::for_language(spec_e());
  ParallelCorpus corpus = gen_parallel_corpus({spec_e()}, 100, 3, 8, 3);
  auto a = make_batches(corpus.side("E"), corpus.side("E"), ve, ve, 16, 20, 9);
  auto b = make_batches(corpus.side("E"), corpus.side("E"), ve, ve, 16, 20, 9);
  auto c = make_batches(corpus.side("E"), corpus.side("E"), ve, ve, 16, 20, 10);
  REQUIRE(a.size() == b.size());
  CHECK(a[0].src.ids == b[0].src.ids);
  CHECK(a[0].src.ids != c[0].src.ids);
}

TEST_CASE("corpus files round-trip through the documented format") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "mwnmt_data_test";
  fs::create_directories(dir);
  ParallelCorpus corpus = gen_parallel_corpus({spec_e(), spec_f()}, 20, 3, 8, 77);
  write_corpus(dir, "train", corpus);
  CHECK(read_corpus_side(dir / "train.E") == corpus.side("E"));
  CHECK(read_corpus_side(dir / "train.F") == corpus.side("F"));
  fs::remove_all(dir);
}
