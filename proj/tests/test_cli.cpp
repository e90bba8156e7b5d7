#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "mwnmt/checkpoint.hpp"
#include "mwnmt/run_config.hpp"

using namespace mwnmt;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
  fs::path path;
  TmpDir() : path(fs::temp_directory_path() / ("mwnmt_cli_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
};

int run(const std::string& args) {
  const std::string cmd = std::string(MWNMT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("run config rejects unknown keys by name") {
  nlohmann::json j;
  j["train"]["batch_sizes"] = 4;
  CHECK_THROWS_WITH(parse_run_config(j), Catch::Matchers::ContainsSubstring("batch_sizes"));

  nlohmann::json ok;
  ok["train"]["batch_size"] = 4;
  ok["model"]["hidden_dim"] = 16;
  RunConfig cfg = parse_run_config(ok);
  CHECK(cfg.train.batch_size == 4);
  CHECK(cfg.hidden_dim == 16);
  CHECK(cfg.embed_dim == 32);  // untouched defaults
  CHECK(cfg.pairs.size() == 4);
}

TEST_CASE("default testbed matches the documented topology") {
  RunConfig cfg;
  CHECK(cfg.data.languages.size() == 3);
  CHECK(cfg.language("E").transform == LanguageSpec::Transform::identity);
  CHECK(cfg.language("S").transform == LanguageSpec::Transform::merge);
  CHECK(cfg.language("S").k == 2);
  CHECK(cfg.language("F").transform == LanguageSpec::Transform::multiply);
  CHECK(cfg.language("F").reversed);
  CHECK(cfg.data.latent_vocab == 20);
  CHECK(cfg.train.clip_norm == 1.0);
  CHECK(cfg.train.batch_size == 80);
}

TEST_CASE("model_config_for_pairs builds encoders for sources and decoders for targets") {
  RunConfig cfg;
  ModelConfig single = model_config_for_pairs(cfg, {"S-E"});
  REQUIRE(single.encoders.size() == 1);
  REQUIRE(single.decoders.size() == 1);
  CHECK(single.encoders[0].name == "S");
  CHECK(single.decoders[0].name == "E");

  ModelConfig multi = model_config_for_pairs(cfg, {"S-E", "E-S", "F-E", "E-F"});
  CHECK(multi.encoders.size() == 3);
  CHECK(multi.decoders.size() == 3);
}

TEST_CASE("gen-data writes aligned corpora deterministically") {
  TmpDir tmp;
  const std::string d1 = (tmp.path / "a").string();
  const std::string d2 = (tmp.path / "b").string();
  const std::string sizes =
      " --set data.train_pairs=50 --set data.dev_pairs=10 --set data.test_pairs=10";
  REQUIRE(run("gen-data --out-dir " + d1 + " --seed 5" + sizes) == 0);
  REQUIRE(run("gen-data --out-dir " + d2 + " --seed 5" + sizes) == 0);
  for (const char* base : {"train", "dev", "test"}) {
    for (const char* lang : {"E", "S", "F"}) {
      const std::string name = std::string(base) + "." + lang;
      CHECK(slurp(tmp.path / "a" / name) == slurp(tmp.path / "b" / name));
    }
    const std::size_t lines_e = read_corpus_side(tmp.path / "a" / (std::string(base) + ".E")).size();
    const std::size_t lines_f = read_corpus_side(tmp.path / "a" / (std::string(base) + ".F")).size();
    CHECK(lines_e == lines_f);
  }
}

TEST_CASE("bad config keys exit with code 2 naming the key") {
  TmpDir tmp;
  std::ofstream(tmp.path / "bad.json") << R"({"train": {"batch_sizes": 10}})";
  CHECK(run("gen-data --config " + (tmp.path / "bad.json").string() + " --out-dir " +
            (tmp.path / "x").string()) == 2);
}

TEST_CASE("missing input files exit with code 1") {
  CHECK(run("translate --checkpoint /nonexistent.ckpt --src-langs F --tgt-lang E "
            "--input /nonexistent.txt --output /dev/null") == 1);
}

TEST_CASE("unknown strategies exit with code 2") {
  TmpDir tmp;
  // Build a checkpoint so the strategy check is what fails.
  const std::string sizes =
      " --set data.train_pairs=30 --set data.dev_pairs=6 --set data.test_pairs=6";
  REQUIRE(run("gen-data --out-dir " + (tmp.path / "d").string() + " --seed 2" + sizes) == 0);
  const std::string small_model =
      " --set model.hidden_dim=8 --set model.embed_dim=4 --set model.attn_dim=4";
  REQUIRE(run("train --data-dir " + (tmp.path / "d").string() + " --pairs F-E --out " +
              (tmp.path / "m.ckpt").string() + " --set train.max_updates=2" + small_model) == 0);
  CHECK(run("translate --checkpoint " + (tmp.path / "m.ckpt").string() +
            " --strategy sideways --src-langs F --tgt-lang E --input " +
            (tmp.path / "d/test.F").string() + " --output /dev/null") == 2);
}

TEST_CASE("train, translate and evaluate compose end to end") {
  TmpDir tmp;
  const std::string d = (tmp.path / "d").string();
  const std::string sizes =
      " --set data.train_pairs=40 --set data.dev_pairs=8 --set data.test_pairs=8";
  REQUIRE(run("gen-data --out-dir " + d + " --seed 3" + sizes) == 0);
  const std::string small =
      " --set model.hidden_dim=8 --set model.embed_dim=4 --set model.attn_dim=4"
      " --set train.max_updates=4 --set train.batch_size=8";
  const std::string ckpt = (tmp.path / "m.ckpt").string();
  REQUIRE(run("train --data-dir " + d + " --pairs F-E,E-F --out " + ckpt + small) == 0);

  // The checkpoint records the trained directions.
  MultiWayModel m = load_checkpoint(ckpt).model;
  CHECK(m.trained_pairs.count("F-E") == 1);
  CHECK(m.trained_pairs.count("E-F") == 1);
  CHECK(m.trained_pairs.count("F-S") == 0);

  const std::string out1 = (tmp.path / "out1.txt").string();
  const std::string out2 = (tmp.path / "out2.txt").string();
  REQUIRE(run("translate --checkpoint " + ckpt + " --strategy one --src-langs F --tgt-lang E "
              "--input " + d + "/test.F --output " + out1) == 0);
  REQUIRE(run("translate --checkpoint " + ckpt + " --strategy one --src-langs F --tgt-lang E "
              "--input " + d + "/test.F --output " + out2) == 0);
  CHECK(slurp(out1) == slurp(out2));
  CHECK(read_corpus_side(out1).size() == 8);

  CHECK(run("evaluate --checkpoint " + ckpt + " --strategy one --pair F-E --test-set " + d +
            "/test") == 0);
}

TEST_CASE("gen-pseudo writes the corpus and its provenance sidecar") {
  TmpDir tmp;
  const std::string d = (tmp.path / "d").string();
  const std::string sizes =
      " --set data.train_pairs=30 --set data.dev_pairs=6 --set data.test_pairs=6";
  REQUIRE(run("gen-data --out-dir " + d + " --seed 4" + sizes) == 0);
  const std::string small =
      " --set model.hidden_dim=8 --set model.embed_dim=4 --set model.attn_dim=4"
      " --set train.max_updates=4 --set train.batch_size=8";
  const std::string ckpt = (tmp.path / "m.ckpt").string();
  REQUIRE(run("train --data-dir " + d + " --pairs S-E,E-S,F-E,E-F --out " + ckpt + small) == 0);

  const std::string out = (tmp.path / "pseudo").string();
  REQUIRE(run("gen-pseudo --checkpoint " + ckpt + " --pivot-corpus " + d +
              "/train --source-lang F --pivot-lang E --target-lang S --n 10 --seed 9 --out " + out) == 0);
  CHECK(read_corpus_side(out + ".F").size() == 10);
  CHECK(read_corpus_side(out + ".S").size() == 10);

  // Target side is verbatim from the sampled true corpus.
  std::vector<Sentence> target = read_corpus_side(out + ".S");
  std::vector<Sentence> full = read_corpus_side(d + "/train.S");
  std::ifstream prov(out + ".provenance");
  std::string line;
  std::size_t row = 0;
  while (std::getline(prov, line)) {
    const std::size_t t1 = line.find('\t');
    const std::size_t t2 = line.find('\t', t1 + 1);
    const std::size_t idx = std::stoull(line.substr(t1 + 1, t2 - t1 - 1));
    CHECK(target[row] == full[idx]);
    ++row;
  }
  CHECK(row == 10);

  // Determinism in the same checkpoint and seed.
  const std::string out_b = (tmp.path / "pseudo_b").string();
  REQUIRE(run("gen-pseudo --checkpoint " + ckpt + " --pivot-corpus " + d +
              "/train --source-lang F --pivot-lang E --target-lang S --n 10 --seed 9 --out " + out_b) == 0);
  CHECK(slurp(out + ".F") == slurp(out_b + ".F"));
  CHECK(slurp(out + ".provenance") == slurp(out_b + ".provenance"));
}

TEST_CASE("finetune clones when needed and reports the freeze contract") {
  TmpDir tmp;
  const std::string d = (tmp.path / "d").string();
  REQUIRE(run("gen-data --out-dir " + d + " --seed 6 --set data.train_pairs=30"
              " --set data.dev_pairs=6 --set data.test_pairs=6") == 0);
  const std::string small =
      " --set model.hidden_dim=8 --set model.embed_dim=4 --set model.attn_dim=4"
      " --set train.max_updates=4 --set train.batch_size=8";
  const std::string ckpt = (tmp.path / "m.ckpt").string();
  REQUIRE(run("train --data-dir " + d + " --pairs S-E,E-S,F-E,E-F --out " + ckpt + small) == 0);

  const std::string tuned = (tmp.path / "tuned.ckpt").string();
  REQUIRE(run("finetune --checkpoint " + ckpt + " --pair F-S --corpus " + d +
              "/train --batch 8 --out " + tuned + " --set train.max_updates=3") == 0);

  MultiWayModel before = load_checkpoint(ckpt).model;
  MultiWayModel after = load_checkpoint(tuned).model;
  CHECK(after.attention_id_for("F", "S") == "F-S");
  auto before_digests = parameter_digests(before);
  auto after_digests = parameter_digests(after);
  for (const auto& [path, digest] : before_digests) {
    CHECK(digest == after_digests.at(path));  // original parameters all frozen
  }
  CHECK(after_digests.count("attention/F-S/v") == 1);
}

TEST_CASE("grad-check exits zero under the threshold and nonzero above it") {
  CHECK(run("grad-check --seed 3") == 0);
  CHECK(run("grad-check --seed 3 --threshold 1e-9") == 1);
}
