#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "model.hpp"
#include "training.hpp"

namespace mwnmt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian IEEE-754; add byte swapping for this platform");

inline constexpr const char* kCheckpointMagic = "MWNMT";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void append_tensor_bytes(std::string& payload, const Tensor& t) {
  const std::size_t bytes = t.size() * sizeof(double);
  const std::size_t off = payload.size();
  payload.resize(off + bytes);
  std::memcpy(payload.data() + off, t.data(), bytes);
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["embed_dim"] = c.embed_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["attn_dim"] = c.attn_dim;
  j["max_decode_len"] = c.max_decode_len;
  for (const LanguageDim& l : c.encoders) {
    j["encoders"].push_back({{"name", l.name}, {"vocab_size", l.vocab_size}});
  }
  for (const LanguageDim& l : c.decoders) {
    j["decoders"].push_back({{"name", l.name}, {"vocab_size", l.vocab_size}});
  }
  return j;
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.embed_dim = j.at("embed_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.attn_dim = j.at("attn_dim").get<int>();
  c.max_decode_len = j.at("max_decode_len").get<int>();
  for (const auto& l : j.at("encoders")) {
    c.encoders.push_back({l.at("name").get<std::string>(), l.at("vocab_size").get<int>()});
  }
  for (const auto& l : j.at("decoders")) {
    c.decoders.push_back({l.at("name").get<std::string>(), l.at("vocab_size").get<int>()});
  }
  return c;
}

}  // namespace detail

/// Writes a checkpoint atomically (temp file + rename): a one-line preamble
/// `MWNMT <version> <header bytes>`, a JSON header holding the config
/// snapshot, vocabularies, attention registry and the parameter manifest
/// (path, shape, byte offset), then the raw little-endian payload.
inline void save_checkpoint(const MultiWayModel& model, const std::filesystem::path& path,
                            const AdamState* optimizer = nullptr) {
  nlohmann::json header;
  header["config"] = detail::config_to_json(model.config);
  {
    nlohmann::json vocabs = nlohmann::json::object();
    for (const auto& [lang, vocab] : model.vocabs) {
      std::vector<std::string> tokens(vocab.id_to_token.begin() + Vocab::kUnk + 1,
                                      vocab.id_to_token.end());
      vocabs[lang] = tokens;
    }
    header["vocabs"] = vocabs;
  }
  {
    std::vector<std::string> ids;
    for (const auto& [id, params] : model.attention) ids.push_back(id);
    header["attention_ids"] = ids;
    header["pair_attention"] = model.pair_attention;
    header["trained_pairs"] = std::vector<std::string>(model.trained_pairs.begin(),
                                                       model.trained_pairs.end());
  }

  std::string payload;
  nlohmann::json manifest = nlohmann::json::array();
  for_each_parameter(model, [&](const std::string& p, const Tensor& t) {
    manifest.push_back({{"path", p}, {"rows", t.rows()}, {"cols", t.cols()}, {"offset", payload.size()}});
    detail::append_tensor_bytes(payload, t);
  });
  header["manifest"] = manifest;

  if (optimizer) {
    nlohmann::json opt;
    opt["step"] = optimizer->step;
    nlohmann::json moments = nlohmann::json::array();
    for (const auto& [name, mv] : optimizer->moments) {
      nlohmann::json entry;
      entry["path"] = name;
      entry["rows"] = mv.first.rows();
      entry["cols"] = mv.first.cols();
      entry["m_offset"] = payload.size();
      detail::append_tensor_bytes(payload, mv.first);
      entry["v_offset"] = payload.size();
      detail::append_tensor_bytes(payload, mv.second);
      moments.push_back(entry);
    }
    opt["moments"] = moments;
    header["optimizer"] = opt;
  } else {
    header["optimizer"] = nullptr;
  }
  header["payload_bytes"] = payload.size();

  const std::string header_text = header.dump(1);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot write " + tmp.string());
    out << kCheckpointMagic << ' ' << kCheckpointVersion << ' ' << header_text.size() << '\n';
    out << header_text << '\n';
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

struct LoadedCheckpoint {
  MultiWayModel model;
  std::optional<AdamState> optimizer;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot read " + path.string());

  std::string magic;
  int version = -1;
  std::size_t header_bytes = 0;
  in >> magic >> version >> header_bytes;
  if (!in || magic != kCheckpointMagic) {
    throw std::runtime_error("load_checkpoint: " + path.string() + " is not a MWNMT checkpoint");
  }
  if (version != kCheckpointVersion) {
    throw std::runtime_error("load_checkpoint: unsupported checkpoint version " +
                             std::to_string(version));
  }
  in.get();  // newline after the preamble

  std::string header_text(header_bytes, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_bytes));
  if (!in) throw std::runtime_error("load_checkpoint: corrupt header in " + path.string());
  in.get();  // newline after the header

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_checkpoint: corrupt header in " + path.string() + ": " + e.what());
  }

  const std::size_t payload_bytes = header.at("payload_bytes").get<std::size_t>();
  std::string payload(payload_bytes, '\0');
  in.read(payload.data(), static_cast<std::streamsize>(payload_bytes));
  if (static_cast<std::size_t>(in.gcount()) != payload_bytes) {
    throw std::runtime_error("load_checkpoint: corrupt payload in " + path.string());
  }

  LoadedCheckpoint out;
  MultiWayModel& m = out.model;
  m.config = detail::config_from_json(header.at("config"));
  m.config.validate();
  for (const LanguageDim& l : m.config.encoders) m.encoders.emplace_back(m.config, l.vocab_size);
  for (const LanguageDim& l : m.config.decoders) m.decoders.emplace_back(m.config, l.vocab_size);
  for (const auto& id : header.at("attention_ids")) {
    m.attention.emplace(id.get<std::string>(), AttentionParams(m.config));
  }
  if (!m.attention.count(kSharedAttentionId)) {
    throw std::runtime_error("load_checkpoint: registry lacks the shared attention");
  }
  for (const auto& [pair, id] : header.at("pair_attention").items()) {
    m.pair_attention[pair] = id.get<std::string>();
  }
  for (const auto& p : header.at("trained_pairs")) m.trained_pairs.insert(p.get<std::string>());
  for (const auto& [lang, tokens] : header.at("vocabs").items()) {
    m.vocabs[lang] = Vocab::from_tokens(tokens.get<std::vector<std::string>>());
  }

  std::map<std::string, Tensor*> by_path;
  for_each_parameter(m, [&](const std::string& p, Tensor& t) { by_path[p] = &t; });

  std::size_t expected_offset = 0;
  std::size_t filled = 0;
  for (const auto& entry : header.at("manifest")) {
    const std::string p = entry.at("path").get<std::string>();
    const std::size_t rows = entry.at("rows").get<std::size_t>();
    const std::size_t cols = entry.at("cols").get<std::size_t>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    auto it = by_path.find(p);
    if (it == by_path.end()) {
      throw std::runtime_error("load_checkpoint: manifest names unknown parameter " + p);
    }
    Tensor& t = *it->second;
    if (t.rows() != rows || t.cols() != cols) {
      throw std::runtime_error("load_checkpoint: shape mismatch for " + p + ": file has " +
                               std::to_string(rows) + "x" + std::to_string(cols) +
                               ", config implies " + t.shape_str());
    }
    const std::size_t bytes = rows * cols * sizeof(double);
    if (offset != expected_offset || offset + bytes > payload_bytes) {
      throw std::runtime_error("load_checkpoint: corrupt manifest (offsets overlap or overflow)");
    }
    std::memcpy(t.data(), payload.data() + offset, bytes);
    expected_offset = offset + bytes;
    ++filled;
  }
  if (filled != by_path.size()) {
    throw std::runtime_error("load_checkpoint: manifest is missing parameters");
  }

  if (!header.at("optimizer").is_null()) {
    AdamState state;
    const auto& opt = header.at("optimizer");
    state.step = opt.at("step").get<long long>();
    for (const auto& entry : opt.at("moments")) {
      const std::string p = entry.at("path").get<std::string>();
      const std::size_t rows = entry.at("rows").get<std::size_t>();
      const std::size_t cols = entry.at("cols").get<std::size_t>();
      Tensor mt(rows, cols), vt(rows, cols);
      const std::size_t bytes = rows * cols * sizeof(double);
      const std::size_t mo = entry.at("m_offset").get<std::size_t>();
      const std::size_t vo = entry.at("v_offset").get<std::size_t>();
      if (mo + bytes > payload_bytes || vo + bytes > payload_bytes) {
        throw std::runtime_error("load_checkpoint: corrupt manifest (optimizer offsets overflow)");
      }
      std::memcpy(mt.data(), payload.data() + mo, bytes);
      std::memcpy(vt.data(), payload.data() + vo, bytes);
      state.moments.emplace(p, std::make_pair(std::move(mt), std::move(vt)));
    }
    out.optimizer = std::move(state);
  }
  return out;
}

}  // namespace mwnmt
