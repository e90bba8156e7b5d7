#pragma once

#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "data.hpp"
#include "rng.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace mwnmt {

struct LanguageDim {
  std::string name;
  int vocab_size = 0;
};

struct ModelConfig {
  int embed_dim = 32;
  int hidden_dim = 64;
  int attn_dim = 64;
  int max_decode_len = 24;
  std::vector<LanguageDim> encoders;
  std::vector<LanguageDim> decoders;

  int annotation_dim() const { return 2 * hidden_dim; }
  int readout_dim() const { return embed_dim; }

  void validate() const {
    if (encoders.empty() || decoders.empty()) {
      throw std::invalid_argument("ModelConfig: need at least one encoder and one decoder");
    }
    if (embed_dim < 1 || hidden_dim < 1 || attn_dim < 1 || max_decode_len < 1) {
      throw std::invalid_argument("ModelConfig: extents must be positive");
    }
    for (const LanguageDim& l : encoders) {
      if (l.vocab_size <= Vocab::kUnk) throw std::invalid_argument("ModelConfig: vocab too small for " + l.name);
    }
    for (const LanguageDim& l : decoders) {
      if (l.vocab_size <= Vocab::kUnk) throw std::invalid_argument("ModelConfig: vocab too small for " + l.name);
    }
  }
};

struct GruParams {
  Tensor W_r, U_r, b_r;
  Tensor W_u, U_u, b_u;
  Tensor W_h, U_h, b_h;

  GruParams() = default;
  GruParams(int in_dim, int hidden)
      : W_r(in_dim, hidden), U_r(hidden, hidden), b_r(1, hidden),
        W_u(in_dim, hidden), U_u(hidden, hidden), b_u(1, hidden),
        W_h(in_dim, hidden), U_h(hidden, hidden), b_h(1, hidden) {}
};

struct EncoderParams {
  Tensor embed;      // vocab x embed
  GruParams fwd, bwd;
  Tensor W_src;      // 2h x attn, the per-encoder attention projection

  EncoderParams() = default;
  EncoderParams(const ModelConfig& c, int vocab)
      : embed(vocab, c.embed_dim),
        fwd(c.embed_dim, c.hidden_dim),
        bwd(c.embed_dim, c.hidden_dim),
        W_src(c.annotation_dim(), c.attn_dim) {}
};

struct DecoderParams {
  Tensor embed;               // vocab x embed
  GruParams gru;              // input is [prev embedding ; context]
  Tensor W_state;             // h x attn, per-decoder attention projection
  Tensor W_init, b_init;      // attn -> h decoder-state initializer
  Tensor R_state, R_ctx, R_emb, R_ind, b_read;  // readout tanh layer
  Tensor W_out, b_out;        // readout projection to the vocabulary

  DecoderParams() = default;
  DecoderParams(const ModelConfig& c, int vocab)
      : embed(vocab, c.embed_dim),
        gru(c.embed_dim + c.annotation_dim(), c.hidden_dim),
        W_state(c.hidden_dim, c.attn_dim),
        W_init(c.attn_dim, c.hidden_dim),
        b_init(1, c.hidden_dim),
        R_state(c.hidden_dim, c.readout_dim()),
        R_ctx(c.annotation_dim(), c.readout_dim()),
        R_emb(c.embed_dim, c.readout_dim()),
        R_ind(static_cast<std::size_t>(c.encoders.size()), c.readout_dim()),
        b_read(1, c.readout_dim()),
        W_out(c.readout_dim(), vocab),
        b_out(1, vocab) {}
};

/// Scorer (single-hidden-layer feedforward) plus the post-attention projection.
struct AttentionParams {
  Tensor W_emb;    // embed x attn, previous-token term of the scorer
  Tensor b_score;  // 1 x attn
  Tensor v;        // attn x 1
  Tensor U;        // 2h x 2h
  Tensor b_ctx;    // 1 x 2h

  AttentionParams() = default;
  explicit AttentionParams(const ModelConfig& c)
      : W_emb(c.embed_dim, c.attn_dim),
        b_score(1, c.attn_dim),
        v(c.attn_dim, 1),
        U(c.annotation_dim(), c.annotation_dim()),
        b_ctx(1, c.annotation_dim()) {}
};

inline const std::string kSharedAttentionId = "shared";

/// N encoders, M decoders, and an attention registry holding the shared
/// mechanism plus any per-pair clones. Value semantics; copying a model copies
/// every parameter.
struct MultiWayModel {
  ModelConfig config;
  std::vector<EncoderParams> encoders;
  std::vector<DecoderParams> decoders;
  std::map<std::string, AttentionParams> attention;        // id -> params
  std::map<std::string, std::string> pair_attention;       // "ENC-DEC" -> id
  std::map<std::string, Vocab> vocabs;                     // language -> vocab
  std::set<std::string> trained_pairs;                     // "ENC-DEC"

  int encoder_index(const std::string& name) const {
    for (std::size_t i = 0; i < config.encoders.size(); ++i) {
      if (config.encoders[i].name == name) return static_cast<int>(i);
    }
    throw std::invalid_argument("unknown encoder language " + name);
  }

  int decoder_index(const std::string& name) const {
    for (std::size_t i = 0; i < config.decoders.size(); ++i) {
      if (config.decoders[i].name == name) return static_cast<int>(i);
    }
    throw std::invalid_argument("unknown decoder language " + name);
  }

  static std::string pair_key(const std::string& enc, const std::string& dec) {
    return enc + "-" + dec;
  }

  const std::string& attention_id_for(const std::string& enc, const std::string& dec) const {
    auto it = pair_attention.find(pair_key(enc, dec));
    return it == pair_attention.end() ? kSharedAttentionId : it->second;
  }

  const AttentionParams& attention_for(const std::string& id) const {
    auto it = attention.find(id);
    if (it == attention.end()) throw std::invalid_argument("unknown attention id " + id);
    return it->second;
  }

  const Vocab& vocab(const std::string& lang) const {
    auto it = vocabs.find(lang);
    if (it == vocabs.end()) throw std::invalid_argument("no vocabulary for language " + lang);
    return it->second;
  }
};

// --- parameter enumeration -----------------------------------------------------
// The visitation order is canonical: it fixes initialization, checkpoint layout,
// optimizer iteration and digests.

namespace detail {

template <typename F>
void visit_gru(const std::string& prefix, GruParams& g, F&& f) {
  f(prefix + "/W_r", g.W_r);
  f(prefix + "/U_r", g.U_r);
  f(prefix + "/b_r", g.b_r);
  f(prefix + "/W_u", g.W_u);
  f(prefix + "/U_u", g.U_u);
  f(prefix + "/b_u", g.b_u);
  f(prefix + "/W_h", g.W_h);
  f(prefix + "/U_h", g.U_h);
  f(prefix + "/b_h", g.b_h);
}

}  // namespace detail

template <typename F>
void for_each_parameter(MultiWayModel& m, F&& f) {
  for (std::size_t i = 0; i < m.encoders.size(); ++i) {
    const std::string p = "encoder/" + m.config.encoders[i].name;
    EncoderParams& e = m.encoders[i];
    f(p + "/embed", e.embed);
    detail::visit_gru(p + "/gru_fwd", e.fwd, f);
    detail::visit_gru(p + "/gru_bwd", e.bwd, f);
    f(p + "/W_src", e.W_src);
  }
  for (std::size_t i = 0; i < m.decoders.size(); ++i) {
    const std::string p = "decoder/" + m.config.decoders[i].name;
    DecoderParams& d = m.decoders[i];
    f(p + "/embed", d.embed);
    detail::visit_gru(p + "/gru", d.gru, f);
    f(p + "/W_state", d.W_state);
    f(p + "/W_init", d.W_init);
    f(p + "/b_init", d.b_init);
    f(p + "/readout/R_state", d.R_state);
    f(p + "/readout/R_ctx", d.R_ctx);
    f(p + "/readout/R_emb", d.R_emb);
    f(p + "/readout/R_ind", d.R_ind);
    f(p + "/readout/b_read", d.b_read);
    f(p + "/readout/W_out", d.W_out);
    f(p + "/readout/b_out", d.b_out);
  }
  for (auto& [id, a] : m.attention) {
    const std::string p = "attention/" + id;
    f(p + "/W_emb", a.W_emb);
    f(p + "/b_score", a.b_score);
    f(p + "/v", a.v);
    f(p + "/U", a.U);
    f(p + "/b_ctx", a.b_ctx);
  }
}

template <typename F>
void for_each_parameter(const MultiWayModel& m, F&& f) {
  for_each_parameter(const_cast<MultiWayModel&>(m),
                     [&](const std::string& path, Tensor& t) { f(path, static_cast<const Tensor&>(t)); });
}

inline bool is_bias_path(const std::string& path) {
  const std::size_t slash = path.rfind('/');
  const std::string leaf = slash == std::string::npos ? path : path.substr(slash + 1);
  return leaf.size() >= 2 && leaf[0] == 'b' && leaf[1] == '_';
}

/// Weights uniform in [-0.08, 0.08], biases zero, drawn in canonical order.
inline MultiWayModel make_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  MultiWayModel m;
  m.config = config;
  for (const LanguageDim& l : config.encoders) m.encoders.emplace_back(config, l.vocab_size);
  for (const LanguageDim& l : config.decoders) m.decoders.emplace_back(config, l.vocab_size);
  m.attention.emplace(kSharedAttentionId, AttentionParams(config));
  Rng rng(seed);
  for_each_parameter(m, [&](const std::string& path, Tensor& t) {
    if (is_bias_path(path)) {
      t.fill(0.0);
    } else {
      for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-0.08, 0.08);
    }
  });
  return m;
}

inline std::size_t count_parameters(const MultiWayModel& m) {
  std::size_t n = 0;
  for_each_parameter(m, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

inline std::map<std::string, std::uint64_t> parameter_digests(const MultiWayModel& m) {
  std::map<std::string, std::uint64_t> out;
  for_each_parameter(m, [&](const std::string& path, const Tensor& t) { out[path] = digest_tensor(t); });
  return out;
}

inline std::uint64_t model_digest(const MultiWayModel& m) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for_each_parameter(m, [&](const std::string& path, const Tensor& t) {
    h = fnv1a64(path.data(), path.size(), h);
    h = digest_tensor(t, h);
  });
  return h;
}

// --- plain (tape-free) forward math ---------------------------------------------
// Single-sentence inference path. Training uses the tape graphs below; tests
// cross-check the two routes against each other.

/// Per-position context vectors with a validity mask (1.0 = real token).
struct Annotations {
  Tensor vectors;             // T x 2h
  std::vector<double> mask;   // T entries
};

struct DecoderState {
  Tensor z;  // 1 x h
};

namespace plain {

inline Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
  Tensor y = matmul_plain(x, W);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double* row = y.row_ptr(i);
    for (std::size_t j = 0; j < y.cols(); ++j) row[j] += b.data()[j];
  }
  return y;
}

inline void tanh_inplace(Tensor& t) { vtanh(t.data(), t.size()); }

inline void sigmoid_inplace(Tensor& t) { vsigmoid(t.data(), t.size()); }

inline Tensor embed_row(const Tensor& table, int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) {
    throw std::invalid_argument("token id " + std::to_string(id) + " outside vocabulary of " +
                                std::to_string(table.rows()));
  }
  Tensor x(1, table.cols());
  const double* src = table.row_ptr(static_cast<std::size_t>(id));
  for (std::size_t j = 0; j < table.cols(); ++j) x.data()[j] = src[j];
  return x;
}

inline Tensor gru_cell(const GruParams& g, const Tensor& x, const Tensor& h) {
  Tensor r = matmul_plain(x, g.W_r);
  {
    Tensor hr = matmul_plain(h, g.U_r);
    for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] += hr.data()[i] + g.b_r.data()[i];
  }
  sigmoid_inplace(r);
  Tensor u = matmul_plain(x, g.W_u);
  {
    Tensor hu = matmul_plain(h, g.U_u);
    for (std::size_t i = 0; i < u.size(); ++i) u.data()[i] += hu.data()[i] + g.b_u.data()[i];
  }
  sigmoid_inplace(u);
  Tensor rh = h;
  for (std::size_t i = 0; i < rh.size(); ++i) rh.data()[i] *= r.data()[i];
  Tensor hc = matmul_plain(x, g.W_h);
  {
    Tensor hh = matmul_plain(rh, g.U_h);
    for (std::size_t i = 0; i < hc.size(); ++i) hc.data()[i] += hh.data()[i] + g.b_h.data()[i];
  }
  tanh_inplace(hc);
  Tensor out(1, h.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = (1.0 - u.data()[i]) * h.data()[i] + u.data()[i] * hc.data()[i];
  }
  return out;
}

inline void softmax_inplace(Tensor& t) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double* row = t.row_ptr(i);
    double mx = row[0];
    for (std::size_t j = 1; j < t.cols(); ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < t.cols(); ++j) {
      row[j] = fast_exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < t.cols(); ++j) row[j] /= sum;
  }
}

}  // namespace plain

/// Bidirectional encoding of one sentence; position t is [forward_t ; backward_t].
inline Annotations encode(const MultiWayModel& m, const std::string& encoder_id,
                          const std::vector<int>& token_ids) {
  const EncoderParams& enc = m.encoders[static_cast<std::size_t>(m.encoder_index(encoder_id))];
  if (token_ids.empty()) throw std::invalid_argument("encode: empty input");
  const std::size_t T = token_ids.size();
  const int h = m.config.hidden_dim;

  std::vector<Tensor> xs;
  xs.reserve(T);
  for (int id : token_ids) xs.push_back(plain::embed_row(enc.embed, id));

  Annotations ann;
  ann.vectors = Tensor(T, static_cast<std::size_t>(2 * h));
  ann.mask.assign(T, 1.0);

  Tensor state(1, static_cast<std::size_t>(h));
  for (std::size_t t = 0; t < T; ++t) {
    state = plain::gru_cell(enc.fwd, xs[t], state);
    double* dst = ann.vectors.row_ptr(t);
    for (int j = 0; j < h; ++j) dst[j] = state.data()[j];
  }
  state = Tensor(1, static_cast<std::size_t>(h));
  for (std::size_t t = T; t-- > 0;) {
    state = plain::gru_cell(enc.bwd, xs[t], state);
    double* dst = ann.vectors.row_ptr(t) + h;
    for (int j = 0; j < h; ++j) dst[j] = state.data()[j];
  }
  return ann;
}

/// Annotations together with their encoder identity and W_src projection.
struct EncodedSource {
  int encoder_index = -1;
  Annotations ann;
  Tensor proj;  // T x attn
};

inline EncodedSource encode_source(const MultiWayModel& m, const std::string& encoder_id,
                                   const std::vector<int>& token_ids) {
  EncodedSource s;
  s.encoder_index = m.encoder_index(encoder_id);
  s.ann = encode(m, encoder_id, token_ids);
  s.proj = matmul_plain(s.ann.vectors, m.encoders[static_cast<std::size_t>(s.encoder_index)].W_src);
  return s;
}

/// z0 from the mask-weighted mean of projected annotations; with several
/// sources, the arithmetic mean of the per-source initializations.
inline DecoderState init_decoder_state(const MultiWayModel& m, const std::string& decoder_id,
                                       const std::vector<const EncodedSource*>& sources) {
  if (sources.empty()) throw std::invalid_argument("init_decoder_state: no sources");
  const DecoderParams& dec = m.decoders[static_cast<std::size_t>(m.decoder_index(decoder_id))];
  DecoderState out;
  out.z = Tensor(1, static_cast<std::size_t>(m.config.hidden_dim));
  for (const EncodedSource* src : sources) {
    Tensor mean(1, src->proj.cols());
    double total = 0.0;
    for (std::size_t t = 0; t < src->proj.rows(); ++t) {
      const double w = src->ann.mask[t];
      if (w == 0.0) continue;
      total += w;
      const double* row = src->proj.row_ptr(t);
      for (std::size_t j = 0; j < mean.cols(); ++j) mean.data()[j] += w * row[j];
    }
    if (total == 0.0) throw std::invalid_argument("init_decoder_state: fully masked source");
    for (std::size_t j = 0; j < mean.cols(); ++j) mean.data()[j] /= total;
    Tensor z = plain::affine(mean, dec.W_init, dec.b_init);
    plain::tanh_inplace(z);
    for (std::size_t j = 0; j < out.z.size(); ++j) out.z.data()[j] += z.data()[j];
  }
  const double inv = 1.0 / static_cast<double>(sources.size());
  for (std::size_t j = 0; j < out.z.size(); ++j) out.z.data()[j] *= inv;
  return out;
}

struct AttentionResult {
  Tensor context;  // 1 x 2h
  Tensor weights;  // 1 x T, exactly zero on masked positions
};

/// One attention read: weights proportional to exp(score) over unmasked
/// positions, context = U * (weighted annotation sum) + b.
inline AttentionResult attention_step(const AttentionParams& attn, const Annotations& ann,
                                      const Tensor& proj, const Tensor& state_proj,
                                      const Tensor& prev_embedding) {
  const std::size_t T = proj.rows();
  if (ann.vectors.rows() != T) throw std::invalid_argument("attention_step: annotation/projection mismatch");
  bool any = false;
  for (double mk : ann.mask) any |= (mk != 0.0);
  if (!any) throw std::invalid_argument("attention_step: all positions masked");

  Tensor key = matmul_plain(prev_embedding, attn.W_emb);
  AttentionResult out;
  out.weights = Tensor(1, T);
  double mx = 0.0;
  bool seen = false;
  std::vector<double> scores(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    if (ann.mask[t] == 0.0) continue;
    const double* prow = proj.row_ptr(t);
    double s = 0.0;
    for (std::size_t j = 0; j < proj.cols(); ++j) {
      const double pre = prow[j] + state_proj.data()[j] + key.data()[j] + attn.b_score.data()[j];
      s += fast_tanh(pre) * attn.v.data()[j];
    }
    scores[t] = s;
    mx = seen ? std::max(mx, s) : s;
    seen = true;
  }
  double sum = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    if (ann.mask[t] == 0.0) continue;
    out.weights.data()[t] = fast_exp(scores[t] - mx);
    sum += out.weights.data()[t];
  }
  for (std::size_t t = 0; t < T; ++t) out.weights.data()[t] /= sum;

  Tensor pooled(1, ann.vectors.cols());
  for (std::size_t t = 0; t < T; ++t) {
    const double w = out.weights.data()[t];
    if (w == 0.0) continue;
    const double* row = ann.vectors.row_ptr(t);
    for (std::size_t j = 0; j < pooled.cols(); ++j) pooled.data()[j] += w * row[j];
  }
  out.context = plain::affine(pooled, attn.U, attn.b_ctx);
  return out;
}

/// One decoder GRU update with input [embedding(prev token) ; context].
inline DecoderState decoder_step(const MultiWayModel& m, const std::string& decoder_id,
                                 const DecoderState& state, int prev_token_id,
                                 const Tensor& context) {
  const DecoderParams& dec = m.decoders[static_cast<std::size_t>(m.decoder_index(decoder_id))];
  if (context.cols() != static_cast<std::size_t>(m.config.annotation_dim())) {
    throw std::invalid_argument("decoder_step: context width " + context.shape_str() + " expected 1x" +
                                std::to_string(m.config.annotation_dim()));
  }
  Tensor emb = plain::embed_row(dec.embed, prev_token_id);
  Tensor x(1, emb.cols() + context.cols());
  for (std::size_t j = 0; j < emb.cols(); ++j) x.data()[j] = emb.data()[j];
  for (std::size_t j = 0; j < context.cols(); ++j) x.data()[emb.cols() + j] = context.data()[j];
  DecoderState out;
  out.z = plain::gru_cell(dec.gru, x, state.z);
  return out;
}

/// Softmax readout over the decoder vocabulary from (state, context, previous
/// embedding, indicator bits).
inline Tensor output_distribution(const MultiWayModel& m, const std::string& decoder_id,
                                  const DecoderState& state, const Tensor& context,
                                  int prev_token_id, const std::vector<bool>& indicator) {
  const DecoderParams& dec = m.decoders[static_cast<std::size_t>(m.decoder_index(decoder_id))];
  if (indicator.size() != m.config.encoders.size()) {
    throw std::invalid_argument("output_distribution: indicator must have one bit per encoder");
  }
  Tensor emb = plain::embed_row(dec.embed, prev_token_id);
  Tensor pre = matmul_plain(state.z, dec.R_state);
  {
    Tensor c = matmul_plain(context, dec.R_ctx);
    Tensor e = matmul_plain(emb, dec.R_emb);
    for (std::size_t j = 0; j < pre.size(); ++j) {
      pre.data()[j] += c.data()[j] + e.data()[j] + dec.b_read.data()[j];
    }
    for (std::size_t n = 0; n < indicator.size(); ++n) {
      if (!indicator[n]) continue;
      const double* row = dec.R_ind.row_ptr(n);
      for (std::size_t j = 0; j < pre.size(); ++j) pre.data()[j] += row[j];
    }
  }
  plain::tanh_inplace(pre);
  Tensor logits = plain::affine(pre, dec.W_out, dec.b_out);
  plain::softmax_inplace(logits);
  return logits;
}

// --- tape graphs (batched teacher forcing) ---------------------------------------

/// Binds model parameters onto a tape on demand, memoized by path.
class ModelGraph {
 public:
  ModelGraph(Tape& tape, const MultiWayModel& model) : tape_(tape), model_(model) {}

  Tape& tape() { return tape_; }
  const MultiWayModel& model() const { return model_; }

  struct GruVars {
    Var W_r, U_r, b_r, W_u, U_u, b_u, W_h, U_h, b_h;
  };
  struct EncoderVars {
    Var embed;
    GruVars fwd, bwd;
    Var W_src;
  };
  struct DecoderVars {
    Var embed;
    GruVars gru;
    Var W_state, W_init, b_init, R_state, R_ctx, R_emb, R_ind, b_read, W_out, b_out;
  };
  struct AttentionVars {
    Var W_emb, b_score, v, U, b_ctx;
  };

  const EncoderVars& encoder(int idx) {
    auto it = enc_.find(idx);
    if (it != enc_.end()) return it->second;
    const EncoderParams& e = model_.encoders[static_cast<std::size_t>(idx)];
    const std::string p = "encoder/" + model_.config.encoders[static_cast<std::size_t>(idx)].name;
    EncoderVars v;
    v.embed = tape_.parameter(p + "/embed", e.embed);
    v.fwd = bind_gru(p + "/gru_fwd", e.fwd);
    v.bwd = bind_gru(p + "/gru_bwd", e.bwd);
    v.W_src = tape_.parameter(p + "/W_src", e.W_src);
    return enc_.emplace(idx, v).first->second;
  }

  const DecoderVars& decoder(int idx) {
    auto it = dec_.find(idx);
    if (it != dec_.end()) return it->second;
    const DecoderParams& d = model_.decoders[static_cast<std::size_t>(idx)];
    const std::string p = "decoder/" + model_.config.decoders[static_cast<std::size_t>(idx)].name;
    DecoderVars v;
    v.embed = tape_.parameter(p + "/embed", d.embed);
    v.gru = bind_gru(p + "/gru", d.gru);
    v.W_state = tape_.parameter(p + "/W_state", d.W_state);
    v.W_init = tape_.parameter(p + "/W_init", d.W_init);
    v.b_init = tape_.parameter(p + "/b_init", d.b_init);
    v.R_state = tape_.parameter(p + "/readout/R_state", d.R_state);
    v.R_ctx = tape_.parameter(p + "/readout/R_ctx", d.R_ctx);
    v.R_emb = tape_.parameter(p + "/readout/R_emb", d.R_emb);
    v.R_ind = tape_.parameter(p + "/readout/R_ind", d.R_ind);
    v.b_read = tape_.parameter(p + "/readout/b_read", d.b_read);
    v.W_out = tape_.parameter(p + "/readout/W_out", d.W_out);
    v.b_out = tape_.parameter(p + "/readout/b_out", d.b_out);
    return dec_.emplace(idx, v).first->second;
  }

  const AttentionVars& attention(const std::string& id) {
    auto it = attn_.find(id);
    if (it != attn_.end()) return it->second;
    const AttentionParams& a = model_.attention_for(id);
    const std::string p = "attention/" + id;
    AttentionVars v;
    v.W_emb = tape_.parameter(p + "/W_emb", a.W_emb);
    v.b_score = tape_.parameter(p + "/b_score", a.b_score);
    v.v = tape_.parameter(p + "/v", a.v);
    v.U = tape_.parameter(p + "/U", a.U);
    v.b_ctx = tape_.parameter(p + "/b_ctx", a.b_ctx);
    return attn_.emplace(id, v).first->second;
  }

 private:
  GruVars bind_gru(const std::string& p, const GruParams& g) {
    GruVars v;
    v.W_r = tape_.parameter(p + "/W_r", g.W_r);
    v.U_r = tape_.parameter(p + "/U_r", g.U_r);
    v.b_r = tape_.parameter(p + "/b_r", g.b_r);
    v.W_u = tape_.parameter(p + "/W_u", g.W_u);
    v.U_u = tape_.parameter(p + "/U_u", g.U_u);
    v.b_u = tape_.parameter(p + "/b_u", g.b_u);
    v.W_h = tape_.parameter(p + "/W_h", g.W_h);
    v.U_h = tape_.parameter(p + "/U_h", g.U_h);
    v.b_h = tape_.parameter(p + "/b_h", g.b_h);
    return v;
  }

  Tape& tape_;
  const MultiWayModel& model_;
  std::map<int, EncoderVars> enc_;
  std::map<int, DecoderVars> dec_;
  std::map<std::string, AttentionVars> attn_;
};

inline Var gru_cell_graph(Tape& t, const ModelGraph::GruVars& g, Var x, Var h) {
  Var r = sigmoid(t, add_rowvec(t, add(t, matmul(t, x, g.W_r), matmul(t, h, g.U_r)), g.b_r));
  Var u = sigmoid(t, add_rowvec(t, add(t, matmul(t, x, g.W_u), matmul(t, h, g.U_u)), g.b_u));
  Var hc = tanh(t, add_rowvec(t, add(t, matmul(t, x, g.W_h), matmul(t, mul(t, r, h), g.U_h)), g.b_h));
  return add(t, mul(t, one_minus(t, u), h), mul(t, u, hc));
}

/// Batched encoding: per-position annotation and projection Vars plus masks.
struct BatchSource {
  int encoder_index = -1;
  std::vector<Var> H;  // per position, B x 2h
  std::vector<Var> P;  // per position, B x attn
  const PaddedSide* side = nullptr;
};

inline BatchSource encode_batch_graph(ModelGraph& g, int encoder_index, const PaddedSide& src) {
  Tape& t = g.tape();
  const auto& enc = g.encoder(encoder_index);
  const int B = src.batch;
  const int T = src.width;
  const int h = g.model().config.hidden_dim;

  std::vector<Var> xs(static_cast<std::size_t>(T));
  std::vector<Tensor> mask_cols(static_cast<std::size_t>(T));
  std::vector<bool> full(static_cast<std::size_t>(T));
  for (int c = 0; c < T; ++c) {
    xs[static_cast<std::size_t>(c)] = embedding_rows(t, enc.embed, src.column(c));
    Tensor mk(static_cast<std::size_t>(B), 1);
    bool all_one = true;
    const std::vector<double> col = src.mask_column(c);
    for (int r = 0; r < B; ++r) {
      mk.data()[r] = col[static_cast<std::size_t>(r)];
      all_one &= (col[static_cast<std::size_t>(r)] == 1.0);
    }
    mask_cols[static_cast<std::size_t>(c)] = mk;
    full[static_cast<std::size_t>(c)] = all_one;
  }

  auto sweep = [&](const ModelGraph::GruVars& gru, bool forward) {
    std::vector<Var> states(static_cast<std::size_t>(T));
    Var h_prev = t.constant(Tensor(static_cast<std::size_t>(B), static_cast<std::size_t>(h)));
    for (int step = 0; step < T; ++step) {
      const int c = forward ? step : T - 1 - step;
      Var h_new = gru_cell_graph(t, gru, xs[static_cast<std::size_t>(c)], h_prev);
      if (!full[static_cast<std::size_t>(c)]) {
        // Padded rows keep their previous state.
        Tensor inv = mask_cols[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < inv.size(); ++i) inv.data()[i] = 1.0 - inv.data()[i];
        h_new = add(t, mul_colvec(t, h_new, t.constant(mask_cols[static_cast<std::size_t>(c)])),
                    mul_colvec(t, h_prev, t.constant(inv)));
      }
      states[static_cast<std::size_t>(c)] = h_new;
      h_prev = h_new;
    }
    return states;
  };

  std::vector<Var> fwd = sweep(enc.fwd, true);
  std::vector<Var> bwd = sweep(enc.bwd, false);

  BatchSource out;
  out.encoder_index = encoder_index;
  out.side = &src;
  for (int c = 0; c < T; ++c) {
    Var ann = concat_cols(t, {fwd[static_cast<std::size_t>(c)], bwd[static_cast<std::size_t>(c)]});
    out.H.push_back(ann);
    out.P.push_back(matmul(t, ann, enc.W_src));
  }
  return out;
}

/// A decode path: one encoded source plus the attention mechanism that bridges
/// it to the decoder.
struct BatchPath {
  BatchSource source;
  std::string attention_id;
};

namespace detail {

inline Tensor mask_matrix(const PaddedSide& side) {
  Tensor m(static_cast<std::size_t>(side.batch), static_cast<std::size_t>(side.width));
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = side.mask[i];
  return m;
}

inline Var init_state_graph(ModelGraph& g, const ModelGraph::DecoderVars& dec,
                            const std::vector<BatchPath>& paths) {
  Tape& t = g.tape();
  Var acc{};
  for (std::size_t k = 0; k < paths.size(); ++k) {
    const BatchSource& s = paths[k].source;
    const int B = s.side->batch;
    Var sum{};
    for (std::size_t c = 0; c < s.P.size(); ++c) {
      Tensor mk(static_cast<std::size_t>(B), 1);
      const std::vector<double> col = s.side->mask_column(static_cast<int>(c));
      for (int r = 0; r < B; ++r) mk.data()[r] = col[static_cast<std::size_t>(r)];
      Var term = mul_colvec(t, s.P[c], t.constant(mk));
      sum = (c == 0) ? term : add(t, sum, term);
    }
    Tensor inv_len(static_cast<std::size_t>(B), 1);
    for (int r = 0; r < B; ++r) {
      inv_len.data()[r] = 1.0 / static_cast<double>(s.side->lengths[static_cast<std::size_t>(r)]);
    }
    Var mean = mul_colvec(t, sum, t.constant(inv_len));
    Var z0 = tanh(t, add_rowvec(t, matmul(t, mean, dec.W_init), dec.b_init));
    acc = (k == 0) ? z0 : add(t, acc, z0);
  }
  if (paths.size() > 1) acc = scale(t, acc, 1.0 / static_cast<double>(paths.size()));
  return acc;
}

inline Var context_graph(ModelGraph& g, const BatchPath& path, Var q_state, Var e_prev,
                         const Tensor& src_mask) {
  Tape& t = g.tape();
  const auto& attn = g.attention(path.attention_id);
  const BatchSource& s = path.source;
  Var qk = add(t, q_state, matmul(t, e_prev, attn.W_emb));
  Var scores = attention_scores(t, s.P, qk, attn.b_score, attn.v);
  Var alpha = softmax_rows_masked(t, scores, src_mask);
  Var pooled = weighted_sum(t, s.H, alpha);
  return add_rowvec(t, matmul(t, pooled, attn.U), attn.b_ctx);
}

}  // namespace detail

/// Teacher-forced per-sentence log-probabilities (B x 1) of an EOS-terminated
/// target batch. Several paths are combined by early averaging.
inline Var sentence_logprob_graph(ModelGraph& g, int decoder_index,
                                  const std::vector<BatchPath>& paths, const PaddedSide& tgt,
                                  const std::vector<bool>& indicator) {
  if (paths.empty()) throw std::invalid_argument("sentence_logprob_graph: no source paths");
  Tape& t = g.tape();
  const auto& dec = g.decoder(decoder_index);
  const MultiWayModel& m = g.model();
  if (indicator.size() != m.config.encoders.size()) {
    throw std::invalid_argument("sentence_logprob_graph: indicator size mismatch");
  }
  const int B = tgt.batch;

  std::vector<Tensor> src_masks;
  src_masks.reserve(paths.size());
  for (const BatchPath& p : paths) src_masks.push_back(detail::mask_matrix(*p.source.side));

  Tensor ind_row(1, indicator.size());
  for (std::size_t n = 0; n < indicator.size(); ++n) ind_row.data()[n] = indicator[n] ? 1.0 : 0.0;
  Var ind_contrib = matmul(t, t.constant(ind_row), dec.R_ind);

  Var z = detail::init_state_graph(g, dec, paths);
  std::vector<int> prev(static_cast<std::size_t>(B), Vocab::kBos);
  Var acc{};
  for (int step = 0; step < tgt.width; ++step) {
    Var e_prev = embedding_rows(t, dec.embed, prev);
    Var q = matmul(t, z, dec.W_state);
    Var ctx{};
    for (std::size_t k = 0; k < paths.size(); ++k) {
      Var c_k = detail::context_graph(g, paths[k], q, e_prev, src_masks[k]);
      ctx = (k == 0) ? c_k : add(t, ctx, c_k);
    }
    if (paths.size() > 1) ctx = scale(t, ctx, 1.0 / static_cast<double>(paths.size()));

    Var x = concat_cols(t, {e_prev, ctx});
    z = gru_cell_graph(t, dec.gru, x, z);

    Var pre = add(t, add(t, matmul(t, z, dec.R_state), matmul(t, ctx, dec.R_ctx)),
                  matmul(t, e_prev, dec.R_emb));
    pre = add_rowvec(t, add_rowvec(t, pre, ind_contrib), dec.b_read);
    Var logits = add_rowvec(t, matmul(t, tanh(t, pre), dec.W_out), dec.b_out);
    Var logp = log_softmax_rows(t, logits);

    const std::vector<int> labels = tgt.column(step);
    Var picked = gather_cols(t, logp, labels);
    Tensor mk(static_cast<std::size_t>(B), 1);
    const std::vector<double> mcol = tgt.mask_column(step);
    for (int r = 0; r < B; ++r) mk.data()[r] = mcol[static_cast<std::size_t>(r)];
    Var contrib = mul(t, picked, t.constant(mk));
    acc = (step == 0) ? contrib : add(t, acc, contrib);

    prev = labels;
    for (int r = 0; r < B; ++r) {
      // Padded steps feed PAD embeddings; their outputs are masked out above.
      if (mcol[static_cast<std::size_t>(r)] == 0.0) prev[static_cast<std::size_t>(r)] = Vocab::kPad;
    }
  }
  return acc;
}

struct LossGraph {
  Var loss;              // scalar, mean negative log-likelihood per sentence
  Var sentence_logprob;  // B x 1
};

inline LossGraph batch_loss_graph(ModelGraph& g, const std::string& encoder_id,
                                  const std::string& decoder_id, const Batch& batch,
                                  const std::string& attention_override = "") {
  const MultiWayModel& m = g.model();
  BatchPath p;
  p.source = encode_batch_graph(g, m.encoder_index(encoder_id), batch.src);
  p.attention_id =
      attention_override.empty() ? m.attention_id_for(encoder_id, decoder_id) : attention_override;
  std::vector<bool> indicator(m.config.encoders.size(), false);
  indicator[static_cast<std::size_t>(m.encoder_index(encoder_id))] = true;
  std::vector<BatchPath> paths;
  paths.push_back(std::move(p));
  LossGraph out;
  out.sentence_logprob =
      sentence_logprob_graph(g, m.decoder_index(decoder_id), paths, batch.tgt, indicator);
  Var total = sum_all(g.tape(), out.sentence_logprob);
  out.loss = scale(g.tape(), total, -1.0 / static_cast<double>(batch.tgt.batch));
  return out;
}

/// Full-model gradient check: analytic gradients of a teacher-forced batch loss
/// against central finite differences, over every parameter coordinate of the
/// first (encoder, decoder) pair. Probe weights are drawn from U[-0.8, 0.8];
/// at the default init scale many true gradients sit below what double-precision
/// differences can resolve. Returns the max relative error.
inline double model_grad_check(const ModelConfig& config, std::uint64_t seed, double epsilon) {
  if (epsilon <= 0.0) throw std::invalid_argument("model_grad_check: epsilon must be positive");
  MultiWayModel m = make_model(config, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  for_each_parameter(m, [&](const std::string&, Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-0.8, 0.8);
  });
  const std::string enc = config.encoders.front().name;
  const std::string dec = config.decoders.front().name;
  const int src_vocab = config.encoders.front().vocab_size;
  const int tgt_vocab = config.decoders.front().vocab_size;

  auto draw_row = [&](int vocab, int len) {
    std::vector<int> row;
    for (int i = 0; i < len; ++i) {
      row.push_back(Vocab::kUnk + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab - Vocab::kUnk - 1))));
    }
    return row;
  };
  Batch batch;
  batch.src = detail::pad_side({draw_row(src_vocab, 5), draw_row(src_vocab, 3)}, false);
  std::vector<int> t1 = draw_row(tgt_vocab, 4);
  std::vector<int> t2 = draw_row(tgt_vocab, 5);
  t1.push_back(Vocab::kEos);
  t2.push_back(Vocab::kEos);
  batch.tgt = detail::pad_side({t1, t2}, false);

  auto loss_of = [&](const MultiWayModel& model) {
    Tape tape(false);
    ModelGraph g(tape, model);
    return tape.value(batch_loss_graph(g, enc, dec, batch).loss).data()[0];
  };

  GradientMap analytic;
  {
    Tape tape(true);
    ModelGraph g(tape, m);
    analytic = tape.backward(batch_loss_graph(g, enc, dec, batch).loss);
  }

  double worst = 0.0;
  MultiWayModel probe = m;
  for_each_parameter(probe, [&](const std::string& path, Tensor& tensor) {
    const Tensor* a_grad = analytic.count(path) ? &analytic.at(path) : nullptr;
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double keep = tensor.data()[i];
      tensor.data()[i] = keep + epsilon;
      const double up = loss_of(probe);
      tensor.data()[i] = keep - epsilon;
      const double down = loss_of(probe);
      tensor.data()[i] = keep;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double analytic_v = a_grad ? a_grad->data()[i] : 0.0;
      const double denom = std::max(1e-8, std::abs(analytic_v) + std::abs(numeric));
      worst = std::max(worst, std::abs(analytic_v - numeric) / denom);
    }
  });
  return worst;
}

/// Teacher-forced log-probability of one (sources, target) tuple. The target
/// must end with EOS. Multiple sources are combined by early averaging.
inline double forward_logprob(const MultiWayModel& m, const std::vector<std::string>& encoder_ids,
                              const std::string& decoder_id, const std::string& attention_id,
                              const std::vector<std::vector<int>>& sources,
                              const std::vector<int>& target) {
  if (target.empty()) throw std::invalid_argument("forward_logprob: empty target");
  if (target.back() != Vocab::kEos) {
    throw std::invalid_argument("forward_logprob: target must end with EOS");
  }
  if (encoder_ids.empty() || encoder_ids.size() != sources.size()) {
    throw std::invalid_argument("forward_logprob: one source sequence per encoder id required");
  }
  Tape t(false);
  ModelGraph g(t, m);
  std::vector<BatchPath> paths;
  std::vector<bool> indicator(m.config.encoders.size(), false);
  std::vector<PaddedSide> sides(sources.size());
  for (std::size_t k = 0; k < sources.size(); ++k) {
    if (sources[k].empty()) throw std::invalid_argument("forward_logprob: empty source");
    sides[k] = detail::pad_side({sources[k]}, false);
    BatchPath p;
    p.source = encode_batch_graph(g, m.encoder_index(encoder_ids[k]), sides[k]);
    p.attention_id =
        attention_id.empty() ? m.attention_id_for(encoder_ids[k], decoder_id) : attention_id;
    indicator[static_cast<std::size_t>(m.encoder_index(encoder_ids[k]))] = true;
    paths.push_back(std::move(p));
  }
  PaddedSide tgt = detail::pad_side({target}, false);
  Var lp = sentence_logprob_graph(g, m.decoder_index(decoder_id), paths, tgt, indicator);
  return t.value(lp).data()[0];
}

}  // namespace mwnmt
