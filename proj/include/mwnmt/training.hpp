#pragma once

#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "metrics.hpp"
#include "model.hpp"

namespace mwnmt {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;
  int batch_size = 80;   // 60 for finetuning, per the recipe
  int eval_interval = 200;
  int patience = 5;
  int max_updates = 6000;
  int max_len = 20;
  std::uint64_t seed = 1;
  std::function<bool(const std::string&)> trainable;  // empty = every parameter

  void validate() const {
    if (clip_norm <= 0.0) throw std::invalid_argument("TrainConfig: clip_norm must be positive");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
    if (eval_interval < 1) throw std::invalid_argument("TrainConfig: eval_interval must be >= 1");
    if (max_updates < 0) throw std::invalid_argument("TrainConfig: max_updates must be >= 0");
  }

  bool is_trainable(const std::string& path) const { return !trainable || trainable(path); }
};

/// Scales all gradients by max_norm / ||g|| when the global L2 norm exceeds
/// max_norm. Returns the pre-clip norm.
inline double clip_gradients(GradientMap& grads, double max_norm) {
  if (max_norm <= 0.0) throw std::invalid_argument("clip_gradients: max_norm must be positive");
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (std::size_t i = 0; i < g.size(); ++i) sq += g.data()[i] * g.data()[i];
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& [name, g] : grads) {
      for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] *= scale;
    }
  }
  return norm;
}

struct AdamState {
  long long step = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments;  // first, second
};

/// Standard bias-corrected Adam over the listed parameters. Parameters without
/// a gradient entry are left untouched.
inline void adam_step(const std::vector<std::pair<std::string, Tensor*>>& params,
                      const GradientMap& grads, AdamState& state, double lr, double beta1,
                      double beta2, double epsilon) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (const auto& [name, tensor] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    if (!g.same_shape(*tensor)) throw std::invalid_argument("adam_step: gradient shape mismatch for " + name);
    auto mit = state.moments.find(name);
    if (mit == state.moments.end()) {
      mit = state.moments
                .emplace(name, std::make_pair(Tensor(tensor->rows(), tensor->cols()),
                                              Tensor(tensor->rows(), tensor->cols())))
                .first;
    }
    Tensor& m = mit->second.first;
    Tensor& v = mit->second.second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = g.data()[i];
      m.data()[i] = beta1 * m.data()[i] + (1.0 - beta1) * gi;
      v.data()[i] = beta2 * v.data()[i] + (1.0 - beta2) * gi * gi;
      const double mhat = m.data()[i] / bc1;
      const double vhat = v.data()[i] / bc2;
      tensor->data()[i] -= lr * mhat / (std::sqrt(vhat) + epsilon);
    }
  }
}

/// Tracks the best (lowest) score seen; stops after `patience` offers without
/// improvement.
class EarlyStop {
 public:
  explicit EarlyStop(int patience) : patience_(patience) {
    if (patience < 1) throw std::invalid_argument("EarlyStop: patience must be >= 1");
  }

  bool offer(double score) {
    if (score < best_) {
      best_ = score;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const { return stale_ >= patience_; }
  double best() const { return best_; }
  int stale() const { return stale_; }

 private:
  int patience_;
  int stale_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct TrainPair {
  std::string src_lang, tgt_lang;
  std::vector<Sentence> src, tgt;
};

struct DevSet {
  std::string src_lang, tgt_lang;
  std::vector<Sentence> src, refs;
};

struct TrainResult {
  std::vector<std::string> log;  // line-delimited records, stable field order
  double best_mean_tb = std::numeric_limits<double>::infinity();
  std::vector<double> eval_mean_tb;
  int updates_run = 0;
  bool early_stopped = false;
};

namespace detail {

inline std::string format_line(const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return std::string(buf);
}

struct PairState {
  std::vector<Batch> batches;
  std::size_t next = 0;
  std::size_t epoch = 0;
};

}  // namespace detail

/// Round-robin training over bilingual pairs: each update draws one batch from
/// one pair, maximizes teacher-forced log-likelihood, clips the global
/// gradient norm and applies Adam to the parameters passing the trainable
/// filter. Every eval_interval updates the dev T-B per pair is computed and the
/// run early-stops after `patience` evals without improving the mean T-B,
/// restoring the best parameters.
inline TrainResult train(MultiWayModel& model, const std::vector<TrainPair>& pairs,
                         const std::vector<DevSet>& dev_sets, const TrainConfig& cfg) {
  cfg.validate();
  if (pairs.empty()) throw std::invalid_argument("train: no training pairs");
  for (const TrainPair& p : pairs) {
    if (p.src.empty() || p.src.size() != p.tgt.size()) {
      throw std::invalid_argument("train: empty or misaligned corpus for " + p.src_lang + "-" + p.tgt_lang);
    }
    model.encoder_index(p.src_lang);
    model.decoder_index(p.tgt_lang);
  }

  std::vector<std::pair<std::string, Tensor*>> trainable;
  for_each_parameter(model, [&](const std::string& path, Tensor& t) {
    if (cfg.is_trainable(path)) trainable.emplace_back(path, &t);
  });
  if (trainable.empty()) throw std::invalid_argument("train: trainable filter selects no parameters");
  auto wanted = [&cfg](const std::string& path) { return cfg.is_trainable(path); };

  std::vector<detail::PairState> streams(pairs.size());
  auto refill = [&](std::size_t pi) {
    detail::PairState& ps = streams[pi];
    const TrainPair& p = pairs[pi];
    ps.batches = make_batches(p.src, p.tgt, model.vocab(p.src_lang), model.vocab(p.tgt_lang),
                              cfg.batch_size, cfg.max_len,
                              cfg.seed + 1000003ull * (pi + 1) + 104729ull * ps.epoch);
    ps.next = 0;
  };
  for (std::size_t pi = 0; pi < pairs.size(); ++pi) refill(pi);

  AdamState adam;
  EarlyStop stopper(cfg.patience);
  TrainResult result;
  std::vector<Tensor> best_snapshot;

  auto evaluate_dev = [&]() {
    double mean = 0.0;
    for (const DevSet& d : dev_sets) {
      std::vector<Sentence> hyps;
      hyps.reserve(d.src.size());
      for (const Sentence& s : d.src) {
        TranslationResult r = translate(model, StrategyKind::OneToOne, {{d.src_lang, s}}, d.tgt_lang, 1);
        hyps.push_back(to_tokens(model, d.tgt_lang, r));
      }
      const double b = bleu(hyps, d.refs).score;
      long long edits = 0, words = 0;
      for (std::size_t i = 0; i < hyps.size(); ++i) {
        EditRateReport er = edit_rate(hyps[i], d.refs[i]);
        edits += er.distance;
        words += er.reference_length;
      }
      const double ter = 100.0 * static_cast<double>(edits) / static_cast<double>(std::max<long long>(1, words));
      const double tb = tb_score(ter, b);
      mean += tb;
      result.log.push_back(detail::format_line("eval update=%d pair=%s-%s bleu=%.2f ter_approx=%.2f tb=%.3f",
                                               result.updates_run, d.src_lang.c_str(), d.tgt_lang.c_str(),
                                               b, ter, tb));
    }
    return dev_sets.empty() ? 0.0 : mean / static_cast<double>(dev_sets.size());
  };

  for (int u = 0; u < cfg.max_updates; ++u) {
    const std::size_t pi = static_cast<std::size_t>(u) % pairs.size();
    detail::PairState& ps = streams[pi];
    if (ps.next >= ps.batches.size()) {
      ++ps.epoch;
      refill(pi);
    }
    const Batch& batch = ps.batches[ps.next++];

    Tape tape(true);
    ModelGraph graph(tape, model);
    LossGraph lg = batch_loss_graph(graph, pairs[pi].src_lang, pairs[pi].tgt_lang, batch);
    const double loss = tape.value(lg.loss).data()[0];
    if (!std::isfinite(loss)) {
      throw std::runtime_error(detail::format_line(
          "train: non-finite loss %.6f at update %d on pair %s-%s", loss, u,
          pairs[pi].src_lang.c_str(), pairs[pi].tgt_lang.c_str()));
    }
    GradientMap grads = tape.backward(lg.loss, wanted);
    const double gnorm = clip_gradients(grads, cfg.clip_norm);
    adam_step(trainable, grads, adam, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    result.updates_run = u + 1;
    result.log.push_back(detail::format_line("update=%d pair=%s-%s loss=%.6f grad_norm=%.6f", u + 1,
                                             pairs[pi].src_lang.c_str(), pairs[pi].tgt_lang.c_str(),
                                             loss, gnorm));

    if (!dev_sets.empty() && (u + 1) % cfg.eval_interval == 0) {
      const double mean_tb = evaluate_dev();
      result.eval_mean_tb.push_back(mean_tb);
      const bool improved = stopper.offer(mean_tb);
      if (improved) {
        best_snapshot.clear();
        for (const auto& [name, tensor] : trainable) best_snapshot.push_back(*tensor);
        result.best_mean_tb = mean_tb;
      }
      result.log.push_back(detail::format_line("eval update=%d mean_tb=%.3f best_tb=%.3f stale=%d",
                                               result.updates_run, mean_tb, stopper.best(),
                                               stopper.stale()));
      if (stopper.should_stop()) {
        result.early_stopped = true;
        break;
      }
    }
  }

  if (!best_snapshot.empty()) {
    for (std::size_t i = 0; i < trainable.size(); ++i) *trainable[i].second = best_snapshot[i];
  }
  for (const TrainPair& p : pairs) {
    model.trained_pairs.insert(MultiWayModel::pair_key(p.src_lang, p.tgt_lang));
  }
  return result;
}

}  // namespace mwnmt
