#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "s3m/optim.hpp"
#include "s3m/rng.hpp"
#include "s3m/tensor.hpp"

namespace s3m {

struct ModelConfig {
  std::size_t embed_dim = 50;
  std::size_t hidden_dim = 100;
  std::size_t classifier_hidden = 200;
  std::size_t vocab_size = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (embed_dim < 1 || hidden_dim < 1 || classifier_hidden < 1)
      throw std::invalid_argument("ModelConfig: all dimensions must be >= 1");
    if (vocab_size < 2)
      throw std::invalid_argument("ModelConfig: vocab_size must be >= 2 (PAD and OOV)");
  }

  bool operator==(const ModelConfig&) const = default;
};

namespace detail {

// Parameter names in registration order; this order is frozen because it is
// also the checkpoint serialization order.
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> param_layout(
    const ModelConfig& c) {
  std::size_t zin = c.embed_dim + c.hidden_dim;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  out.emplace_back("embed", std::vector<std::size_t>{c.vocab_size, c.embed_dim});
  for (const char* dir : {"fwd", "bwd"}) {
    for (const char* gate : {"i", "f", "o", "g"}) {
      out.emplace_back(std::string(dir) + ".W" + gate,
                       std::vector<std::size_t>{c.hidden_dim, zin});
      out.emplace_back(std::string(dir) + ".b" + gate,
                       std::vector<std::size_t>{c.hidden_dim});
    }
  }
  out.emplace_back("cls.W1", std::vector<std::size_t>{c.classifier_hidden,
                                                      6 * c.hidden_dim});
  out.emplace_back("cls.b1", std::vector<std::size_t>{c.classifier_hidden});
  out.emplace_back("cls.W2", std::vector<std::size_t>{std::size_t(1), c.classifier_hidden});
  out.emplace_back("cls.b2", std::vector<std::size_t>{std::size_t(1)});
  return out;
}

}  // namespace detail

// Symmetric feature vector for a pair of encodings:
// (|v1 - v2|, (v1 + v2) / 2, v1 ⊙ v2), concatenated in that order. Every
// component commutes bit-exactly under IEEE arithmetic, which is what makes
// the whole measure symmetric.
inline std::vector<double> pair_features(std::span<const double> v1,
                                         std::span<const double> v2) {
  if (v1.size() != v2.size())
    throw std::invalid_argument("pair_features: length mismatch, " +
                                std::to_string(v1.size()) + " vs " +
                                std::to_string(v2.size()));
  std::size_t n = v1.size();
  std::vector<double> f(3 * n);
  for (std::size_t i = 0; i < n; ++i) f[i] = std::fabs(v1[i] - v2[i]);
  for (std::size_t i = 0; i < n; ++i) f[n + i] = (v1[i] + v2[i]) * 0.5;
  for (std::size_t i = 0; i < n; ++i) f[2 * n + i] = v1[i] * v2[i];
  return f;
}

inline Tape::Node pair_features_node(Tape& t, Tape::Node v1, Tape::Node v2) {
  Tape::Node diff = t.abs(t.sub(v1, v2));
  Tape::Node mean = t.scale(t.add(v1, v2), 0.5);
  Tape::Node prod = t.hadamard(v1, v2);
  return t.concat(t.concat(diff, mean), prod);
}

// The S3M network: token embedding, one biLSTM encoder shared by both sides
// of the pair, and a 2-layer ReLU classifier producing an unbounded
// similarity score. The gradient-free methods and the ModelGraph tape path
// share the same kernels and operation order, so their outputs are
// bit-identical.
class S3MModel {
 public:
  ModelConfig config;
  ParamStore params;

  static S3MModel init(const ModelConfig& cfg) {
    cfg.validate();
    S3MModel m;
    m.config = cfg;
    for (auto& [name, shape] : detail::param_layout(cfg)) {
      Tensor t = shape.size() == 2 ? Tensor::zeros(shape[0], shape[1])
                                   : Tensor::zeros(shape[0]);
      m.params.add(name, std::move(t));
    }
    double bound = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim));
    Rng rng(cfg.seed);
    for (std::size_t p = 0; p < m.params.count(); ++p)
      for (double& v : m.params.at(p).values) v = rng.uniform(-bound, bound);
    return m;
  }

  std::size_t encoding_dim() const { return 2 * config.hidden_dim; }
  std::size_t feature_dim() const { return 6 * config.hidden_dim; }

  // biLSTM encoding: the forward LSTM reads the ids as stored (top of stack
  // first), the backward LSTM reads them reversed, and the two final hidden
  // states are concatenated (forward half first).
  std::vector<double> encode_trace(std::span<const std::int32_t> ids) const {
    check_ids(ids);
    std::vector<double> fwd = run_lstm(ids, /*reverse=*/false);
    std::vector<double> bwd = run_lstm(ids, /*reverse=*/true);
    fwd.insert(fwd.end(), bwd.begin(), bwd.end());
    return fwd;
  }

  // Classifier head on a feature vector: W2·relu(W1·f + b1) + b2.
  double score_features(std::span<const double> f) const {
    if (f.size() != feature_dim())
      throw std::invalid_argument("score_features: expected length " +
                                  std::to_string(feature_dim()) + ", got " +
                                  std::to_string(f.size()));
    const Tensor& w1 = params.get("cls.W1");
    const Tensor& b1 = params.get("cls.b1");
    const Tensor& w2 = params.get("cls.W2");
    const Tensor& b2 = params.get("cls.b2");
    std::vector<double> h(w1.rows());
    detail::matvec_accum(w1.values.data(), w1.rows(), w1.cols(), f.data(), h.data());
    for (std::size_t i = 0; i < h.size(); ++i) {
      h[i] += b1.values[i];
      if (h[i] < 0.0) h[i] = 0.0;
    }
    double s = 0.0;
    detail::matvec_accum(w2.values.data(), 1, w2.cols(), h.data(), &s);
    return s + b2.values[0];
  }

  double score_encodings(std::span<const double> e1, std::span<const double> e2) const {
    return score_features(pair_features(e1, e2));
  }

  // Siamese similarity: one parameter set encodes both traces.
  double score_pair(std::span<const std::int32_t> ids1,
                    std::span<const std::int32_t> ids2) const {
    return score_encodings(encode_trace(ids1), encode_trace(ids2));
  }

 private:
  void check_ids(std::span<const std::int32_t> ids) const {
    if (ids.empty()) throw std::invalid_argument("encode_trace: empty id sequence");
    for (std::int32_t id : ids)
      if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size)
        throw std::invalid_argument("encode_trace: id " + std::to_string(id) +
                                    " outside vocabulary of size " +
                                    std::to_string(config.vocab_size));
  }

  // Standard LSTM cell, zero initial state, gate order i/f/o/g over the
  // concatenated [x_t ; h_{t-1}] input. Mirrors ModelGraph::encode step for
  // step; temporaries are kept separate so the arithmetic matches the tape.
  std::vector<double> run_lstm(std::span<const std::int32_t> ids, bool reverse) const {
    const char* dir = reverse ? "bwd" : "fwd";
    const Tensor& embed = params.get("embed");
    const Tensor& wi = params.get(std::string(dir) + ".Wi");
    const Tensor& bi = params.get(std::string(dir) + ".bi");
    const Tensor& wf = params.get(std::string(dir) + ".Wf");
    const Tensor& bf = params.get(std::string(dir) + ".bf");
    const Tensor& wo = params.get(std::string(dir) + ".Wo");
    const Tensor& bo = params.get(std::string(dir) + ".bo");
    const Tensor& wg = params.get(std::string(dir) + ".Wg");
    const Tensor& bg = params.get(std::string(dir) + ".bg");

    std::size_t e = config.embed_dim, hd = config.hidden_dim;
    std::vector<double> h(hd, 0.0), c(hd, 0.0);
    std::vector<double> z(e + hd), gi(hd), gf(hd), go(hd), gg(hd);
    std::vector<double> t1(hd), t2(hd);

    std::size_t n = ids.size();
    for (std::size_t step = 0; step < n; ++step) {
      std::int32_t id = reverse ? ids[n - 1 - step] : ids[step];
      const double* x = embed.values.data() + static_cast<std::size_t>(id) * e;
      std::copy(x, x + e, z.begin());
      std::copy(h.begin(), h.end(), z.begin() + e);

      auto gate = [&](const Tensor& w, const Tensor& b, std::vector<double>& out) {
        detail::matvec_accum(w.values.data(), hd, e + hd, z.data(), out.data());
        for (std::size_t k = 0; k < hd; ++k) out[k] += b.values[k];
      };
      gate(wi, bi, gi);
      gate(wf, bf, gf);
      gate(wo, bo, go);
      gate(wg, bg, gg);
      for (std::size_t k = 0; k < hd; ++k) gi[k] = detail::sigmoid(gi[k]);
      for (std::size_t k = 0; k < hd; ++k) gf[k] = detail::sigmoid(gf[k]);
      for (std::size_t k = 0; k < hd; ++k) go[k] = detail::sigmoid(go[k]);
      for (std::size_t k = 0; k < hd; ++k) gg[k] = std::tanh(gg[k]);

      for (std::size_t k = 0; k < hd; ++k) t1[k] = gf[k] * c[k];
      for (std::size_t k = 0; k < hd; ++k) t2[k] = gi[k] * gg[k];
      for (std::size_t k = 0; k < hd; ++k) c[k] = t1[k] + t2[k];
      for (std::size_t k = 0; k < hd; ++k) t1[k] = std::tanh(c[k]);
      for (std::size_t k = 0; k < hd; ++k) h[k] = go[k] * t1[k];
    }
    return h;
  }

  friend class ModelGraph;
};

// Builds the model's computation on one tape, for training and gradient
// checking. Leaf nodes are created once per parameter per tape, so several
// encodings in one group share them.
class ModelGraph {
 public:
  ModelGraph(Tape& tape, S3MModel& model) : tape_(tape), model_(model) {}

  Tape::Node encode_trace(std::span<const std::int32_t> ids) {
    model_.check_ids(ids);
    Tape::Node fwd = run_lstm(ids, false);
    Tape::Node bwd = run_lstm(ids, true);
    return tape_.concat(fwd, bwd);
  }

  Tape::Node score_features(Tape::Node f) {
    Tape::Node h = tape_.relu(tape_.add(tape_.matvec(leaf("cls.W1"), f), leaf("cls.b1")));
    return tape_.add(tape_.matvec(leaf("cls.W2"), h), leaf("cls.b2"));
  }

  Tape::Node score_encodings(Tape::Node e1, Tape::Node e2) {
    return score_features(pair_features_node(tape_, e1, e2));
  }

  Tape::Node score_pair(std::span<const std::int32_t> ids1,
                        std::span<const std::int32_t> ids2) {
    Tape::Node e1 = encode_trace(ids1);
    Tape::Node e2 = encode_trace(ids2);
    return score_encodings(e1, e2);
  }

  Tape& tape() { return tape_; }

 private:
  Tape::Node leaf(const std::string& name) {
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return it->second;
    Tape::Node n = tape_.leaf(model_.params.get(name));
    leaves_.emplace(name, n);
    return n;
  }

  Tape::Node run_lstm(std::span<const std::int32_t> ids, bool reverse) {
    const char* dir = reverse ? "bwd" : "fwd";
    std::string d(dir);
    Tape::Node wi = leaf(d + ".Wi"), bi = leaf(d + ".bi");
    Tape::Node wf = leaf(d + ".Wf"), bf = leaf(d + ".bf");
    Tape::Node wo = leaf(d + ".Wo"), bo = leaf(d + ".bo");
    Tape::Node wg = leaf(d + ".Wg"), bg = leaf(d + ".bg");
    Tensor& embed = model_.params.get("embed");

    std::size_t hd = model_.config.hidden_dim;
    Tape::Node h = tape_.input(Tensor::zeros(hd));
    Tape::Node c = tape_.input(Tensor::zeros(hd));

    std::size_t n = ids.size();
    for (std::size_t step = 0; step < n; ++step) {
      std::int32_t id = reverse ? ids[n - 1 - step] : ids[step];
      Tape::Node x = tape_.embed(embed, static_cast<std::size_t>(id));
      Tape::Node z = tape_.concat(x, h);
      Tape::Node gi = tape_.sigmoid(tape_.add(tape_.matvec(wi, z), bi));
      Tape::Node gf = tape_.sigmoid(tape_.add(tape_.matvec(wf, z), bf));
      Tape::Node go = tape_.sigmoid(tape_.add(tape_.matvec(wo, z), bo));
      Tape::Node gg = tape_.tanh(tape_.add(tape_.matvec(wg, z), bg));
      c = tape_.add(tape_.hadamard(gf, c), tape_.hadamard(gi, gg));
      h = tape_.hadamard(go, tape_.tanh(c));
    }
    return h;
  }

  Tape& tape_;
  S3MModel& model_;
  std::unordered_map<std::string, Tape::Node> leaves_;
};

}  // namespace s3m
