#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "s3m/bundle.hpp"
#include "s3m/model.hpp"
#include "s3m/optim.hpp"
#include "s3m/retrieval.hpp"
#include "s3m/rng.hpp"
#include "s3m/tensor.hpp"
#include "s3m/tfidf.hpp"
#include "s3m/trace.hpp"

namespace s3m {

struct TrainConfig {
  double lr = 1e-4;
  int epochs = 10;
  std::uint64_t seed = 0;
  int trim_level = 0;
  std::size_t max_len = 100;
  std::size_t negatives_k = 4;
  std::size_t candidate_pool = 50;
  double grad_clip = 0.0;  // global norm; 0 disables
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void validate() const {
    if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (negatives_k < 1) throw std::invalid_argument("TrainConfig: negatives_k must be >= 1");
    if (trim_level < kMinTrimLevel || trim_level > kMaxTrimLevel)
      throw std::invalid_argument("TrainConfig: trim_level must be in [0,3]");
    if (max_len < 1) throw std::invalid_argument("TrainConfig: max_len must be >= 1");
  }
};

// One RankNet group: a query, one relevant answer from its bucket, and
// negatives_k non-relevant answers from foreign buckets.
struct TrainGroup {
  std::vector<std::int32_t> query;
  std::vector<std::int32_t> positive;
  std::vector<std::vector<std::int32_t>> negatives;

  // source ids, for diagnostics and the sampling invariants
  std::int64_t query_report_id = 0;
  std::int64_t query_bucket_id = 0;
  std::int64_t positive_report_id = 0;
  std::vector<std::int64_t> negative_report_ids;
  std::vector<std::int64_t> negative_bucket_ids;
};

// Pairwise RankNet with unit scale: sum_j log(1 + exp(s_neg_j - s_pos)).
inline double ranknet_loss(double s_pos, std::span<const double> s_negs) {
  double loss = 0.0;
  for (double s : s_negs) loss += detail::softplus(s - s_pos);
  return loss;
}

inline Tape::Node ranknet_loss_node(Tape& t, Tape::Node s_pos,
                                    std::span<const Tape::Node> s_negs) {
  if (s_negs.empty()) throw std::invalid_argument("ranknet_loss: no negatives");
  Tape::Node loss = t.softplus(t.sub(s_negs[0], s_pos));
  for (std::size_t i = 1; i < s_negs.size(); ++i)
    loss = t.add(loss, t.softplus(t.sub(s_negs[i], s_pos)));
  return loss;
}

// Builds the training groups in chronological order. A report becomes a
// query only if its bucket already holds a strictly earlier report; the
// positive is drawn uniformly from those. Negatives come from the traces of
// the top candidate_pool earlier buckets under the TF-IDF baseline
// (excluding the true bucket); buckets with zero term overlap are never
// "selected" by the baseline, so when the hard pool holds fewer than
// negatives_k traces the remainder is drawn uniformly from all earlier
// foreign traces.
inline std::vector<TrainGroup> build_groups(const Dataset& train,
                                            const Vocabulary& vocab,
                                            const TfidfIndex& tfidf,
                                            const TrainConfig& config, Rng& rng) {
  config.validate();
  std::vector<TrainGroup> groups;
  std::vector<const StackTrace*> earlier_same;
  std::vector<const StackTrace*> pool;

  // traces are sorted by (timestamp, report_id): prefix = strictly earlier
  for (std::size_t qi = 0; qi < train.traces.size(); ++qi) {
    const StackTrace& q = train.traces[qi];

    earlier_same.clear();
    for (std::size_t j = 0; j < qi; ++j)
      if (train.traces[j].bucket_id == q.bucket_id) earlier_same.push_back(&train.traces[j]);
    if (earlier_same.empty()) continue;  // first report of its bucket
    if (qi == earlier_same.size()) continue;  // no earlier foreign trace to contrast with

    const StackTrace& positive = *earlier_same[rng.next_index(earlier_same.size())];

    auto admit = [&](const TfidfIndex::DocRef& d) {
      return d.bucket_id != q.bucket_id &&
             (d.timestamp < q.timestamp ||
              (d.timestamp == q.timestamp && d.report_id < q.report_id));
    };
    auto top = tfidf.rank_buckets(q, admit, config.candidate_pool);

    pool.clear();
    {
      std::unordered_set<std::int64_t> top_buckets;
      for (const auto& [bucket, score] : top) top_buckets.insert(bucket);
      for (std::size_t j = 0; j < qi; ++j) {
        const StackTrace& t = train.traces[j];
        if (top_buckets.count(t.bucket_id)) pool.push_back(&t);
      }
    }

    TrainGroup g;
    g.query_report_id = q.report_id;
    g.query_bucket_id = q.bucket_id;
    g.positive_report_id = positive.report_id;

    std::vector<const StackTrace*> negs;
    if (pool.size() <= config.negatives_k) {
      negs = pool;  // whole pool, order is chronological
    } else {
      // uniform sample without replacement
      std::vector<std::size_t> idx(pool.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      for (std::size_t i = 0; i < config.negatives_k; ++i) {
        std::size_t j = i + rng.next_index(idx.size() - i);
        std::swap(idx[i], idx[j]);
        negs.push_back(pool[idx[i]]);
      }
    }
    // top up from all earlier foreign traces when the hard pool is short;
    // repeats only once the distinct candidates run out
    if (negs.size() < config.negatives_k) {
      std::unordered_set<std::int64_t> taken;
      for (const StackTrace* n : negs) taken.insert(n->report_id);
      std::vector<const StackTrace*> rest;
      for (std::size_t j = 0; j < qi; ++j) {
        const StackTrace& t = train.traces[j];
        if (t.bucket_id != q.bucket_id && !taken.count(t.report_id)) rest.push_back(&t);
      }
      rng.shuffle(rest);
      for (const StackTrace* t : rest) {
        if (negs.size() == config.negatives_k) break;
        negs.push_back(t);
      }
      std::size_t distinct = negs.size();
      while (negs.size() < config.negatives_k)
        negs.push_back(negs[rng.next_index(distinct)]);
    }

    g.query = encode_trace_tokens(vocab, q, config.max_len);
    g.positive = encode_trace_tokens(vocab, positive, config.max_len);
    for (const StackTrace* n : negs) {
      g.negatives.push_back(encode_trace_tokens(vocab, *n, config.max_len));
      g.negative_report_ids.push_back(n->report_id);
      g.negative_bucket_ids.push_back(n->bucket_id);
    }
    groups.push_back(std::move(g));
  }

  if (groups.empty())
    throw std::runtime_error(
        "build_groups: no trainable groups (no bucket has two reports with "
        "an earlier foreign trace)");
  return groups;
}

struct EpochStats {
  int epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double val_mrr = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::vector<double> first_epoch_losses;  // per-step, for trend diagnostics
  int best_epoch = 0;
  double best_val_mrr = 0.0;
  std::size_t group_count = 0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// End-to-end RankNet training. One group is one Adam step. After each epoch
// the validation MRR is measured (validation queries ranked against the
// train window plus earlier validation traces) and the parameter values
// with the best validation MRR are restored at the end. With no evaluable
// validation queries the final epoch wins and val_mrr reads 0.
inline TrainResult train(S3MModel& model, const Vocabulary& vocab, const Split& split,
                         const TrainConfig& config,
                         const EpochCallback& on_epoch = nullptr) {
  config.validate();
  if (vocab.trim_level != config.trim_level)
    throw std::invalid_argument("train: vocabulary trim level " +
                                std::to_string(vocab.trim_level) +
                                " does not match config trim level " +
                                std::to_string(config.trim_level));
  if (split.train.empty()) throw std::invalid_argument("train: empty train partition");

  Rng rng(config.seed);
  TfidfIndex sampler(split.train.traces, config.trim_level);
  std::vector<TrainGroup> groups = build_groups(split.train, vocab, sampler, config, rng);

  TrainResult result;
  result.group_count = groups.size();
  std::vector<std::size_t> order(groups.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<const StackTrace*> val_history = trace_ptrs({&split.train});
  std::vector<std::vector<double>> best_values;
  double best_mrr = -1.0;
  int best_epoch = 0;

  Tape tape;
  std::vector<Tape::Node> neg_scores;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
      const TrainGroup& g = groups[order[oi]];
      tape.clear();
      ModelGraph graph(tape, model);
      Tape::Node qe = graph.encode_trace(g.query);
      Tape::Node pe = graph.encode_trace(g.positive);
      Tape::Node s_pos = graph.score_encodings(qe, pe);
      neg_scores.clear();
      for (const auto& n : g.negatives)
        neg_scores.push_back(graph.score_encodings(qe, graph.encode_trace(n)));
      Tape::Node loss = ranknet_loss_node(tape, s_pos, neg_scores);

      double lv = tape.scalar(loss);
      if (!std::isfinite(lv))
        throw std::runtime_error("train: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", query report " +
                                 std::to_string(g.query_report_id));
      loss_sum += lv;
      if (epoch == 1) result.first_epoch_losses.push_back(lv);

      tape.backward(loss);
      if (config.grad_clip > 0.0) clip_grad_norm(model.params, config.grad_clip);
      adam_step(model.params, config.lr, config.beta1, config.beta2, config.eps);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / static_cast<double>(order.size());
    stats.val_mrr = 0.0;
    if (!split.validation.empty()) {
      SimilarityMeasure measure = model_measure(model, vocab, config.max_len);
      EvalOptions opts;
      opts.ks = {1};
      try {
        MetricsReport rep =
            evaluate_stream(measure, val_history, split.validation.traces, opts);
        stats.val_mrr = rep.mrr;
      } catch (const std::runtime_error&) {
        // no evaluable validation queries; val_mrr stays 0
      }
    }
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);

    // ties go to the later (more trained) epoch
    if (stats.val_mrr >= best_mrr) {
      best_mrr = stats.val_mrr;
      best_epoch = epoch;
      best_values = model.params.snapshot_values();
    }
  }

  if (!best_values.empty()) model.params.restore_values(best_values);
  result.best_epoch = best_epoch;
  result.best_val_mrr = best_mrr < 0.0 ? 0.0 : best_mrr;
  return result;
}

// Continues training from a saved bundle. Adam moments are not serialized,
// so the optimizer restarts from fresh state.
inline TrainResult resume_train(ModelBundle& bundle, const Split& split,
                                const TrainConfig& config,
                                const EpochCallback& on_epoch = nullptr) {
  config.validate();
  if (bundle.vocab.trim_level != config.trim_level)
    throw std::invalid_argument(
        "resume: bundle was built at trim level " +
        std::to_string(bundle.vocab.trim_level) + " but config asks for " +
        std::to_string(config.trim_level));
  Vocabulary fresh = build_vocab(split.train, config.trim_level);
  if (!(fresh == bundle.vocab))
    throw std::invalid_argument(
        "resume: vocabulary built from the train split does not match the "
        "bundle vocabulary (different data?)");
  if (bundle.max_len != config.max_len)
    throw std::invalid_argument("resume: bundle max_len " +
                                std::to_string(bundle.max_len) +
                                " does not match config max_len " +
                                std::to_string(config.max_len));
  bundle.model.params.reset_optimizer_state();
  return train(bundle.model, bundle.vocab, split, config, on_epoch);
}

}  // namespace s3m
