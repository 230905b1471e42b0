#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "s3m/bundle.hpp"
#include "s3m/model.hpp"
#include "s3m/tfidf.hpp"
#include "s3m/trace.hpp"

namespace s3m {

// A named trace-level scoring contract: higher = more similar. Must be
// deterministic and total over non-empty traces.
struct SimilarityMeasure {
  std::string name;
  std::function<double(const StackTrace&, const StackTrace&)> score;
};

// Longest common prefix of the trimmed frame sequences, normalized by the
// longer trace.
inline double prefix_match(const StackTrace& a, const StackTrace& b, int trim_level) {
  std::size_t n = std::min(a.frames.size(), b.frames.size());
  std::size_t common = 0;
  while (common < n && trim_frame(a.frames[common], trim_level) ==
                           trim_frame(b.frames[common], trim_level))
    ++common;
  return static_cast<double>(common) /
         static_cast<double>(std::max(a.frames.size(), b.frames.size()));
}

inline SimilarityMeasure prefix_measure(int trim_level) {
  return {"prefix", [trim_level](const StackTrace& a, const StackTrace& b) {
            return prefix_match(a, b, trim_level);
          }};
}

// TF-IDF cosine with per-report memoization of the sparse vectors.
inline SimilarityMeasure tfidf_measure(std::shared_ptr<const TfidfIndex> index) {
  auto cache =
      std::make_shared<std::unordered_map<std::int64_t, TfidfIndex::SparseVec>>();
  auto vec_of = [index, cache](const StackTrace& t) -> const TfidfIndex::SparseVec& {
    auto it = cache->find(t.report_id);
    if (it == cache->end()) it = cache->emplace(t.report_id, index->vectorize(t)).first;
    return it->second;
  };
  return {"tfidf", [vec_of](const StackTrace& a, const StackTrace& b) {
            return TfidfIndex::cosine(vec_of(a), vec_of(b));
          }};
}

// Neural measure. Each trace is encoded once and the encoding reused across
// every pair it appears in; only the classifier head runs per pair. The
// caller keeps model and vocab alive; the cache is fresh per measure, so
// build a new measure after the parameters change.
inline SimilarityMeasure model_measure(const S3MModel& model, const Vocabulary& vocab,
                                       std::size_t max_len) {
  auto cache = std::make_shared<std::unordered_map<std::int64_t, std::vector<double>>>();
  const S3MModel* m = &model;
  const Vocabulary* v = &vocab;
  auto enc_of = [m, v, max_len, cache](const StackTrace& t) -> const std::vector<double>& {
    auto it = cache->find(t.report_id);
    if (it == cache->end()) {
      std::vector<std::int32_t> ids = encode_trace_tokens(*v, t, max_len);
      it = cache->emplace(t.report_id, m->encode_trace(ids)).first;
    }
    return it->second;
  };
  return {"s3m", [m, enc_of](const StackTrace& a, const StackTrace& b) {
            return m->score_encodings(enc_of(a), enc_of(b));
          }};
}

inline SimilarityMeasure model_measure(std::shared_ptr<const ModelBundle> bundle) {
  SimilarityMeasure inner = model_measure(bundle->model, bundle->vocab, bundle->max_len);
  // The bundle rides along in the closure to pin its lifetime.
  return {inner.name, [bundle, inner](const StackTrace& a, const StackTrace& b) {
            return inner.score(a, b);
          }};
}

enum class BucketAggregate { Max, Mean };

// Candidate pool for one query: every bucket with at least one historical
// trace, keyed by bucket id (ordered, so traversal is deterministic).
using BucketHistory = std::map<std::int64_t, std::vector<const StackTrace*>>;

struct RankedResult {
  std::int64_t query_report_id = 0;
  std::vector<std::pair<std::int64_t, double>> ranking;  // bucket, score desc
  std::optional<std::size_t> rank_of_truth;              // 1-based
};

// Scores every historical bucket against the query (max or mean over the
// bucket's traces) and sorts by score descending, bucket id ascending.
inline RankedResult rank_buckets(const StackTrace& query, const BucketHistory& history,
                                 const SimilarityMeasure& measure,
                                 BucketAggregate agg = BucketAggregate::Max) {
  RankedResult r;
  r.query_report_id = query.report_id;
  r.ranking.reserve(history.size());
  for (const auto& [bucket, traces] : history) {
    if (traces.empty()) continue;
    double s;
    if (agg == BucketAggregate::Max) {
      s = measure.score(query, *traces[0]);
      for (std::size_t i = 1; i < traces.size(); ++i)
        s = std::max(s, measure.score(query, *traces[i]));
    } else {
      s = 0.0;
      for (const StackTrace* t : traces) s += measure.score(query, *t);
      s /= static_cast<double>(traces.size());
    }
    r.ranking.emplace_back(bucket, s);
  }
  std::stable_sort(r.ranking.begin(), r.ranking.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second > b.second;
                     return a.first < b.first;
                   });
  for (std::size_t i = 0; i < r.ranking.size(); ++i)
    if (r.ranking[i].first == query.bucket_id) {
      r.rank_of_truth = i + 1;
      break;
    }
  return r;
}

// Mean reciprocal rank over evaluable queries (those whose true bucket had
// history). Queries without a rank are excluded, not scored as misses.
inline double mrr(std::span<const RankedResult> results) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const RankedResult& r : results)
    if (r.rank_of_truth) {
      sum += 1.0 / static_cast<double>(*r.rank_of_truth);
      n += 1;
    }
  if (n == 0) throw std::runtime_error("mrr: no evaluable queries");
  return sum / static_cast<double>(n);
}

inline double rr_at_k(std::span<const RankedResult> results, std::size_t k) {
  std::size_t hits = 0, n = 0;
  for (const RankedResult& r : results)
    if (r.rank_of_truth) {
      n += 1;
      if (*r.rank_of_truth <= k) hits += 1;
    }
  if (n == 0) throw std::runtime_error("rr_at_k: no evaluable queries");
  return static_cast<double>(hits) / static_cast<double>(n);
}

struct MetricsReport {
  double mrr = 0.0;
  std::map<int, double> rr_at;  // k -> recall rate
  std::size_t n_queries = 0;    // evaluable
  std::size_t n_skipped = 0;    // true bucket had no history

  std::string to_json() const {
    std::string out = "{\"mrr\":" + fmt(mrr) + ",\"rr\":{";
    bool first = true;
    for (const auto& [k, v] : rr_at) {
      if (!first) out += ",";
      first = false;
      out += "\"" + std::to_string(k) + "\":" + fmt(v);
    }
    out += "},\"n_queries\":" + std::to_string(n_queries) +
           ",\"n_skipped\":" + std::to_string(n_skipped) + "}";
    return out;
  }

 private:
  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
  }
};

inline MetricsReport compute_metrics(std::span<const RankedResult> results,
                                     std::span<const int> ks) {
  MetricsReport rep;
  rep.mrr = mrr(results);
  for (const RankedResult& r : results)
    (r.rank_of_truth ? rep.n_queries : rep.n_skipped) += 1;
  for (int k : ks) rep.rr_at[k] = rr_at_k(results, static_cast<std::size_t>(k));
  return rep;
}

struct EvalOptions {
  std::vector<int> ks = {1, 5, 10};
  BucketAggregate aggregate = BucketAggregate::Max;
  // When true (default), test traces that precede the query join its
  // candidate history; when false the history is frozen at the initial set.
  bool stream_history = true;
};

// Streaming evaluation: queries are visited in (timestamp, report_id) order;
// each query is ranked against the initial history plus every already-seen
// query trace with a strictly earlier timestamp.
inline MetricsReport evaluate_stream(const SimilarityMeasure& measure,
                                     std::span<const StackTrace* const> initial_history,
                                     std::span<const StackTrace> queries,
                                     const EvalOptions& opts = {},
                                     std::vector<RankedResult>* per_query = nullptr) {
  BucketHistory history;
  for (const StackTrace* t : initial_history) history[t->bucket_id].push_back(t);

  std::vector<const StackTrace*> order;
  order.reserve(queries.size());
  for (const StackTrace& t : queries) order.push_back(&t);
  std::sort(order.begin(), order.end(), [](const StackTrace* a, const StackTrace* b) {
    return stream_precedes(*a, *b);
  });

  std::vector<RankedResult> results;
  results.reserve(order.size());
  std::vector<const StackTrace*> pending;  // processed queries not yet in history
  for (const StackTrace* q : order) {
    if (opts.stream_history) {
      std::size_t kept = 0;
      for (const StackTrace* p : pending) {
        if (p->timestamp < q->timestamp)
          history[p->bucket_id].push_back(p);
        else
          pending[kept++] = p;
      }
      pending.resize(kept);
    }
    results.push_back(rank_buckets(*q, history, measure, opts.aggregate));
    if (opts.stream_history) pending.push_back(q);
  }

  MetricsReport rep = compute_metrics(results, opts.ks);
  if (per_query) *per_query = std::move(results);
  return rep;
}

inline std::vector<const StackTrace*> trace_ptrs(
    std::initializer_list<const Dataset*> datasets) {
  std::vector<const StackTrace*> out;
  for (const Dataset* ds : datasets)
    for (const StackTrace& t : ds->traces) out.push_back(&t);
  return out;
}

// Deduplication protocol over a time split: test queries in chronological
// order, history seeded with the train and validation windows.
inline MetricsReport evaluate(const SimilarityMeasure& measure, const Split& split,
                              const EvalOptions& opts = {},
                              std::vector<RankedResult>* per_query = nullptr) {
  std::vector<const StackTrace*> initial =
      trace_ptrs({&split.train, &split.validation});
  return evaluate_stream(measure, initial, split.test.traces, opts, per_query);
}

}  // namespace s3m
