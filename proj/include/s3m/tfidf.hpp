#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "s3m/trace.hpp"

namespace s3m {

// Frame-level TF-IDF retrieval baseline: a trace is a bag of trimmed-frame
// terms, term weight is (1 + log tf) * idf with idf = log(1 + N/df), and
// similarity is the cosine between the weighted vectors. Terms outside the
// indexed corpus are weighted as if df = 1.
class TfidfIndex {
 public:
  struct DocRef {
    std::int64_t report_id = 0;
    std::int64_t bucket_id = 0;
    std::int64_t timestamp = 0;
  };

  // L2-normalized sparse vector keyed by term text, sorted by term.
  using SparseVec = std::vector<std::pair<std::string, double>>;

  TfidfIndex(std::span<const StackTrace> docs, int trim_level)
      : trim_level_(trim_level) {
    std::vector<std::unordered_map<std::string, std::size_t>> bags;
    bags.reserve(docs.size());
    std::unordered_map<std::string, std::size_t> df;
    for (const StackTrace& t : docs) {
      auto& bag = bags.emplace_back();
      for (const Frame& f : t.frames) bag[trim_frame(f, trim_level)] += 1;
      for (const auto& [term, tf] : bag) df[term] += 1;
      docs_.push_back(DocRef{t.report_id, t.bucket_id, t.timestamp});
    }

    // Lexicographic term ids keep every downstream iteration deterministic.
    std::vector<std::string> terms;
    terms.reserve(df.size());
    for (const auto& [term, n] : df) terms.push_back(term);
    std::sort(terms.begin(), terms.end());
    double n_docs = static_cast<double>(docs.size());
    idf_.resize(terms.size());
    for (std::size_t i = 0; i < terms.size(); ++i) {
      term_id_[terms[i]] = static_cast<std::int32_t>(i);
      idf_[i] = std::log(1.0 + n_docs / static_cast<double>(df[terms[i]]));
    }
    unseen_idf_ = std::log(1.0 + n_docs);

    doc_vecs_.resize(docs.size());
    postings_.resize(terms.size());
    for (std::size_t d = 0; d < bags.size(); ++d) {
      auto& vec = doc_vecs_[d];
      vec.reserve(bags[d].size());
      for (const auto& [term, tf] : bags[d]) {
        std::int32_t id = term_id_.at(term);
        vec.emplace_back(id, (1.0 + std::log(static_cast<double>(tf))) * idf_[id]);
      }
      std::sort(vec.begin(), vec.end());
      double norm = 0.0;
      for (auto& [id, w] : vec) norm += w * w;
      norm = std::sqrt(norm);
      if (norm > 0.0)
        for (auto& [id, w] : vec) w /= norm;
      for (auto& [id, w] : vec)
        postings_[static_cast<std::size_t>(id)].emplace_back(
            static_cast<std::uint32_t>(d), w);
    }
  }

  int trim_level() const { return trim_level_; }
  std::size_t doc_count() const { return docs_.size(); }
  const std::vector<DocRef>& docs() const { return docs_; }

  SparseVec vectorize(const StackTrace& trace) const {
    std::unordered_map<std::string, std::size_t> bag;
    for (const Frame& f : trace.frames) bag[trim_frame(f, trim_level_)] += 1;
    SparseVec vec;
    vec.reserve(bag.size());
    for (const auto& [term, tf] : bag) {
      auto it = term_id_.find(term);
      double idf = it == term_id_.end() ? unseen_idf_ : idf_[it->second];
      vec.emplace_back(term, (1.0 + std::log(static_cast<double>(tf))) * idf);
    }
    std::sort(vec.begin(), vec.end());
    double norm = 0.0;
    for (auto& [term, w] : vec) norm += w * w;
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (auto& [term, w] : vec) w /= norm;
    return vec;
  }

  static double cosine(const SparseVec& a, const SparseVec& b) {
    double dot = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
      int c = a[i].first.compare(b[j].first);
      if (c == 0) {
        dot += a[i].second * b[j].second;
        ++i;
        ++j;
      } else if (c < 0) {
        ++i;
      } else {
        ++j;
      }
    }
    return dot;
  }

  double score(const StackTrace& a, const StackTrace& b) const {
    return cosine(vectorize(a), vectorize(b));
  }

  // Per-bucket best cosine against the query over indexed docs accepted by
  // `admit`, sorted by score descending, bucket id ascending. top_n = 0
  // returns all buckets. Runs over the postings of the query's terms, so
  // docs sharing no term are skipped (their cosine is zero).
  std::vector<std::pair<std::int64_t, double>> rank_buckets(
      const StackTrace& query, const std::function<bool(const DocRef&)>& admit,
      std::size_t top_n = 0) const {
    std::unordered_map<std::string, std::size_t> bag;
    for (const Frame& f : query.frames) bag[trim_frame(f, trim_level_)] += 1;
    std::vector<std::pair<std::int32_t, double>> qterms;  // known terms only
    double qnorm = 0.0;
    for (const auto& [term, tf] : bag) {
      auto it = term_id_.find(term);
      double idf = it == term_id_.end() ? unseen_idf_ : idf_[it->second];
      double w = (1.0 + std::log(static_cast<double>(tf))) * idf;
      qnorm += w * w;
      if (it != term_id_.end()) qterms.emplace_back(it->second, w);
    }
    qnorm = std::sqrt(qnorm);
    std::sort(qterms.begin(), qterms.end());

    std::unordered_map<std::uint32_t, double> dots;
    for (const auto& [tid, qw] : qterms)
      for (const auto& [doc, dw] : postings_[static_cast<std::size_t>(tid)])
        dots[doc] += qw * dw;

    std::unordered_map<std::int64_t, double> bucket_best;
    for (const auto& [doc, dot] : dots) {
      const DocRef& ref = docs_[doc];
      if (!admit(ref)) continue;
      double s = qnorm > 0.0 ? dot / qnorm : 0.0;
      auto [it, inserted] = bucket_best.emplace(ref.bucket_id, s);
      if (!inserted && s > it->second) it->second = s;
    }

    std::vector<std::pair<std::int64_t, double>> out(bucket_best.begin(),
                                                     bucket_best.end());
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    if (top_n > 0 && out.size() > top_n) out.resize(top_n);
    return out;
  }

 private:
  int trim_level_;
  std::unordered_map<std::string, std::int32_t> term_id_;
  std::vector<double> idf_;
  double unseen_idf_ = 0.0;
  std::vector<DocRef> docs_;
  std::vector<std::vector<std::pair<std::int32_t, double>>> doc_vecs_;
  std::vector<std::vector<std::pair<std::uint32_t, double>>> postings_;
};

}  // namespace s3m
