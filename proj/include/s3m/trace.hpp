#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

namespace s3m {

// One fully qualified method name on the call stack, e.g.
// "com.intellij.psi.impl.source.PsiFileImpl.getStubTree". Segments are the
// dot-separated parts; joining them with "." reproduces `raw`. Frames
// without dots (native frames and the like) are a single segment.
struct Frame {
  std::string raw;
  std::vector<std::string> segments;

  static Frame parse(std::string text) {
    Frame f;
    f.segments.reserve(8);
    std::size_t begin = 0;
    while (true) {
      std::size_t dot = text.find('.', begin);
      if (dot == std::string::npos) {
        f.segments.emplace_back(text.substr(begin));
        break;
      }
      f.segments.emplace_back(text.substr(begin, dot - begin));
      begin = dot + 1;
    }
    f.raw = std::move(text);
    return f;
  }

  bool operator==(const Frame& o) const { return raw == o.raw; }
};

// A crash report: ordered frames (index 0 = top of stack, the innermost
// call), a ground-truth bucket id, and a UTC unix timestamp.
struct StackTrace {
  std::int64_t report_id = 0;
  std::int64_t bucket_id = 0;
  std::int64_t timestamp = 0;
  std::vector<Frame> frames;
};

inline bool stream_precedes(const StackTrace& a, const StackTrace& b) {
  if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
  return a.report_id < b.report_id;
}

// Immutable after construction; traces sorted by (timestamp, report_id).
struct Dataset {
  std::vector<StackTrace> traces;
  std::map<std::int64_t, std::vector<std::int64_t>> buckets;  // bucket -> report ids

  static Dataset from_traces(std::vector<StackTrace> traces) {
    Dataset ds;
    ds.traces = std::move(traces);
    std::sort(ds.traces.begin(), ds.traces.end(),
              [](const StackTrace& a, const StackTrace& b) { return stream_precedes(a, b); });
    std::unordered_set<std::int64_t> seen;
    for (const StackTrace& t : ds.traces) {
      if (t.frames.empty())
        throw std::invalid_argument("Dataset: report " + std::to_string(t.report_id) +
                                    " has no frames");
      if (t.timestamp < 0)
        throw std::invalid_argument("Dataset: report " + std::to_string(t.report_id) +
                                    " has a negative timestamp");
      if (!seen.insert(t.report_id).second)
        throw std::invalid_argument("Dataset: duplicate report_id " +
                                    std::to_string(t.report_id));
      ds.buckets[t.bucket_id].push_back(t.report_id);
    }
    return ds;
  }

  std::size_t size() const { return traces.size(); }
  bool empty() const { return traces.empty(); }
};

enum class DatasetFormat { Jsonl };

struct ParseStats {
  std::size_t total_lines = 0;
  std::size_t malformed = 0;   // bad JSON, missing/ill-typed keys, empty frames
  std::size_t duplicates = 0;  // repeated report_id, first occurrence wins
};

// Reads a UTF-8 JSON-lines dataset: one record per line with integer
// `report_id`, `bucket_id`, `timestamp` (seconds) and a non-empty string
// array `frames` (top of stack first). Malformed lines are skipped and
// counted; an unreadable file or zero valid records is fatal.
inline Dataset parse_dataset(const std::string& path,
                             DatasetFormat format = DatasetFormat::Jsonl,
                             ParseStats* stats = nullptr) {
  (void)format;  // jsonl is the only wire format
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);

  ParseStats local;
  std::vector<StackTrace> traces;
  std::unordered_set<std::int64_t> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    local.total_lines += 1;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    bool ok = !j.is_discarded() && j.is_object() &&
              j.contains("report_id") && j["report_id"].is_number_integer() &&
              j.contains("bucket_id") && j["bucket_id"].is_number_integer() &&
              j.contains("timestamp") && j["timestamp"].is_number_integer() &&
              j.contains("frames") && j["frames"].is_array() && !j["frames"].empty();
    if (ok) {
      for (const auto& f : j["frames"])
        if (!f.is_string()) {
          ok = false;
          break;
        }
    }
    if (ok && j["timestamp"].get<std::int64_t>() < 0) ok = false;
    if (!ok) {
      local.malformed += 1;
      continue;
    }
    StackTrace t;
    t.report_id = j["report_id"].get<std::int64_t>();
    t.bucket_id = j["bucket_id"].get<std::int64_t>();
    t.timestamp = j["timestamp"].get<std::int64_t>();
    if (!seen.insert(t.report_id).second) {
      local.duplicates += 1;
      continue;
    }
    t.frames.reserve(j["frames"].size());
    for (const auto& f : j["frames"]) t.frames.push_back(Frame::parse(f.get<std::string>()));
    traces.push_back(std::move(t));
  }

  if (stats) *stats = local;
  if (traces.empty())
    throw std::runtime_error("dataset contains no valid records: " + path);
  return Dataset::from_traces(std::move(traces));
}

// Writes a dataset back out in the same JSON-lines format, in stream order.
inline void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  for (const StackTrace& t : ds.traces) {
    nlohmann::json j;
    j["report_id"] = t.report_id;
    j["bucket_id"] = t.bucket_id;
    j["timestamp"] = t.timestamp;
    std::vector<std::string> frames;
    frames.reserve(t.frames.size());
    for (const Frame& f : t.frames) frames.push_back(f.raw);
    j["frames"] = frames;
    out << j.dump() << '\n';
  }
}

constexpr int kMinTrimLevel = 0;
constexpr int kMaxTrimLevel = 3;

// Drops the last `level` name segments of a frame: 0 keeps the full method
// name, 1 trims to class, 2 to package, and so on. A frame is never trimmed
// to nothing: at least the first segment survives.
inline std::string trim_frame(const Frame& frame, int level) {
  if (level < kMinTrimLevel || level > kMaxTrimLevel)
    throw std::invalid_argument("trim level must be in [0,3], got " +
                                std::to_string(level));
  if (level == 0) return frame.raw;
  std::size_t keep = frame.segments.size() > static_cast<std::size_t>(level)
                         ? frame.segments.size() - static_cast<std::size_t>(level)
                         : 1;
  std::string out = frame.segments[0];
  for (std::size_t i = 1; i < keep; ++i) {
    out += '.';
    out += frame.segments[i];
  }
  return out;
}

// Trimmed tokens of a trace, top of stack first, truncated to max_len.
inline std::vector<std::string> tokenize(const StackTrace& trace, int level,
                                         std::size_t max_len) {
  if (max_len < 1) throw std::invalid_argument("tokenize: max_len must be >= 1");
  std::size_t n = std::min(trace.frames.size(), max_len);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(trim_frame(trace.frames[i], level));
  return out;
}

// Trimmed-token dictionary. Ids 0 and 1 are reserved for padding and
// out-of-vocabulary tokens; real tokens get contiguous ids from 2 in
// lexicographic order, so two builds over the same input are identical.
struct Vocabulary {
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kOov = 1;

  std::unordered_map<std::string, std::int32_t> token_to_id;
  int trim_level = 0;

  std::int32_t lookup(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kOov : it->second;
  }

  // Total id count including PAD and OOV.
  std::size_t size() const { return token_to_id.size() + 2; }

  bool operator==(const Vocabulary& o) const {
    return trim_level == o.trim_level && token_to_id == o.token_to_id;
  }
};

inline Vocabulary build_vocab(const Dataset& train, int level) {
  if (train.empty()) throw std::invalid_argument("build_vocab: empty train set");
  std::vector<std::string> tokens;
  {
    std::unordered_set<std::string> distinct;
    for (const StackTrace& t : train.traces)
      for (const Frame& f : t.frames) distinct.insert(trim_frame(f, level));
    tokens.assign(distinct.begin(), distinct.end());
  }
  std::sort(tokens.begin(), tokens.end());
  Vocabulary v;
  v.trim_level = level;
  v.token_to_id.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i)
    v.token_to_id.emplace(std::move(tokens[i]), static_cast<std::int32_t>(i + 2));
  return v;
}

inline std::vector<std::int32_t> encode(const Vocabulary& vocab,
                                        std::span<const std::string> tokens) {
  if (tokens.empty()) throw std::invalid_argument("encode: empty token sequence");
  std::vector<std::int32_t> ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) ids.push_back(vocab.lookup(t));
  return ids;
}

inline std::vector<std::int32_t> encode_trace_tokens(const Vocabulary& vocab,
                                                     const StackTrace& trace,
                                                     std::size_t max_len) {
  std::vector<std::string> toks = tokenize(trace, vocab.trim_level, max_len);
  return encode(vocab, toks);
}

constexpr std::int64_t kSecondsPerDay = 86400;

struct Split {
  Dataset train, validation, test;
  std::int64_t validation_boundary = 0;  // first validation timestamp
  std::int64_t test_boundary = 0;        // first test timestamp
  std::int64_t window_end = 0;
  std::size_t dropped = 0;  // traces outside [start, window_end)
};

// Time-aware split into half-open windows: [start, +train_days) is train,
// then validation, then test. A trace exactly on a boundary belongs to the
// later partition. Traces outside the overall window are dropped.
inline Split time_split(const Dataset& ds, int train_days, int val_days,
                        int test_days, std::int64_t start) {
  if (train_days < 1 || val_days < 1 || test_days < 1)
    throw std::invalid_argument("time_split: all window durations must be >= 1 day");
  if (ds.empty()) throw std::invalid_argument("time_split: empty dataset");
  if (start > ds.traces.back().timestamp)
    throw std::invalid_argument("time_split: start is after the last report");

  Split s;
  s.validation_boundary = start + static_cast<std::int64_t>(train_days) * kSecondsPerDay;
  s.test_boundary = s.validation_boundary + static_cast<std::int64_t>(val_days) * kSecondsPerDay;
  s.window_end = s.test_boundary + static_cast<std::int64_t>(test_days) * kSecondsPerDay;

  std::vector<StackTrace> train, val, test;
  for (const StackTrace& t : ds.traces) {
    if (t.timestamp < start || t.timestamp >= s.window_end)
      s.dropped += 1;
    else if (t.timestamp < s.validation_boundary)
      train.push_back(t);
    else if (t.timestamp < s.test_boundary)
      val.push_back(t);
    else
      test.push_back(t);
  }
  if (train.empty()) throw std::runtime_error("time_split: train partition is empty");
  if (test.empty()) throw std::runtime_error("time_split: test partition is empty");
  s.train = Dataset::from_traces(std::move(train));
  if (!val.empty()) s.validation = Dataset::from_traces(std::move(val));
  s.test = Dataset::from_traces(std::move(test));
  return s;
}

}  // namespace s3m
