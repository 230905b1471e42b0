// Command-line front end for the S3M crash-report deduplicator.
//
// Conventions: stdout carries exactly one machine-readable JSON document per
// run; progress, tables and the resolved configuration go to stderr. Exit
// code 0 means the subcommand completed.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "s3m/bundle.hpp"
#include "s3m/gradcheck.hpp"
#include "s3m/model.hpp"
#include "s3m/retrieval.hpp"
#include "s3m/tfidf.hpp"
#include "s3m/trace.hpp"
#include "s3m/train.hpp"

namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// config file support: a flat JSON object whose keys are long option names
// (without the leading dashes). Values apply to any matching option of the
// active subcommand that was not given on the command line; flags win.

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("--config", "cannot open config file: " + path);
  json cfg = json::parse(in, nullptr, false);
  if (cfg.is_discarded() || !cfg.is_object())
    throw CLI::ValidationError("--config", "config file is not a JSON object: " + path);
  return cfg;
}

void apply_config(CLI::App* cmd, const json& cfg) {
  for (CLI::Option* opt : cmd->get_options()) {
    std::string name = opt->get_lnames().empty() ? "" : opt->get_lnames().front();
    if (name.empty() || name == "config" || name == "help") continue;
    if (opt->count() > 0) continue;  // explicit flag wins
    auto it = cfg.find(name);
    if (it == cfg.end()) continue;
    std::string text =
        it->is_string() ? it->get<std::string>() : it->dump();
    opt->add_result(text);
    opt->run_callback();
  }
}

void echo_config(const CLI::App* cmd) {
  std::string line = "config:";
  for (const CLI::Option* opt : cmd->get_options()) {
    if (opt->get_lnames().empty()) continue;
    std::string name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    std::vector<std::string> results = opt->results();
    std::string value;
    if (results.empty())
      value = opt->get_default_str();
    else
      for (const std::string& r : results) value += (value.empty() ? "" : ",") + r;
    if (value.empty()) value = "\"\"";
    line += " " + name + "=" + value;
  }
  std::fprintf(stderr, "%s\n", line.c_str());
}

// shared dataset-directory loader: expects train/validation/test.jsonl as
// written by `prepare`; a missing validation file is tolerated.
struct LoadedSplit {
  s3m::Split split;
  s3m::ParseStats train_stats, val_stats, test_stats;
};

LoadedSplit load_split_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  LoadedSplit out;
  out.split.train =
      s3m::parse_dataset((fs::path(dir) / "train.jsonl").string(),
                         s3m::DatasetFormat::Jsonl, &out.train_stats);
  fs::path val = fs::path(dir) / "validation.jsonl";
  if (fs::exists(val))
    out.split.validation =
        s3m::parse_dataset(val.string(), s3m::DatasetFormat::Jsonl, &out.val_stats);
  out.split.test = s3m::parse_dataset((fs::path(dir) / "test.jsonl").string(),
                                      s3m::DatasetFormat::Jsonl, &out.test_stats);
  return out;
}

void warn_stats(const char* which, const s3m::ParseStats& st) {
  if (st.malformed || st.duplicates)
    std::fprintf(stderr, "%s: skipped %zu malformed and %zu duplicate records\n",
                 which, st.malformed, st.duplicates);
}

json metrics_json(const s3m::MetricsReport& rep) {
  json rr = json::object();
  for (const auto& [k, v] : rep.rr_at) rr[std::to_string(k)] = v;
  return json{{"mrr", rep.mrr},
              {"rr", rr},
              {"n_queries", rep.n_queries},
              {"n_skipped", rep.n_skipped}};
}

std::vector<int> parse_int_list(const std::string& spec, const char* flag) {
  std::vector<int> out;
  std::size_t begin = 0;
  while (begin <= spec.size()) {
    std::size_t comma = spec.find(',', begin);
    std::string tok = spec.substr(begin, comma == std::string::npos ? std::string::npos
                                                                    : comma - begin);
    if (!tok.empty()) out.push_back(std::stoi(tok));
    if (comma == std::string::npos) break;
    begin = comma + 1;
  }
  if (out.empty())
    throw CLI::ValidationError(flag, "no values in '" + spec + "'");
  return out;
}

std::vector<int> parse_ks(const std::string& spec) {
  std::vector<int> ks = parse_int_list(spec, "--ks");
  for (int k : ks)
    if (k < 1) throw CLI::ValidationError("--ks", "k must be >= 1");
  return ks;
}

s3m::BucketAggregate parse_agg(const std::string& name) {
  if (name == "max") return s3m::BucketAggregate::Max;
  if (name == "mean") return s3m::BucketAggregate::Mean;
  throw CLI::ValidationError("--agg", "expected 'max' or 'mean', got '" + name + "'");
}

// epoch seconds, or a UTC date "YYYY-MM-DD" / "YYYY-MM-DD HH:MM:SS" /
// "YYYY-MM-DDTHH:MM:SS"
std::int64_t parse_timestamp(const std::string& text) {
  if (text.find_first_not_of("0123456789-") == std::string::npos &&
      text.find('-') == std::string::npos)
    return std::stoll(text);
  std::tm tm{};
  int y, mo, d, h = 0, mi = 0, s = 0;
  char sep = 0;
  int n = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &s);
  if (n != 3 && n != 7)
    throw std::runtime_error("unparseable timestamp: '" + text + "'");
  tm.tm_year = y - 1900;
  tm.tm_mon = mo - 1;
  tm.tm_mday = d;
  tm.tm_hour = h;
  tm.tm_min = mi;
  tm.tm_sec = s;
  std::time_t t = timegm(&tm);
  if (t == -1) throw std::runtime_error("timestamp out of range: '" + text + "'");
  return static_cast<std::int64_t>(t);
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareArgs {
  std::string data, out_dir, start = "auto", reference;
  int train_days = 0, val_days = 0, test_days = 0;
};

int run_prepare(const PrepareArgs& a) {
  s3m::ParseStats stats;
  s3m::Dataset ds = s3m::parse_dataset(a.data, s3m::DatasetFormat::Jsonl, &stats);
  warn_stats("input", stats);

  std::int64_t start = a.start == "auto" ? ds.traces.front().timestamp
                                         : parse_timestamp(a.start);
  s3m::Split split = s3m::time_split(ds, a.train_days, a.val_days, a.test_days, start);

  std::filesystem::create_directories(a.out_dir);
  namespace fs = std::filesystem;
  s3m::write_dataset(split.train, (fs::path(a.out_dir) / "train.jsonl").string());
  if (!split.validation.empty())
    s3m::write_dataset(split.validation,
                       (fs::path(a.out_dir) / "validation.jsonl").string());
  s3m::write_dataset(split.test, (fs::path(a.out_dir) / "test.jsonl").string());

  auto part = [](const s3m::Dataset& d) {
    double avg = d.buckets.empty()
                     ? 0.0
                     : static_cast<double>(d.size()) /
                           static_cast<double>(d.buckets.size());
    return json{{"reports", d.size()}, {"buckets", d.buckets.size()},
                {"avg_bucket_size", avg}};
  };
  json summary{{"train", part(split.train)},
               {"validation", part(split.validation)},
               {"test", part(split.test)},
               {"dropped", split.dropped},
               {"start", start},
               {"validation_boundary", split.validation_boundary},
               {"test_boundary", split.test_boundary},
               {"window_end", split.window_end},
               {"out_dir", a.out_dir}};

  if (!a.reference.empty()) {
    std::ifstream in(a.reference);
    if (!in) throw std::runtime_error("cannot open reference summary: " + a.reference);
    json ref = json::parse(in);
    std::fprintf(stderr, "deltas against %s:\n", a.reference.c_str());
    for (const char* key : {"train", "validation", "test"}) {
      if (!ref.contains(key)) continue;
      for (const char* field : {"reports", "buckets"}) {
        if (!ref[key].contains(field)) continue;
        std::int64_t got = summary[key][field].get<std::int64_t>();
        std::int64_t want = ref[key][field].get<std::int64_t>();
        std::fprintf(stderr, "  %s.%s: %" PRId64 " (reference %" PRId64 ", delta %+" PRId64 ")\n",
                     key, field, got, want, got - want);
      }
    }
  }

  std::ofstream sum_out((fs::path(a.out_dir) / "summary.json").string());
  sum_out << summary.dump(2) << '\n';
  std::printf("%s\n", summary.dump().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data, out_model, history, init_from;
  s3m::TrainConfig tc;
  std::size_t embed_dim = 50, hidden_dim = 100, classifier_hidden = 200;
};

int run_train(const TrainArgs& a) {
  LoadedSplit loaded = load_split_dir(a.data);
  warn_stats("train", loaded.train_stats);
  warn_stats("validation", loaded.val_stats);
  warn_stats("test", loaded.test_stats);
  s3m::Split& split = loaded.split;

  auto on_epoch = [](const s3m::EpochStats& e) {
    std::fprintf(stderr, "epoch %3d  mean_loss %.6f  val_mrr %.6f\n", e.epoch,
                 e.mean_loss, e.val_mrr);
  };

  s3m::ModelBundle bundle;
  s3m::TrainResult result;
  if (!a.init_from.empty()) {
    bundle = s3m::load_bundle(a.init_from);
    std::fprintf(stderr, "resuming from %s (optimizer state starts fresh)\n",
                 a.init_from.c_str());
    result = s3m::resume_train(bundle, split, a.tc, on_epoch);
  } else {
    s3m::Vocabulary vocab = s3m::build_vocab(split.train, a.tc.trim_level);
    s3m::ModelConfig mc;
    mc.embed_dim = a.embed_dim;
    mc.hidden_dim = a.hidden_dim;
    mc.classifier_hidden = a.classifier_hidden;
    mc.vocab_size = vocab.size();
    mc.seed = a.tc.seed;
    bundle.model = s3m::S3MModel::init(mc);
    bundle.vocab = std::move(vocab);
    bundle.max_len = a.tc.max_len;
    std::fprintf(stderr, "vocabulary: %zu ids at trim level %d; %zu parameters\n",
                 bundle.vocab.size(), a.tc.trim_level,
                 bundle.model.params.total_size());
    result = s3m::train(bundle.model, bundle.vocab, split, a.tc, on_epoch);
  }

  s3m::save_bundle(bundle, a.out_model);

  if (!a.history.empty()) {
    json hist = json::array();
    for (const s3m::EpochStats& e : result.history)
      hist.push_back({{"epoch", e.epoch},
                      {"mean_loss", e.mean_loss},
                      {"val_mrr", e.val_mrr}});
    json doc{{"epochs", hist}, {"first_epoch_losses", result.first_epoch_losses}};
    std::ofstream out(a.history);
    if (!out) throw std::runtime_error("cannot write history file: " + a.history);
    out << doc.dump(2) << '\n';
  }

  json summary{{"out_model", a.out_model},
               {"groups", result.group_count},
               {"epochs", result.history.size()},
               {"best_epoch", result.best_epoch},
               {"best_val_mrr", result.best_val_mrr},
               {"final_mean_loss",
                result.history.empty() ? 0.0 : result.history.back().mean_loss},
               {"params", bundle.model.params.total_size()},
               {"vocab_size", bundle.vocab.size()}};
  std::printf("%s\n", summary.dump().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval / baseline / sweep-trim

struct EvalArgs {
  std::string model, data, ks = "1,5,10", agg = "max", csv;
};

void write_csv(const std::string& path, const std::vector<s3m::RankedResult>& results) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write csv file: " + path);
  out << "query_report_id,rank_of_truth,top_bucket,top_score\n";
  for (const s3m::RankedResult& r : results) {
    out << r.query_report_id << ',';
    if (r.rank_of_truth) out << *r.rank_of_truth;
    out << ',';
    if (!r.ranking.empty()) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%" PRId64 ",%.9g", r.ranking[0].first,
                    r.ranking[0].second);
      out << buf;
    } else {
      out << ',';
    }
    out << '\n';
  }
}

int run_eval(const EvalArgs& a) {
  LoadedSplit loaded = load_split_dir(a.data);
  s3m::Split& split = loaded.split;
  auto bundle = std::make_shared<s3m::ModelBundle>(s3m::load_bundle(a.model));
  std::fprintf(stderr,
               "model: trim level %d, max_len %zu, vocab %zu, %zu parameters\n",
               bundle->trim_level(), bundle->max_len, bundle->vocab.size(),
               bundle->model.params.total_size());

  s3m::EvalOptions opts;
  opts.ks = parse_ks(a.ks);
  opts.aggregate = parse_agg(a.agg);
  std::vector<s3m::RankedResult> per_query;
  s3m::MetricsReport rep =
      s3m::evaluate(s3m::model_measure(bundle), split, opts, &per_query);
  if (!a.csv.empty()) write_csv(a.csv, per_query);

  json out = metrics_json(rep);
  out["measure"] = "s3m";
  out["model"] = a.model;
  std::printf("%s\n", out.dump().c_str());
  return 0;
}

struct BaselineArgs {
  std::string method, data, ks = "1,5,10", agg = "max", csv;
  int trim = 0;
};

s3m::SimilarityMeasure make_baseline(const std::string& method, int trim,
                                     const s3m::Split& split) {
  if (method == "prefix") return s3m::prefix_measure(trim);
  if (method == "tfidf") {
    auto hist = s3m::trace_ptrs({&split.train, &split.validation});
    std::vector<s3m::StackTrace> docs;
    docs.reserve(hist.size());
    for (const s3m::StackTrace* t : hist) docs.push_back(*t);
    return s3m::tfidf_measure(std::make_shared<s3m::TfidfIndex>(docs, trim));
  }
  throw CLI::ValidationError("--method", "expected 'prefix' or 'tfidf', got '" +
                                             method + "'");
}

int run_baseline(const BaselineArgs& a) {
  LoadedSplit loaded = load_split_dir(a.data);
  s3m::Split& split = loaded.split;
  s3m::EvalOptions opts;
  opts.ks = parse_ks(a.ks);
  opts.aggregate = parse_agg(a.agg);
  s3m::SimilarityMeasure measure = make_baseline(a.method, a.trim, split);
  std::vector<s3m::RankedResult> per_query;
  s3m::MetricsReport rep = s3m::evaluate(measure, split, opts, &per_query);
  if (!a.csv.empty()) write_csv(a.csv, per_query);

  json out = metrics_json(rep);
  out["measure"] = a.method;
  out["trim_level"] = a.trim;
  std::printf("%s\n", out.dump().c_str());
  return 0;
}

struct SweepArgs {
  std::string method = "tfidf", data, ks = "1,5,10", agg = "max", levels = "0,1,2,3";
};

int run_sweep(const SweepArgs& a) {
  LoadedSplit loaded = load_split_dir(a.data);
  s3m::Split& split = loaded.split;
  s3m::EvalOptions opts;
  opts.ks = parse_ks(a.ks);
  opts.aggregate = parse_agg(a.agg);

  std::vector<int> levels = parse_int_list(a.levels, "--levels");
  std::sort(levels.begin(), levels.end());
  json rows = json::array();
  std::fprintf(stderr, "%-6s %-10s %s\n", "trim", "mrr", "rr@k");
  for (int level : levels) {
    if (level < s3m::kMinTrimLevel || level > s3m::kMaxTrimLevel)
      throw CLI::ValidationError("--levels", "trim level out of range: " +
                                                 std::to_string(level));
    s3m::SimilarityMeasure measure = make_baseline(a.method, level, split);
    s3m::MetricsReport rep = s3m::evaluate(measure, split, opts);
    json row = metrics_json(rep);
    row["trim_level"] = level;
    rows.push_back(row);
    std::string rr;
    for (const auto& [k, v] : rep.rr_at) {
      char buf[48];
      std::snprintf(buf, sizeof(buf), "rr@%d=%.4f ", k, v);
      rr += buf;
    }
    std::fprintf(stderr, "%-6d %-10.6f %s\n", level, rep.mrr, rr.c_str());
  }
  json out{{"measure", a.method}, {"levels", rows}};
  std::printf("%s\n", out.dump().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradArgs {
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
  int trials = 3;
  std::size_t embed_dim = 6, hidden_dim = 5, classifier_hidden = 8;
};

int run_gradcheck(const GradArgs& a) {
  double worst = 0.0;
  bool all_finite = true;
  json trials = json::array();
  for (int trial = 0; trial < a.trials; ++trial) {
    std::uint64_t seed = a.seed + static_cast<std::uint64_t>(trial);
    s3m::ModelConfig mc;
    mc.embed_dim = a.embed_dim;
    mc.hidden_dim = a.hidden_dim;
    mc.classifier_hidden = a.classifier_hidden;
    mc.vocab_size = 14;
    mc.seed = seed;
    s3m::S3MModel model = s3m::S3MModel::init(mc);

    s3m::Rng rng(seed * 31 + 7);
    auto random_ids = [&] {
      std::vector<std::int32_t> ids(1 + rng.next_index(5));
      for (auto& id : ids) id = static_cast<std::int32_t>(rng.next_index(14));
      return ids;
    };
    std::vector<std::int32_t> q = random_ids(), pos = random_ids();
    std::vector<std::vector<std::int32_t>> negs{random_ids(), random_ids()};

    auto build = [&](s3m::Tape& t) {
      s3m::ModelGraph g(t, model);
      s3m::Tape::Node qe = g.encode_trace(q);
      s3m::Tape::Node s_pos = g.score_encodings(qe, g.encode_trace(pos));
      std::vector<s3m::Tape::Node> s_negs;
      for (const auto& n : negs)
        s_negs.push_back(g.score_encodings(qe, g.encode_trace(n)));
      return s3m::ranknet_loss_node(t, s_pos, s_negs);
    };
    s3m::GradCheckReport rep = s3m::gradcheck(model.params, build);
    worst = std::max(worst, rep.max_rel_error);
    all_finite = all_finite && rep.finite;
    trials.push_back({{"seed", seed},
                      {"max_rel_error", rep.max_rel_error},
                      {"coords", rep.coords_checked},
                      {"finite", rep.finite},
                      {"worst_param", rep.worst_param}});
    std::fprintf(stderr, "seed %" PRIu64 ": max rel error %.3e over %zu coords (%s)\n",
                 seed, rep.max_rel_error, rep.coords_checked,
                 rep.finite ? "finite" : rep.failure_note.c_str());
  }
  bool pass = all_finite && worst < a.tolerance;
  json out{{"pass", pass},
           {"max_rel_error", worst},
           {"tolerance", a.tolerance},
           {"trials", trials}};
  std::printf("%s\n", out.dump().c_str());
  return pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// convert: ingest third-party bug-tracker exports

json parse_any_json(const std::string& path, bool& was_jsonl) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open input: " + path);
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  json doc = json::parse(content, nullptr, false);
  if (!doc.is_discarded()) {
    was_jsonl = false;
    return doc;
  }
  // fall back to one JSON object per line
  was_jsonl = true;
  json arr = json::array();
  std::size_t begin = 0;
  while (begin < content.size()) {
    std::size_t end = content.find('\n', begin);
    if (end == std::string::npos) end = content.size();
    std::string line = content.substr(begin, end - begin);
    begin = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    arr.push_back(j.is_discarded() ? json() : j);
  }
  return arr;
}

const json* first_key(const json& j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    auto it = j.find(k);
    if (it != j.end() && !it->is_null()) return &*it;
  }
  return nullptr;
}

bool extract_frames(const json& v, std::vector<std::string>& out) {
  if (v.is_array()) {
    for (const json& e : v) {
      if (e.is_string()) {
        out.push_back(e.get<std::string>());
      } else if (e.is_object()) {
        const json* f = first_key(e, {"function", "method", "frame", "name"});
        if (!f || !f->is_string()) return false;
        out.push_back(f->get<std::string>());
      } else {
        return false;
      }
    }
    return !out.empty();
  }
  if (v.is_string()) {  // newline-separated block
    std::string s = v.get<std::string>();
    std::size_t begin = 0;
    while (begin < s.size()) {
      std::size_t end = s.find('\n', begin);
      if (end == std::string::npos) end = s.size();
      std::string line = s.substr(begin, end - begin);
      begin = end + 1;
      std::size_t a = line.find_first_not_of(" \t\r");
      if (a == std::string::npos) continue;
      std::size_t b = line.find_last_not_of(" \t\r");
      out.push_back(line.substr(a, b - a + 1));
    }
    return !out.empty();
  }
  return false;
}

struct ConvertArgs {
  std::string input, output;
};

int run_convert(const ConvertArgs& a) {
  bool was_jsonl = false;
  json doc = parse_any_json(a.input, was_jsonl);
  if (doc.is_object() && doc.contains("reports")) doc = doc["reports"];
  if (!doc.is_array())
    throw std::runtime_error("input is neither a JSON array, a {\"reports\":[...]} "
                             "object, nor JSON lines: " + a.input);

  std::ofstream out(a.output);
  if (!out) throw std::runtime_error("cannot write output: " + a.output);

  std::size_t total = 0, converted = 0, skipped = 0;
  for (const json& rec : doc) {
    total += 1;
    if (!rec.is_object()) {
      skipped += 1;
      continue;
    }
    const json* id = first_key(rec, {"bug_id", "report_id", "id"});
    const json* ts = first_key(rec, {"creation_ts", "timestamp", "ts", "created"});
    const json* st = first_key(rec, {"stacktrace", "frames", "stack", "trace"});
    if (!id || !ts || !st || !id->is_number_integer()) {
      skipped += 1;
      continue;
    }

    std::int64_t timestamp;
    try {
      timestamp = ts->is_number_integer() ? ts->get<std::int64_t>()
                                          : parse_timestamp(ts->get<std::string>());
    } catch (const std::exception&) {
      skipped += 1;
      continue;
    }

    std::vector<std::string> frames;
    if (!extract_frames(*st, frames) || timestamp < 0) {
      skipped += 1;
      continue;
    }

    // duplicate link: a report with dup_id belongs to its target's bucket,
    // otherwise it opens its own
    std::int64_t bucket = id->get<std::int64_t>();
    const json* dup = first_key(rec, {"dup_id", "duplicate_of", "bucket_id"});
    if (dup && dup->is_number_integer()) bucket = dup->get<std::int64_t>();

    json line{{"report_id", id->get<std::int64_t>()},
              {"bucket_id", bucket},
              {"timestamp", timestamp},
              {"frames", frames}};
    out << line.dump() << '\n';
    converted += 1;
  }
  if (converted == 0) throw std::runtime_error("no convertible records in " + a.input);

  json summary{{"input", a.input},
               {"output", a.output},
               {"records", total},
               {"converted", converted},
               {"skipped", skipped},
               {"input_shape", was_jsonl ? "jsonl" : "json"}};
  std::fprintf(stderr, "converted %zu of %zu records (%zu skipped)\n", converted,
               total, skipped);
  std::printf("%s\n", summary.dump().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stack-trace similarity for crash-report deduplication"};
  app.require_subcommand(1);
  std::string config_path;

  PrepareArgs prep;
  CLI::App* prepare = app.add_subcommand(
      "prepare", "split a jsonl dataset into train/validation/test windows");
  prepare->add_option("--data", prep.data, "input jsonl dataset")->required();
  prepare->add_option("--out-dir", prep.out_dir, "output directory")->required();
  prepare->add_option("--train-days", prep.train_days, "train window length")
      ->required();
  prepare->add_option("--val-days", prep.val_days, "validation window length")
      ->required();
  prepare->add_option("--test-days", prep.test_days, "test window length")->required();
  prepare->add_option("--start", prep.start,
                      "window start: epoch seconds, UTC date, or 'auto' "
                      "(first report)");
  prepare->add_option("--reference", prep.reference,
                      "summary JSON to diff the split against (diagnostics only)");

  TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "train a similarity model");
  train->add_option("--data", tr.data, "directory from `prepare`")->required();
  train->add_option("--out-model", tr.out_model, "bundle file to write")->required();
  train->add_option("--trim", tr.tc.trim_level, "frame trim level (0-3)")
      ->check(CLI::Range(0, 3));
  train->add_option("--epochs", tr.tc.epochs, "training epochs")
      ->check(CLI::PositiveNumber);
  train->add_option("--lr", tr.tc.lr, "Adam learning rate");
  train->add_option("--seed", tr.tc.seed, "RNG seed")->envname("S3M_SEED");
  train->add_option("--max-len", tr.tc.max_len, "frames kept per trace");
  train->add_option("--negatives", tr.tc.negatives_k, "negatives per query");
  train->add_option("--pool", tr.tc.candidate_pool,
                    "candidate buckets for hard negatives");
  train->add_option("--clip", tr.tc.grad_clip, "global gradient norm cap (0 = off)");
  train->add_option("--embed-dim", tr.embed_dim, "token embedding width");
  train->add_option("--hidden-dim", tr.hidden_dim, "LSTM hidden width");
  train->add_option("--classifier-hidden", tr.classifier_hidden,
                    "classifier hidden width");
  train->add_option("--history", tr.history, "write per-epoch stats JSON here");
  train->add_option("--init-from", tr.init_from,
                    "existing bundle to continue training (fresh optimizer)");

  EvalArgs ev;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a trained model");
  eval->add_option("--model", ev.model, "bundle from `train`")->required();
  eval->add_option("--data", ev.data, "directory from `prepare`")->required();
  eval->add_option("--ks", ev.ks, "recall cutoffs, comma separated");
  eval->add_option("--agg", ev.agg, "bucket score aggregation: max or mean");
  eval->add_option("--csv", ev.csv, "write per-query ranks here");

  BaselineArgs bl;
  CLI::App* baseline = app.add_subcommand("baseline", "evaluate a non-learned measure");
  baseline->add_option("--method", bl.method, "prefix or tfidf")->required();
  baseline->add_option("--data", bl.data, "directory from `prepare`")->required();
  baseline->add_option("--trim", bl.trim, "frame trim level (0-3)")
      ->check(CLI::Range(0, 3));
  baseline->add_option("--ks", bl.ks, "recall cutoffs, comma separated");
  baseline->add_option("--agg", bl.agg, "bucket score aggregation: max or mean");
  baseline->add_option("--csv", bl.csv, "write per-query ranks here");

  SweepArgs sw;
  CLI::App* sweep = app.add_subcommand("sweep-trim",
                                       "run a baseline across trim levels");
  sweep->add_option("--method", sw.method, "prefix or tfidf");
  sweep->add_option("--data", sw.data, "directory from `prepare`")->required();
  sweep->add_option("--levels", sw.levels, "trim levels, comma separated");
  sweep->add_option("--ks", sw.ks, "recall cutoffs, comma separated");
  sweep->add_option("--agg", sw.agg, "bucket score aggregation: max or mean");

  GradArgs gc;
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "compare analytic gradients against finite differences");
  gradcheck->add_option("--seed", gc.seed, "first trial seed")->envname("S3M_SEED");
  gradcheck->add_option("--tolerance", gc.tolerance, "max relative error allowed");
  gradcheck->add_option("--trials", gc.trials, "number of seeds to run")
      ->check(CLI::PositiveNumber);
  gradcheck->add_option("--embed-dim", gc.embed_dim, "token embedding width");
  gradcheck->add_option("--hidden-dim", gc.hidden_dim, "LSTM hidden width");
  gradcheck->add_option("--classifier-hidden", gc.classifier_hidden,
                        "classifier hidden width");

  ConvertArgs cv;
  CLI::App* convert = app.add_subcommand(
      "convert", "convert a bug-tracker JSON export to the jsonl dataset format");
  convert->add_option("--input", cv.input, "JSON or jsonl export")->required();
  convert->add_option("--output", cv.output, "jsonl dataset to write")->required();

  for (CLI::App* sub : {prepare, train, eval, baseline, sweep, gradcheck, convert})
    sub->add_option("--config", config_path,
                    "JSON file with option defaults (command-line flags win)");

  try {
    app.parse(argc, argv);
    CLI::App* active = app.get_subcommands().front();
    if (!config_path.empty()) apply_config(active, load_config_file(config_path));
    echo_config(active);

    if (active == prepare) return run_prepare(prep);
    if (active == train) return run_train(tr);
    if (active == eval) return run_eval(ev);
    if (active == baseline) return run_baseline(bl);
    if (active == sweep) return run_sweep(sw);
    if (active == gradcheck) return run_gradcheck(gc);
    if (active == convert) return run_convert(cv);
    return 1;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
