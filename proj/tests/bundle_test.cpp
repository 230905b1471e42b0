#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "s3m/bundle.hpp"
#include "testutil.hpp"

using namespace s3m;

namespace {

ModelBundle make_bundle(std::uint64_t seed) {
  ModelConfig mc;
  mc.embed_dim = 5;
  mc.hidden_dim = 3;
  mc.classifier_hidden = 4;
  mc.seed = seed;

  Dataset ds = testutil::toy_dataset();
  Vocabulary vocab = build_vocab(ds, 1);
  mc.vocab_size = vocab.size();

  ModelBundle b;
  b.model = S3MModel::init(mc);
  b.vocab = vocab;
  b.max_len = 42;
  return b;
}

}  // namespace

TEST_CASE("bundle round-trips bit-exactly") {
  ModelBundle b = make_bundle(19);
  testutil::TempDir dir;
  std::string path = dir.file("model.s3m");
  save_bundle(b, path);
  ModelBundle back = load_bundle(path);

  CHECK(back.model.config == b.model.config);
  CHECK(back.vocab == b.vocab);
  CHECK(back.max_len == 42);
  CHECK(back.trim_level() == 1);
  REQUIRE(back.model.params.names() == b.model.params.names());
  for (std::size_t p = 0; p < b.model.params.count(); ++p)
    REQUIRE(back.model.params.at(p).values == b.model.params.at(p).values);

  // and the loaded model scores identically
  std::vector<std::int32_t> q1{2, 4, 3}, q2{5, 2};
  CHECK(b.model.score_pair(q1, q2) == back.model.score_pair(q1, q2));
}

TEST_CASE("serialization is deterministic") {
  CHECK(serialize_bundle(make_bundle(23)) == serialize_bundle(make_bundle(23)));
}

TEST_CASE("non-finite and denormal values survive the round trip") {
  ModelBundle b = make_bundle(29);
  auto& vals = b.model.params.get("cls.b1").values;
  vals[0] = 5e-324;          // smallest denormal
  vals[1] = -0.0;
  vals[2] = 1.7976931348623157e308;
  std::string bytes = serialize_bundle(b);
  ModelBundle back = deserialize_bundle(bytes);
  auto& got = back.model.params.get("cls.b1").values;
  CHECK(got[0] == 5e-324);
  CHECK(std::signbit(got[1]));
  CHECK(got[2] == 1.7976931348623157e308);
}

TEST_CASE("a truncated bundle fails the checksum") {
  std::string bytes = serialize_bundle(make_bundle(31));
  for (std::size_t cut : {bytes.size() - 1, bytes.size() - 9, bytes.size() / 2}) {
    std::string maimed = bytes.substr(0, cut);
    CHECK_THROWS_WITH(deserialize_bundle(maimed),
                      Catch::Matchers::ContainsSubstring("checksum") ||
                          Catch::Matchers::ContainsSubstring("magic"));
  }
}

TEST_CASE("a corrupted byte fails the checksum") {
  std::string bytes = serialize_bundle(make_bundle(37));
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  CHECK_THROWS_WITH(deserialize_bundle(flipped),
                    Catch::Matchers::ContainsSubstring("checksum"));
}

TEST_CASE("bad magic is reported as such") {
  std::string bytes = serialize_bundle(make_bundle(41));
  bytes[0] = 'X';
  CHECK_THROWS_WITH(deserialize_bundle(bytes),
                    Catch::Matchers::ContainsSubstring("magic"));
  CHECK_THROWS_WITH(deserialize_bundle("tiny"),
                    Catch::Matchers::ContainsSubstring("magic"));
}

TEST_CASE("missing files are reported with the path") {
  CHECK_THROWS_WITH(load_bundle("/nonexistent/dir/model.s3m"),
                    Catch::Matchers::ContainsSubstring("/nonexistent/dir/model.s3m"));
}

TEST_CASE("the error message names the originating file") {
  testutil::TempDir dir;
  std::string path = dir.file("broken.s3m");
  std::string bytes = serialize_bundle(make_bundle(43));
  bytes[bytes.size() / 2] ^= 0x01;
  testutil::write_file(path, bytes);
  CHECK_THROWS_WITH(load_bundle(path),
                    Catch::Matchers::ContainsSubstring("broken.s3m"));
}
