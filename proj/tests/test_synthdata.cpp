// Synthetic corpus generation, the ASR corruption channel, spec files, and
// corpus serialization.

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mfaec/align.hpp"
#include "mfaec/kvfile.hpp"
#include "mfaec/metrics.hpp"
#include "mfaec/synthdata.hpp"
#include "test_util.hpp"

using namespace mfaec;
using mfaec::testutil::TempDir;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---- key-value files ----

TEST_CASE("kvfile parses comments, blanks, and typed lookups") {
  KvFile kv = KvFile::parse("# comment\n"
                            "name = hello world \n"
                            "\n"
                            "count=42\n"
                            "rate = 0.25\n"
                            "flag = true\n",
                            "testdoc");
  CHECK(kv.get_string("name") == "hello world");
  CHECK(kv.get_int("count") == 42);
  CHECK(kv.get_double("rate") == 0.25);
  CHECK(kv.get_bool("flag"));
  CHECK(kv.get_int("missing", 9) == 9);
  CHECK_THROWS_WITH_AS(kv.get_int("missing"), doctest::Contains("missing"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(kv.get_int("name"), doctest::Contains("testdoc"),
                       std::runtime_error);
}

TEST_CASE("kvfile round-trips doubles exactly") {
  KvFile kv;
  kv.set_double("x", 0.1);
  kv.set_double("y", -3.141592653589793);
  KvFile back = KvFile::parse(kv.to_string(), "mem");
  CHECK(back.get_double("x") == 0.1);
  CHECK(back.get_double("y") == -3.141592653589793);
}

TEST_CASE("corpus and corruption specs round-trip through kv") {
  CorpusSpec spec;
  spec.alpha = 0.625;
  spec.noise_sigma = 0.05;
  spec.seed = 99;
  CorpusSpec back = CorpusSpec::from_kv(spec.to_kv());
  CHECK(back.alpha == spec.alpha);
  CHECK(back.noise_sigma == spec.noise_sigma);
  CHECK(back.seed == spec.seed);

  CorruptionSpec corr;
  corr.p_sub = 0.125;
  CorruptionSpec cback = CorruptionSpec::from_kv(corr.to_kv());
  CHECK(cback.p_sub == 0.125);
}

TEST_CASE("spec validation rejects bad values") {
  CorpusSpec spec;
  spec.alpha = 1.5;
  CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("alpha"),
                       std::runtime_error);
  spec = CorpusSpec{};
  spec.len_min = 5;
  spec.len_max = 4;
  CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("length"),
                       std::runtime_error);
  spec = CorpusSpec{};
  spec.vocab_size = Vocab::kNumReserved + spec.n_emotions * spec.keywords_per_emotion;
  CHECK_THROWS(spec.validate());  // no background ids left

  CorruptionSpec corr;
  corr.p_sub = 0.7;
  corr.p_del = 0.5;
  CHECK_THROWS_WITH_AS(corr.validate(), doctest::Contains("p_sub + p_del"),
                       std::runtime_error);
}

// ---- generation ----

TEST_CASE("gen_corpus is deterministic and respects the frame contract") {
  CorpusSpec spec;
  spec.seed = 13;
  auto a = gen_corpus(spec, 50);
  auto b = gen_corpus(spec, 50);
  REQUIRE(a.size() == 50);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].emotion == b[i].emotion);
    CHECK(a[i].transcript == b[i].transcript);
    CHECK(a[i].frames == b[i].frames);  // bitwise
    CHECK(a[i].m == static_cast<int>(a[i].transcript.size()) * spec.frames_per_token);
    CHECK(a[i].frames.size() == static_cast<size_t>(a[i].m) * spec.frame_dim);
    CHECK(a[i].asr == a[i].transcript);  // corruption not applied yet
    const int len = static_cast<int>(a[i].transcript.size());
    CHECK(len >= spec.len_min);
    CHECK(len <= spec.len_max);
    for (int tok : a[i].transcript) {
      CHECK(tok >= Vocab::kNumReserved);
      CHECK(tok < spec.vocab_size);
    }
  }
}

TEST_CASE("a prefix of a longer generation matches a shorter one") {
  CorpusSpec spec;
  spec.seed = 21;
  auto small = gen_corpus(spec, 10);
  auto large = gen_corpus(spec, 25);
  for (size_t i = 0; i < small.size(); ++i) {
    CHECK(small[i].transcript == large[i].transcript);
    CHECK(small[i].frames == large[i].frames);
  }
}

TEST_CASE("alpha=1 with disjoint supports separates emotions lexically") {
  CorpusSpec spec;
  spec.alpha = 1.0;
  spec.noise_sigma = 0.0;
  spec.seed = 5;
  auto corpus = gen_corpus(spec, 400);
  std::vector<std::set<int>> support(static_cast<size_t>(spec.n_emotions));
  for (const auto& ex : corpus)
    for (int tok : ex.transcript) support[static_cast<size_t>(ex.emotion)].insert(tok);
  for (int i = 0; i < spec.n_emotions; ++i)
    for (int j = i + 1; j < spec.n_emotions; ++j)
      for (int tok : support[static_cast<size_t>(i)])
        CHECK(support[static_cast<size_t>(j)].count(tok) == 0);

  // And the keyword block bounds hold.
  for (const auto& ex : corpus)
    for (int tok : ex.transcript) {
      CHECK(tok >= spec.keyword_begin(ex.emotion));
      CHECK(tok < spec.keyword_begin(ex.emotion) + spec.keywords_per_emotion);
    }
}

TEST_CASE("alpha=1 sigma=0 frames equal prototype plus emotion offset") {
  CorpusSpec spec;
  spec.alpha = 1.0;
  spec.noise_sigma = 0.0;
  spec.seed = 3;
  auto protos = token_prototypes(spec);
  auto offs = emotion_offsets(spec);
  auto corpus = gen_corpus(spec, 20);
  for (const auto& ex : corpus) {
    for (size_t p = 0; p < ex.transcript.size(); ++p)
      for (int r = 0; r < spec.frames_per_token; ++r)
        for (int f = 0; f < spec.frame_dim; ++f) {
          const double got =
              ex.frames[(p * spec.frames_per_token + r) * spec.frame_dim + f];
          const double want =
              protos[static_cast<size_t>(ex.transcript[p]) * spec.frame_dim + f] +
              offs[static_cast<size_t>(ex.emotion) * spec.frame_dim + f];
          CHECK(got == want);
        }
  }
}

TEST_CASE("class balance over 4000 utterances is within 5% of uniform") {
  CorpusSpec spec;
  spec.seed = 7;
  auto corpus = gen_corpus(spec, 4000);
  std::vector<int> counts(static_cast<size_t>(spec.n_emotions), 0);
  for (const auto& ex : corpus) counts[static_cast<size_t>(ex.emotion)]++;
  for (int c : counts) {
    CHECK(c > 1000 * 0.95);
    CHECK(c < 1000 * 1.05);
  }
}

TEST_CASE("unigram keyword counting reaches UAR 1.0 on the separable dial") {
  CorpusSpec spec;
  spec.alpha = 1.0;
  spec.noise_sigma = 0.0;
  spec.seed = 17;
  auto corpus = gen_corpus(spec, 500);
  std::vector<int64_t> confusion(
      static_cast<size_t>(spec.n_emotions) * spec.n_emotions, 0);
  for (const auto& ex : corpus) {
    std::vector<double> votes(static_cast<size_t>(spec.n_emotions), 0.0);
    for (int tok : ex.transcript)
      for (int e = 0; e < spec.n_emotions; ++e)
        if (tok >= spec.keyword_begin(e) &&
            tok < spec.keyword_begin(e) + spec.keywords_per_emotion)
          votes[static_cast<size_t>(e)] += 1.0;
    int pred = argmax_lowest(votes.data(), spec.n_emotions);
    confusion[static_cast<size_t>(ex.emotion) * spec.n_emotions + pred]++;
  }
  CHECK(uar_from_confusion(confusion, spec.n_emotions) == 1.0);
}

// ---- corruption ----

TEST_CASE("zero-rate corruption is the identity") {
  CorruptionSpec corr;
  corr.p_sub = corr.p_del = corr.p_ins = 0.0;
  TokenSequence t = {4, 9, 30, 12};
  CHECK(corrupt(t, corr, 64, 0) == t);
}

TEST_CASE("p_del=1 with no insertions empties the sequence") {
  CorruptionSpec corr;
  corr.p_sub = 0.0;
  corr.p_del = 1.0;
  corr.p_ins = 0.0;
  CHECK(corrupt({4, 5, 6}, corr, 64, 3).empty());
}

TEST_CASE("corruption is deterministic per (seed, utterance id)") {
  CorruptionSpec corr;
  TokenSequence t = {4, 9, 30, 12, 8, 21};
  CHECK(corrupt(t, corr, 64, 5) == corrupt(t, corr, 64, 5));
  // Different utterance ids draw from different streams.
  bool any_diff = false;
  for (int64_t id = 0; id < 20 && !any_diff; ++id)
    any_diff = corrupt(t, corr, 64, id) != corrupt(t, corr, 64, id + 100);
  CHECK(any_diff);
}

TEST_CASE("substitutions never reproduce the original token") {
  CorruptionSpec corr;
  corr.p_sub = 1.0;
  corr.p_del = 0.0;
  corr.p_ins = 0.0;
  TokenSequence t(30, 10);
  for (int64_t id = 0; id < 50; ++id) {
    TokenSequence out = corrupt(t, corr, 64, id);
    REQUIRE(out.size() == t.size());
    for (size_t i = 0; i < out.size(); ++i) {
      CHECK(out[i] != 10);
      CHECK(out[i] >= Vocab::kNumReserved);
      CHECK(out[i] < 64);
    }
  }
}

TEST_CASE("corrupt rejects empty transcripts") {
  CorruptionSpec corr;
  CHECK_THROWS_WITH_AS(corrupt({}, corr, 64, 0), doctest::Contains("empty"),
                       std::runtime_error);
}

TEST_CASE("mean WER at (0.1, 0.05, 0.05) matches the analytic rate within 0.02") {
  // Each original token independently contributes one expected edit with
  // probability p_sub + p_del, and one inserted token follows each position
  // with probability p_ins, so the expected edit count per reference token
  // is close to p_sub + p_del + p_ins = 0.2 (adjacent edits can merge,
  // which only lowers the measured distance slightly).
  CorpusSpec spec;
  spec.seed = 7;
  CorruptionSpec corr;
  corr.p_sub = 0.1;
  corr.p_del = 0.05;
  corr.p_ins = 0.05;
  corr.seed = 7;
  auto corpus = gen_corpus(spec, 1000);
  corrupt_corpus(corpus, corr, spec.vocab_size);
  double sum = 0.0;
  for (const auto& ex : corpus) sum += wer(ex.asr, ex.transcript);
  const double mean = sum / static_cast<double>(corpus.size());
  CHECK(mean > 0.2 - 0.02);
  CHECK(mean < 0.2 + 0.02);
}

TEST_CASE("corruption changes only the asr field") {
  CorpusSpec spec;
  spec.seed = 23;
  auto corpus = gen_corpus(spec, 30);
  auto pristine = gen_corpus(spec, 30);
  CorruptionSpec corr;
  corrupt_corpus(corpus, corr, spec.vocab_size);
  for (size_t i = 0; i < corpus.size(); ++i) {
    CHECK(corpus[i].emotion == pristine[i].emotion);
    CHECK(corpus[i].transcript == pristine[i].transcript);
    CHECK(corpus[i].frames == pristine[i].frames);
  }
}

// ---- corpus files ----

TEST_CASE("empty corpus writes a header-only file that reads back empty") {
  TempDir tmp("corpusio");
  const std::string path = tmp.file("empty.corpus");
  write_corpus({}, path);
  std::string text = slurp(path);
  CHECK(text.substr(0, 12) == "mfaec-corpus");
  CHECK(std::count(text.begin(), text.end(), '\n') == 1);
  CHECK(read_corpus(path).empty());
}

TEST_CASE("corpus round trip is exact, including frames") {
  TempDir tmp("corpusio");
  CorpusSpec spec;
  spec.seed = 31;
  auto corpus = gen_corpus(spec, 40);
  corrupt_corpus(corpus, CorruptionSpec{}, spec.vocab_size);
  const std::string path = tmp.file("round.corpus");
  write_corpus(corpus, path);
  auto back = read_corpus(path);
  REQUIRE(back.size() == corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i) {
    CHECK(back[i].id == corpus[i].id);
    CHECK(back[i].emotion == corpus[i].emotion);
    CHECK(back[i].frame_dim == corpus[i].frame_dim);
    CHECK(back[i].m == corpus[i].m);
    CHECK(back[i].transcript == corpus[i].transcript);
    CHECK(back[i].asr == corpus[i].asr);
    CHECK(back[i].frames == corpus[i].frames);  // %.17g round trip is bitwise
  }
}

TEST_CASE("large corpus serialization is byte-stable across write/read/write") {
  TempDir tmp("corpusio");
  CorpusSpec spec;
  spec.seed = 7;
  auto corpus = gen_corpus(spec, 1000);
  corrupt_corpus(corpus, CorruptionSpec{}, spec.vocab_size);
  const std::string p1 = tmp.file("a.corpus");
  const std::string p2 = tmp.file("b.corpus");
  write_corpus(corpus, p1);
  write_corpus(read_corpus(p1), p2);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("malformed corpus lines name the line and field") {
  TempDir tmp("corpusio");
  const std::string path = tmp.file("bad.corpus");
  {
    std::ofstream out(path);
    out << "mfaec-corpus 1 id emotion frame_dim m transcript asr frames\n";
    out << "0 1 4 4 2 5 6 1 5 0.5\n";  // m*frame_dim=16 frames expected, 1 given
  }
  CHECK_THROWS_WITH_AS(read_corpus(path), doctest::Contains(":2:"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(read_corpus(path), doctest::Contains("frame value"),
                       std::runtime_error);

  const std::string bad_header = tmp.file("badheader.corpus");
  {
    std::ofstream out(bad_header);
    out << "not-a-corpus 1\n";
  }
  CHECK_THROWS_WITH_AS(read_corpus(bad_header), doctest::Contains("header"),
                       std::runtime_error);
}
