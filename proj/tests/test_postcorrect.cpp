// Copyright 2026 The AnnoLab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <doctest.h>

#include <random>

#include "annolab/error.hpp"
#include "annolab/postcorrect.hpp"
#include "annolab/util.hpp"
#include "checks.hpp"
#include "oracles.hpp"
#include "synthetic_ocr.hpp"

using namespace annolab;
using namespace annolab::postcorrect;
using annolab::testing::brute_force_decode;
using annolab::testing::levenshtein;

namespace {

std::u32string apply_script(const std::vector<EditOp>& ops) {
  std::u32string out;
  for (const auto& op : ops) {
    if (op.obs_char != kEpsilon) out.push_back(op.obs_char);
  }
  return out;
}

std::u32string truth_of(const std::vector<EditOp>& ops) {
  std::u32string out;
  for (const auto& op : ops) {
    if (op.true_char != kEpsilon) out.push_back(op.true_char);
  }
  return out;
}

std::size_t script_cost(const std::vector<EditOp>& ops) {
  std::size_t n = 0;
  for (const auto& op : ops) n += op.type != EditOp::Type::kCopy;
  return n;
}

}  // namespace

TEST_CASE("align returns a minimal script consistent with both strings") {
  std::mt19937_64 rng(11);
  const std::u32string alphabet = U"abc";
  for (int n = 0; n < 2000; ++n) {
    std::u32string obs, truth;
    for (auto k = rng() % 7; k > 0; --k) obs.push_back(alphabet[rng() % 3]);
    for (auto k = rng() % 7; k > 0; --k) truth.push_back(alphabet[rng() % 3]);
    const auto ops = align(obs, truth);
    REQUIRE(apply_script(ops) == obs);
    REQUIRE(truth_of(ops) == truth);
    REQUIRE(script_cost(ops) == levenshtein(obs, truth));
    REQUIRE(edit_distance(obs, truth) == levenshtein(obs, truth));
  }
}

TEST_CASE("align tie-breaking prefers substitution over a delete/insert pair") {
  const auto ops = align(U"ab", U"ac");
  REQUIRE(ops.size() == 2);
  CHECK(ops[0] == EditOp::copy(U'a'));
  CHECK(ops[1] == EditOp::substitute(U'c', U'b'));
}

TEST_CASE("align of examples") {
  CHECK(align(U"ab", U"ab") == std::vector<EditOp>{EditOp::copy('a'), EditOp::copy('b')});
  CHECK(align(U"cb", U"ab") ==
        std::vector<EditOp>{EditOp::substitute('a', 'c'), EditOp::copy('b')});
  CHECK(align(U"ab", U"b") == std::vector<EditOp>{EditOp::insert_obs('a'), EditOp::copy('b')});
  CHECK(align(U"", U"") .empty());
  const auto del = align(U"ac", U"abc");
  CHECK(del == std::vector<EditOp>{EditOp::copy('a'), EditOp::delete_true('b'), EditOp::copy('c')});
  const auto ins = align(U"abxc", U"abc");
  CHECK(script_cost(ins) == 1);
  CHECK(std::count(ins.begin(), ins.end(), EditOp::insert_obs('x')) == 1);
}

TEST_CASE("cer examples") {
  CHECK(cer("", "ab") == 1.0);
  CHECK(cer("sitting", "kitten") == doctest::Approx(0.5));
  CHECK(cer("", "") == 0.0);
  CHECK(cer("abc", "abc") == 0.0);
  CHECK(cer("abd", "abc") == doctest::Approx(1.0 / 3));
  CHECK(cer("", "abcd") == 1.0);
  CHECK(cer("ée", "e") == 1.0);  // code points, not bytes
  CHECK_THROWS_AS(cer("x", ""), Error);
}

TEST_CASE("cer times reference length equals the quadratic DP distance") {
  const auto sweep = annolab::testing::sweep_cer(5, 1000, 8);
  CHECK(sweep.pairs == 1000);
  CHECK(sweep.mismatches == 0);
}

TEST_CASE("channel probabilities follow add-alpha smoothing") {
  // Alphabet {a, b, c}: V = 4 with epsilon.
  ChannelModel ch(0.1);
  for (char32_t c : std::u32string(U"abc")) ch.add_symbol(c);
  ch.add(U'a', U'a', 9);
  ch.add(U'a', U'c', 2);
  ch.add(U'a', kEpsilon, 1);
  // P(c | a) = (2 + 0.1) / (12 + 0.4)
  CHECK(ch.prob(U'a', U'c') == doctest::Approx(2.1 / 12.4));
  SUBCASE("each row sums to one over alphabet and epsilon") {
    for (char32_t t : std::u32string{U'a', U'b', U'c', kEpsilon}) {
      double total = 0.0;
      for (char32_t o : std::u32string{U'a', U'b', U'c', kEpsilon}) total += ch.prob(t, o);
      CHECK(total == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("channel probability after training on two short pairs") {
  const auto model = PostCorrector::train({{"cb", "ab"}, {"ab", "ab"}}, TrainConfig{});
  CHECK(model.channel().alphabet() == std::set<char32_t>{U'a', U'b', U'c'});
  // (1 + 0.1) / (2 + 0.4)
  CHECK(model.channel().prob(U'a', U'c') == doctest::Approx(0.4583).epsilon(1e-4));
}

TEST_CASE("inventory keeps only edits seen at least min_count times") {
  const std::vector<PagePair> three{{"cb", "ab"}, {"xc", "xa"}, {"ca", "aa"}};
  const auto model = PostCorrector::train(three, TrainConfig{});
  REQUIRE(model.inventory().substitutions.count(U'c'));
  CHECK(model.inventory().substitutions.at(U'c') == std::vector<char32_t>{U'a'});
  const auto once = PostCorrector::train({{"cb", "ab"}}, TrainConfig{});
  CHECK(once.inventory().substitutions.empty());
}

TEST_CASE("decoder learns a repeated substitution") {
  std::vector<PagePair> pairs(5, PagePair{"cb", "ab"});
  const auto model = PostCorrector::train(pairs, TrainConfig{});
  CHECK(model.decode_line("cb") == "ab");
}

TEST_CASE("a model trained on clean pairs is the identity") {
  annolab::testing::OcrCorpusConfig cfg;
  cfg.seed = 9;
  cfg.page_chars = 400;
  annolab::testing::OcrCorpus corpus(cfg);
  std::vector<PagePair> clean;
  for (int i = 0; i < 3; ++i) {
    const auto page = corpus.clean_page();
    clean.push_back({page, page});
  }
  const auto model = PostCorrector::train(clean, TrainConfig{});
  CHECK(model.inventory().empty());
  std::mt19937_64 rng(3);
  const auto& alphabet = annolab::testing::ocr_alphabet();
  for (int n = 0; n < 200; ++n) {
    std::u32string s;
    for (auto k = rng() % 12; k > 0; --k) s.push_back(alphabet[rng() % alphabet.size()]);
    REQUIRE(model.decode(s) == s);
  }
}

TEST_CASE("micro-averaged CER weights pages by reference length") {
  // Identity model: ref lengths 10 and 30 with 5 and 0 errors -> 5 / 40.
  const auto identity = PostCorrector::train({{"x", "x"}}, TrainConfig{});
  const std::vector<PagePair> pages{{"aaaaabbbbb", "bbbbbbbbbb"},
                                    {std::string(30, 'c'), std::string(30, 'c')}};
  const auto eval = evaluate(identity, pages);
  CHECK(eval.cer_before == doctest::Approx(0.125));
  CHECK(eval.cer_after == eval.cer_before);
}

TEST_CASE("a corrector whose edits are all unambiguous repairs the page") {
  std::vector<PagePair> train(4, PagePair{"xbc\nbxa", "abc\nbaa"});
  const auto model = PostCorrector::train(train, TrainConfig{});
  const auto eval = evaluate(model, {{"xbc", "abc"}});
  CHECK(eval.cer_before > 0.0);
  CHECK(eval.cer_after == 0.0);
}

TEST_CASE("resubstitution error does not grow and distributions stay normalized") {
  for (std::uint64_t seed : {1, 2, 3}) {
    annolab::testing::OcrCorpusConfig cfg;
    cfg.seed = seed;
    cfg.page_chars = 800;
    annolab::testing::OcrCorpus corpus(cfg);
    TrainReport report;
    const auto model = PostCorrector::train(corpus.pages(3), TrainConfig{}, &report);
    CHECK(report.pages_used == 3);
    CHECK(report.cer_after <= report.cer_before);
    const auto& ch = model.channel();
    std::vector<char32_t> symbols(ch.alphabet().begin(), ch.alphabet().end());
    symbols.push_back(kEpsilon);
    for (char32_t t : symbols) {
      double total = 0.0;
      for (char32_t o : symbols) total += ch.prob(t, o);
      REQUIRE(total == doctest::Approx(1.0).epsilon(1e-9));
    }
    for (const auto& [c1, c2] : model.lm().contexts()) {
      double total = 0.0;
      for (char32_t c : model.lm().vocabulary()) total += model.lm().prob(c, c1, c2);
      REQUIRE(total == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("channel estimate for a worked example") {
  // 10 'a' observed: 7 copies, 3 read as 'c'; alphabet {a, c}; alpha 0.5.
  ChannelModel ch(0.5);
  ch.add_symbol(U'a');
  ch.add_symbol(U'c');
  ch.add(U'a', U'a', 7);
  ch.add(U'a', U'c', 3);
  // (3 + 0.5) / (10 + 0.5 * 3) = 0.30435
  CHECK(ch.prob(U'a', U'c') == doctest::Approx(3.5 / 11.5));
  ChannelModel sharp(0.1);
  sharp.add_symbol(U'a');
  sharp.add_symbol(U'c');
  sharp.add(U'a', U'a', 13);
  sharp.add(U'a', U'c', 11);
  // (11 + 0.1) / (24 + 0.3) = 0.4568
  CHECK(sharp.prob(U'a', U'c') == doctest::Approx(11.1 / 24.3));
}

TEST_CASE("language model distributions are normalized") {
  CharLM lm(0.1);
  lm.add_line(U"abca");
  lm.add_line(U"bcab");
  lm.finalize();
  for (const auto& [c1, c2] : lm.contexts()) {
    double total = 0.0;
    for (char32_t c : lm.vocabulary()) total += lm.prob(c, c1, c2);
    CHECK(total == doctest::Approx(1.0));
  }
  double unseen = 0.0;
  for (char32_t c : lm.vocabulary()) unseen += lm.prob(c, U'z', U'z');
  CHECK(unseen == doctest::Approx(1.0));
}

TEST_CASE("decoder agrees with the exhaustive oracle on a two-letter alphabet") {
  const auto model = annolab::testing::small_alphabet_model(U"ab", 3);
  CHECK_FALSE(model.inventory().empty());
  const auto sweep = annolab::testing::sweep_decoder(model, U"ab", 5, 10'000);
  INFO(sweep.first_mismatch);
  CHECK(sweep.inputs == 63);
  CHECK(sweep.mismatches == 0);
}

TEST_CASE("decoder returns the oracle's best output for a few three-letter inputs") {
  const auto model = annolab::testing::small_alphabet_model(U"abc", 1);
  for (const std::u32string obs : {U"", U"a", U"cab", U"bbca"}) {
    auto m = model;
    m.set_beam(10'000);
    const auto oracle = brute_force_decode(m, obs);
    REQUIRE_FALSE(oracle.ties.empty());
    CHECK(utf8_encode(m.decode(obs)) == utf8_encode(oracle.ties.front()));
    CHECK(annolab::testing::oracle_score(m, obs, m.decode(obs)) ==
          doctest::Approx(oracle.best));
  }
}

TEST_CASE("a model without inventory returns its input") {
  std::vector<PagePair> pairs{{"abc", "abc"}, {"bca", "bca"}};
  const auto model = PostCorrector::train(pairs, TrainConfig{});
  CHECK(model.inventory().empty());
  CHECK(model.decode_line("cab") == "cab");
  CHECK(model.decode_text("ab\nba") == "ab\nba");
}

TEST_CASE("training rejects an empty dataset") {
  CHECK_THROWS_AS(PostCorrector::train({}, TrainConfig{}), Error);
}

TEST_CASE("serialization round trip preserves decoding") {
  annolab::testing::OcrCorpusConfig cfg;
  cfg.seed = 2;
  cfg.page_chars = 600;
  annolab::testing::OcrCorpus corpus(cfg);
  const auto train = corpus.pages(3);
  const auto model = PostCorrector::train(train, TrainConfig{});
  const auto restored = PostCorrector::from_json(nlohmann::json::parse(model.to_json().dump()));
  const auto page = corpus.pages(1).front().obs;
  CHECK(restored.decode_text(page) == model.decode_text(page));
}

TEST_CASE("fine-tuning from a base equals training on the union") {
  annolab::testing::OcrCorpusConfig cfg;
  cfg.seed = 4;
  cfg.page_chars = 500;
  annolab::testing::OcrCorpus corpus(cfg);
  const auto first = corpus.pages(2);
  const auto second = corpus.pages(2);
  const auto base = PostCorrector::train(first, TrainConfig{});
  const auto child = PostCorrector::train(second, TrainConfig{}, nullptr, {}, &base);
  auto both = first;
  both.insert(both.end(), second.begin(), second.end());
  const auto union_model = PostCorrector::train(both, TrainConfig{});
  CHECK(child.to_json() == union_model.to_json());
}

TEST_CASE("checkpoint exceptions abort training and decoding") {
  struct Stop {};
  std::vector<PagePair> pairs{{"abd", "abc"}};
  CHECK_THROWS_AS(PostCorrector::train(pairs, TrainConfig{}, nullptr, [] { throw Stop{}; }), Stop);
  const auto model = PostCorrector::train(pairs, TrainConfig{});
  CHECK_THROWS_AS(model.decode_text("a\nb", [] { throw Stop{}; }), Stop);
}

TEST_CASE("text pair parsing reports the failing line") {
  const auto pairs = parse_text_pairs_jsonl(
      "{\"source\":\"a\",\"target\":\"b\"}\n\n{\"source\":\"c\",\"target\":\"d\"}\n");
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[1].obs == "c");
  try {
    parse_text_pairs_jsonl("{\"source\":\"a\",\"target\":\"b\"}\n{\"source\":1}\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("training on synthetic OCR pages halves the error rate on held-out pages") {
  const auto run = annolab::testing::run_case_study(1);
  INFO("before " << run.cer_before << " after " << run.cer_after);
  CHECK(run.cer_before > 0.05);
  CHECK(run.relative_reduction() >= 0.5);
}

TEST_CASE("TrainConfig reads parameters with defaults") {
  const auto c = TrainConfig::from_json({{"beam", 4}, {"lm_weight", 0.5}});
  CHECK(c.beam == 4);
  CHECK(c.lm_weight == 0.5);
  CHECK(c.min_count == TrainConfig{}.min_count);
}
