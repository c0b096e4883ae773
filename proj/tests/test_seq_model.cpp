#include <algorithm>
#include <cmath>
#include <filesystem>

#include "arm/errors.hpp"
#include "arm/seq_model.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace arm;

namespace {

double score(const Decoder& dec, const std::vector<double>& ctx, const TokenSeq& y) {
  Graph g;
  return sequence_log_prob(g, dec, g.constant(ctx), y).item();
}

BeamHypothesis exhaustive_best(const Decoder& dec, const std::vector<double>& ctx, std::size_t max_len) {
  BeamHypothesis best;
  bool first = true;
  for (const auto& y : armtest::enumerate_sequences(dec.vocab_size(), max_len)) {
    BeamHypothesis h{std::vector<int>(y.begin(), y.end()), score(dec, ctx, y)};
    if (first || beam_order(h, best)) best = h;
    first = false;
  }
  return best;
}

}  // namespace

TEST_CASE("vocab") {
  Vocab v({"<pad>", "<bos>", "<eos>", "<unk>", "a", "b"});
  CHECK(v.size() == 6);
  CHECK(v.id("a") == 4);
  CHECK(v.id("zzz") == kUnk);
  CHECK(v.token(5) == "b");
  const std::vector<std::string> words{"b", "a", "c"};
  CHECK(v.encode(words, true) == TokenSeq{5, 4, kUnk, kEos});
  CHECK(v.decode(TokenSeq{kBos, 4, kPad, 5, kEos, 4}) == std::vector<std::string>{"a", "b"});
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v.id(v.token(static_cast<TokenId>(i))) == static_cast<TokenId>(i));
  CHECK_THROWS(Vocab({"a", "<bos>", "<eos>", "<unk>"}));
  CHECK_THROWS(Vocab({"<pad>", "<bos>", "<eos>", "<unk>", "a", "a"}));

  const auto path = std::filesystem::temp_directory_path() / "arm_vocab_test.txt";
  v.save(path.string());
  CHECK(Vocab::load(path.string()) == v);
  std::filesystem::remove(path);
}

TEST_CASE("gru_step examples") {
  ParameterStore store;
  const GruCell cell = GruCell::create(store, "c", 3, 4);
  Graph g;
  const Value h = g.constant(std::vector<double>{0.4, -1.0, 2.0, 0.0});
  const Value x = g.constant(std::vector<double>{1.0, 2.0, 3.0});
  const auto out = gru_step(cell, h, x).to_vector();
  for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(0.5 * h[i]).epsilon(1e-15));

  Rng rng(1);
  armtest::fill_uniform(store, 1.0, rng);
  std::fill(store.at("c.w_cand").value.begin(), store.at("c.w_cand").value.end(), 0.0);
  std::fill(store.at("c.b_cand").value.begin(), store.at("c.b_cand").value.end(), 0.0);
  for (double v : gru_step(cell, g.zeros({4}), x).to_vector()) CHECK(v == 0.0);

  CHECK_THROWS_AS(gru_step(cell, g.zeros({3}), x), ContractError);
}

TEST_CASE("gru_step matches a scalar reference") {
  ParameterStore store;
  const GruCell cell = GruCell::create(store, "c", 5, 6);
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    armtest::fill_uniform(store, 1.0, rng);
    const auto h = armtest::uniform_vector(6, -1, 1, rng);
    const auto x = armtest::uniform_vector(5, -1, 1, rng);
    Graph g;
    const auto got = gru_step(cell, g.constant(h), g.constant(x)).to_vector();
    const auto want = armtest::reference_gru(cell, h, x);
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
  }
}

TEST_CASE("gru gradient check") {
  ParameterStore store;
  const GruCell cell = GruCell::create(store, "c", 3, 4);
  Rng rng(12);
  for (int point = 0; point < 20; ++point) {
    armtest::fill_uniform(store, 1.0, rng);
    const auto h = armtest::uniform_vector(4, -1, 1, rng);
    const auto x = armtest::uniform_vector(3, -1, 1, rng);
    auto loss = [&](Graph& g) { return sum(mul(gru_step(cell, g.constant(h), g.constant(x)), g.constant(h))); };
    const double err = armtest::check_param_grads(
        store, store.paths(),
        [&] {
          Graph g;
          g.backward(loss(g));
          g.accumulate_param_grads();
        },
        [&] {
          Graph g;
          return loss(g).item();
        });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("encode") {
  ParameterStore store;
  const Encoder enc = Encoder::create(store, "e", 6, 3, 4);
  Graph g;
  for (double v : encode(g, enc, TokenSeq{5}).to_vector()) CHECK(v == 0.0);
  CHECK_THROWS_AS(encode(g, enc, TokenSeq{}), ContractError);
  CHECK_THROWS_AS(encode(g, enc, TokenSeq{6}), IndexError);
  CHECK(store.at("e.embedding").shape == Shape{6, 3});
}

TEST_CASE("response_log_likelihood") {
  ParameterStore store;
  const Decoder dec = Decoder::create(store, "d", 4, 3, 5);
  Rng rng(4);
  armtest::fill_uniform(store, 1.0, rng);
  std::fill(store.at("d.projection").value.begin(), store.at("d.projection").value.end(), 0.0);
  std::fill(store.at("d.bias").value.begin(), store.at("d.bias").value.end(), 0.0);
  const auto ctx = armtest::uniform_vector(5, -1, 1, rng);
  Graph g;
  const Value c = g.constant(ctx);
  CHECK(response_log_likelihood(g, dec, c, TokenSeq{3, 1, kEos}).item() == doctest::Approx(3 * std::log(0.25)));
  CHECK_THROWS_AS(response_log_likelihood(g, dec, c, TokenSeq{3, 1}), ContractError);

  armtest::fill_uniform(store, 1.0, rng);
  const double base = response_log_likelihood(g, dec, c, TokenSeq{3, kEos}).item();
  CHECK(response_log_likelihood(g, dec, c, TokenSeq{3, kEos, kPad, kPad}).item() == base);
  CHECK(scored_length(TokenSeq{3, kEos, kPad}) == 2);
}

TEST_CASE("decoder distributions are normalized") {
  Rng rng(6);
  armtest::ToyDecoder toy;
  armtest::make_toy_decoder(toy, 7, 3, 5, 1.0, rng);
  Graph g;
  const Value c = g.constant(toy.ctx);
  Value state = decoder_start(g, toy.decoder, c);
  for (TokenId t : {4, 5, 6, 3, 1}) {
    double total = 0.0;
    for (double lp : decoder_log_probs(toy.decoder, state).data()) total += std::exp(lp);
    CHECK(std::abs(total - 1.0) < 1e-6);
    state = decoder_advance(toy.decoder, state, t, c);
  }
}

TEST_CASE("likelihood gradient with respect to the context") {
  Rng rng(7);
  armtest::ToyDecoder toy;
  armtest::make_toy_decoder(toy, 6, 3, 4, 0.8, rng);
  for (int point = 0; point < 20; ++point) {
    const TokenSeq y{4, 5, 3, kEos};
    const double err = armtest::check_input_grads(
        [&](Graph& g, const std::vector<Value>& in) { return response_log_likelihood(g, toy.decoder, in[0], y); },
        {{{4}, armtest::uniform_vector(4, -1, 1, rng)}});
    CHECK(err < 1e-4);
  }
}

TEST_CASE("beam search covering the space equals enumeration") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    armtest::ToyDecoder toy;
    armtest::make_toy_decoder(toy, 4, 2, 3, 2.0, rng);
    const std::size_t T = 3;
    auto all = armtest::enumerate_sequences(4, T);
    std::vector<BeamHypothesis> ref;
    for (const auto& y : all) ref.push_back({std::vector<int>(y.begin(), y.end()), score(toy.decoder, toy.ctx, y)});
    std::sort(ref.begin(), ref.end(), beam_order);
    const auto got = beam_decode(toy.decoder, toy.ctx, 64, T);
    REQUIRE(got.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(got[i].actions == ref[i].actions);
      CHECK(std::abs(got[i].score - ref[i].score) < 1e-9);
    }
  }
}

TEST_CASE("beam top-1 is monotone in width") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    armtest::ToyDecoder toy;
    armtest::make_toy_decoder(toy, 5, 2, 3, 2.0, rng);
    double prev = -1e300;
    for (std::size_t width : {1, 2, 4, 625}) {
      const double top = beam_decode(toy.decoder, toy.ctx, width, 4).front().score;
      CHECK(top >= prev - 1e-12);
      prev = top;
    }
    CHECK(std::abs(prev - exhaustive_best(toy.decoder, toy.ctx, 4).score) < 1e-9);
  }
}

namespace {

struct FixedModel {
  std::vector<std::vector<double>> table;  // per step
  std::vector<double> scores(const std::size_t& step) { return table.at(step); }
  std::size_t advance(const std::size_t& step, int) { return step + 1; }
};

}  // namespace

TEST_CASE("beam search on a degenerate distribution") {
  FixedModel m{{{0.0, -1e300, -1e300}, {-1e300, -1e300, 0.0}}};
  const auto hyps = beam_search(m, std::size_t{0}, 1, 2, 2);
  REQUIRE(!hyps.empty());
  CHECK(hyps.front().actions == std::vector<int>{0, 2});
  CHECK(hyps.front().score == 0.0);
}

TEST_CASE("beam search rejects non-finite scores") {
  FixedModel m{{{0.0, NAN}}};
  try {
    beam_search(m, std::size_t{0}, 2, 3, 1);
    FAIL("no error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
  CHECK_THROWS_AS(beam_search(m, std::size_t{0}, 0, 3, 1), ContractError);
}

TEST_CASE("beam ties break lexicographically") {
  FixedModel m{{{std::log(0.5), std::log(0.5)}, {0.0, -1e300}}};
  const auto hyps = beam_search(m, std::size_t{0}, 4, 1, 1);
  REQUIRE(hyps.size() == 2);
  CHECK(hyps[0].actions == std::vector<int>{0});
  CHECK(hyps[1].actions == std::vector<int>{1});
}
