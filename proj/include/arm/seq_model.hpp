#pragma once

// GRU encoder/decoder machinery shared by the teacher, the student and the
// plain encoder-decoder baseline, plus a generic beam search engine.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "arm/autodiff.hpp"
#include "arm/errors.hpp"

namespace arm {

using TokenId = int;
using TokenSeq = std::vector<TokenId>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr std::size_t kNumReserved = 4;

class Vocab {
 public:
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kBosToken = "<bos>";
  static constexpr std::string_view kEosToken = "<eos>";
  static constexpr std::string_view kUnkToken = "<unk>";

  // Reserved tokens only.
  Vocab();
  // `tokens` must start with the four reserved tokens in id order.
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;  // UNK when absent
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Appends EOS when requested.
  TokenSeq encode(std::span<const std::string> words, bool append_eos = false) const;
  // Drops PAD/BOS and stops at EOS.
  std::vector<std::string> decode(std::span<const TokenId> ids) const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Update gate z, reset gate r, candidate n:
//   z = sigmoid(Wz [x; h] + bz),  r = sigmoid(Wr [x; h] + br)
//   n = tanh(Wn [x; r*h] + bn),   h' = (1 - z) * h + z * n
struct GruCell {
  Parameter* w_update = nullptr;  // [H, I+H]
  Parameter* b_update = nullptr;  // [H]
  Parameter* w_reset = nullptr;
  Parameter* b_reset = nullptr;
  Parameter* w_cand = nullptr;
  Parameter* b_cand = nullptr;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;

  static GruCell create(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                        std::size_t hidden_dim);
  static GruCell bind(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                      std::size_t hidden_dim);
};

Value gru_step(const GruCell& cell, const Value& h_prev, const Value& x);

struct Encoder {
  Parameter* embedding = nullptr;  // [V, E]
  GruCell cell;                    // E -> H

  std::size_t vocab_size() const { return embedding->shape[0]; }
  std::size_t hidden_dim() const { return cell.hidden_dim; }

  static Encoder create(ParameterStore& store, const std::string& prefix, std::size_t vocab, std::size_t embed,
                        std::size_t hidden);
  static Encoder bind(ParameterStore& store, const std::string& prefix, std::size_t vocab, std::size_t embed,
                      std::size_t hidden);
};

// Final hidden state after consuming `tokens` from a zero state.
Value encode(Graph& g, const Encoder& enc, std::span<const TokenId> tokens);

// Every step consumes [embedding(previous token); context]. The initial state
// is zero and the first previous token is BOS.
struct Decoder {
  Parameter* embedding = nullptr;   // [V, E]
  GruCell cell;                     // E + H -> H
  Parameter* projection = nullptr;  // [V, H]
  Parameter* bias = nullptr;        // [V]

  std::size_t vocab_size() const { return embedding->shape[0]; }
  std::size_t context_dim() const { return cell.input_dim - embedding->shape[1]; }
  std::size_t hidden_dim() const { return cell.hidden_dim; }

  static Decoder create(ParameterStore& store, const std::string& prefix, std::size_t vocab, std::size_t embed,
                        std::size_t hidden);
  static Decoder bind(ParameterStore& store, const std::string& prefix, std::size_t vocab, std::size_t embed,
                      std::size_t hidden);
};

// Hidden state after consuming `prev_token` under `context`.
Value decoder_advance(const Decoder& dec, const Value& state, TokenId prev_token, const Value& context);
// Log-distribution over the vocabulary at `state`.
Value decoder_log_probs(const Decoder& dec, const Value& state);
// State ready to score the first response token.
Value decoder_start(Graph& g, const Decoder& dec, const Value& context);

// Teacher-forced sum of log p(y_t | y_<t, context). `y` must contain EOS;
// tokens after the first EOS are ignored.
Value response_log_likelihood(Graph& g, const Decoder& dec, const Value& context, std::span<const TokenId> y);
// Tokens scored by response_log_likelihood: up to and including the first EOS.
std::size_t scored_length(std::span<const TokenId> y);
// Same sum over every token of `y`, with no EOS requirement (truncated beams).
Value sequence_log_prob(Graph& g, const Decoder& dec, const Value& context, std::span<const TokenId> y);

// ---- beam search -------------------------------------------------------

struct BeamHypothesis {
  std::vector<int> actions;
  double score = 0.0;
};

// Descending score; ties broken by lexicographically smaller action sequence.
inline bool beam_order(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.actions < b.actions;
}

// Generic beam search. `model` provides
//   std::vector<double> scores(const State&)     log-probabilities over actions
//   State advance(const State&, int action)
// Hypotheses finish on `terminal` or at `max_len` actions. Finished
// hypotheses are pooled; the live beam keeps the `width` best unfinished
// extensions. Returns at most `width` hypotheses in beam_order.
template <class Model, class State>
std::vector<BeamHypothesis> beam_search(Model& model, State start, std::size_t width, std::size_t max_len,
                                        int terminal) {
  if (width < 1) throw ContractError("beam_search: width must be >= 1");
  if (max_len < 1) throw ContractError("beam_search: max_len must be >= 1");

  struct Live {
    BeamHypothesis hyp;
    State state;
  };
  struct Candidate {
    BeamHypothesis hyp;
    std::size_t parent;
  };

  std::vector<Live> beam;
  beam.push_back(Live{BeamHypothesis{}, std::move(start)});
  std::vector<BeamHypothesis> finished;

  for (std::size_t step = 0; step < max_len && !beam.empty(); ++step) {
    std::vector<Candidate> candidates;
    for (std::size_t b = 0; b < beam.size(); ++b) {
      const std::vector<double> scores = model.scores(beam[b].state);
      for (std::size_t a = 0; a < scores.size(); ++a) {
        if (!std::isfinite(scores[a]))
          throw NumericError("beam_search: non-finite score at step " + std::to_string(step));
        BeamHypothesis h = beam[b].hyp;
        h.actions.push_back(static_cast<int>(a));
        h.score += scores[a];
        const bool done = static_cast<int>(a) == terminal || h.actions.size() == max_len;
        if (done)
          finished.push_back(std::move(h));
        else
          candidates.push_back(Candidate{std::move(h), b});
      }
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const Candidate& x, const Candidate& y) { return beam_order(x.hyp, y.hyp); });
    if (candidates.size() > width) candidates.resize(width);
    std::vector<Live> next;
    next.reserve(candidates.size());
    for (auto& c : candidates) {
      State s = model.advance(beam[c.parent].state, c.hyp.actions.back());
      next.push_back(Live{std::move(c.hyp), std::move(s)});
    }
    beam = std::move(next);
  }

  std::sort(finished.begin(), finished.end(), beam_order);
  if (finished.size() > width) finished.resize(width);
  return finished;
}

// Token-level beam search of the decoder under a fixed context.
// Returned action sequences include the final EOS when present.
std::vector<BeamHypothesis> beam_decode(const Decoder& dec, std::span<const double> context, std::size_t width,
                                        std::size_t max_len);

}  // namespace arm
