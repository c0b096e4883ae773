#include "arm/seq_model.hpp"

#include <fstream>

namespace arm {

// ---- Vocab -------------------------------------------------------------

Vocab::Vocab()
    : Vocab(std::vector<std::string>{std::string(kPadToken), std::string(kBosToken), std::string(kEosToken),
                                     std::string(kUnkToken)}) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const std::string_view reserved[] = {kPadToken, kBosToken, kEosToken, kUnkToken};
  if (tokens_.size() < kNumReserved) throw FormatError("vocab: fewer entries than reserved tokens");
  for (std::size_t i = 0; i < kNumReserved; ++i)
    if (tokens_[i] != reserved[i])
      throw FormatError("vocab: entry " + std::to_string(i) + " must be " + std::string(reserved[i]));
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty() || tokens_[i].find_first_of(" \t\r\n") != std::string::npos)
      throw FormatError("vocab: invalid token at line " + std::to_string(i + 1));
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
      throw FormatError("vocab: duplicate token '" + tokens_[i] + "'");
  }
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw IndexError("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

TokenSeq Vocab::encode(std::span<const std::string> words, bool append_eos) const {
  TokenSeq out;
  out.reserve(words.size() + 1);
  for (const auto& w : words) out.push_back(id(w));
  if (append_eos) out.push_back(kEos);
  return out;
}

std::vector<std::string> Vocab::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  for (TokenId t : ids) {
    if (t == kEos) break;
    if (t == kPad || t == kBos) continue;
    out.push_back(token(t));
  }
  return out;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocab file " + path);
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw IoError("write failed for vocab file " + path);
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read vocab file " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocab(std::move(tokens));
}

// ---- GRU ---------------------------------------------------------------

namespace {

Parameter* make(ParameterStore& store, bool create, const std::string& path, Shape shape) {
  if (create) return &store.create(path, std::move(shape));
  Parameter& p = store.at(path);
  if (p.shape != shape)
    throw ShapeError("parameter " + path + " has shape " + shape_string(p.shape) + ", expected " +
                     shape_string(shape));
  return &p;
}

GruCell gru_params(ParameterStore& store, bool create, const std::string& prefix, std::size_t in, std::size_t hid) {
  GruCell c;
  c.input_dim = in;
  c.hidden_dim = hid;
  c.w_update = make(store, create, prefix + ".w_update", {hid, in + hid});
  c.b_update = make(store, create, prefix + ".b_update", {hid});
  c.w_reset = make(store, create, prefix + ".w_reset", {hid, in + hid});
  c.b_reset = make(store, create, prefix + ".b_reset", {hid});
  c.w_cand = make(store, create, prefix + ".w_cand", {hid, in + hid});
  c.b_cand = make(store, create, prefix + ".b_cand", {hid});
  return c;
}

Encoder encoder_params(ParameterStore& store, bool create, const std::string& prefix, std::size_t vocab,
                       std::size_t embed, std::size_t hidden) {
  Encoder e;
  e.embedding = make(store, create, prefix + ".embedding", {vocab, embed});
  e.cell = gru_params(store, create, prefix + ".gru", embed, hidden);
  return e;
}

Decoder decoder_params(ParameterStore& store, bool create, const std::string& prefix, std::size_t vocab,
                       std::size_t embed, std::size_t hidden) {
  Decoder d;
  d.embedding = make(store, create, prefix + ".embedding", {vocab, embed});
  d.cell = gru_params(store, create, prefix + ".gru", embed + hidden, hidden);
  d.projection = make(store, create, prefix + ".projection", {vocab, hidden});
  d.bias = make(store, create, prefix + ".bias", {vocab});
  return d;
}

}  // namespace

GruCell GruCell::create(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                        std::size_t hidden_dim) {
  return gru_params(store, true, prefix, input_dim, hidden_dim);
}

GruCell GruCell::bind(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                      std::size_t hidden_dim) {
  return gru_params(store, false, prefix, input_dim, hidden_dim);
}

Value gru_step(const GruCell& cell, const Value& h_prev, const Value& x) {
  if (h_prev.shape() != Shape{cell.hidden_dim} || x.shape() != Shape{cell.input_dim})
    throw ContractError("gru_step: expected h " + shape_string({cell.hidden_dim}) + " and x " +
                        shape_string({cell.input_dim}) + ", got " + shape_string(h_prev.shape()) + " and " +
                        shape_string(x.shape()));
  Graph& g = h_prev.graph();
  const Value xh = concat(x, h_prev);
  const Value z = sigmoid(add(matmul(g.param(*cell.w_update), xh), g.param(*cell.b_update)));
  const Value r = sigmoid(add(matmul(g.param(*cell.w_reset), xh), g.param(*cell.b_reset)));
  const Value xrh = concat(x, mul(r, h_prev));
  const Value n = tanh(add(matmul(g.param(*cell.w_cand), xrh), g.param(*cell.b_cand)));
  return add(h_prev, mul(z, sub(n, h_prev)));
}

// ---- encoder -----------------------------------------------------------

Encoder Encoder::create(ParameterStore& store, const std::string& prefix, std::size_t vocab, std::size_t embed,
                        std::size_t hidden) {
  return encoder_params(store, true, prefix, vocab, embed, hidden);
}

Encoder Encoder::bind(ParameterStore& store, const std::string& prefix, std::size_t vocab, std::size_t embed,
                      std::size_t hidden) {
  return encoder_params(store, false, prefix, vocab, embed, hidden);
}

Value encode(Graph& g, const Encoder& enc, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw ContractError("encode: empty token sequence");
  const Value table = g.param(*enc.embedding);
  Value h = g.zeros({enc.hidden_dim()});
  for (TokenId t : tokens) {
    if (t < 0) throw IndexError("encode: negative token id");
    h = gru_step(enc.cell, h, lookup(table, static_cast<std::size_t>(t)));
  }
  return h;
}

// ---- decoder -----------------------------------------------------------

Decoder Decoder::create(ParameterStore& store, const std::string& prefix, std::size_t vocab, std::size_t embed,
                        std::size_t hidden) {
  return decoder_params(store, true, prefix, vocab, embed, hidden);
}

Decoder Decoder::bind(ParameterStore& store, const std::string& prefix, std::size_t vocab, std::size_t embed,
                      std::size_t hidden) {
  return decoder_params(store, false, prefix, vocab, embed, hidden);
}

Value decoder_advance(const Decoder& dec, const Value& state, TokenId prev_token, const Value& context) {
  if (context.shape() != Shape{dec.context_dim()})
    throw ContractError("decoder: context must have shape " + shape_string({dec.context_dim()}) + ", got " +
                        shape_string(context.shape()));
  if (prev_token < 0) throw IndexError("decoder: negative token id");
  Graph& g = state.graph();
  const Value emb = lookup(g.param(*dec.embedding), static_cast<std::size_t>(prev_token));
  return gru_step(dec.cell, state, concat(emb, context));
}

Value decoder_log_probs(const Decoder& dec, const Value& state) {
  Graph& g = state.graph();
  return log_softmax(add(matmul(g.param(*dec.projection), state), g.param(*dec.bias)));
}

Value decoder_start(Graph& g, const Decoder& dec, const Value& context) {
  return decoder_advance(dec, g.zeros({dec.hidden_dim()}), kBos, context);
}

Value sequence_log_prob(Graph& g, const Decoder& dec, const Value& context, std::span<const TokenId> y) {
  if (y.empty()) return g.scalar(0.0);
  Value state = decoder_start(g, dec, context);
  std::vector<Value> terms;
  terms.reserve(y.size());
  for (std::size_t t = 0; t < y.size(); ++t) {
    if (y[t] < 0) throw IndexError("decoder: negative token id");
    terms.push_back(pick(decoder_log_probs(dec, state), static_cast<std::size_t>(y[t])));
    if (t + 1 < y.size()) state = decoder_advance(dec, state, y[t], context);
  }
  return sum(concat(terms));
}

Value response_log_likelihood(Graph& g, const Decoder& dec, const Value& context, std::span<const TokenId> y) {
  auto eos = std::find(y.begin(), y.end(), kEos);
  if (eos == y.end()) throw ContractError("response_log_likelihood: response does not end with EOS");
  return sequence_log_prob(g, dec, context, y.first(static_cast<std::size_t>(eos - y.begin()) + 1));
}

namespace {

struct DecoderBeamModel {
  const Decoder& dec;
  Graph graph;
  Value context;

  DecoderBeamModel(const Decoder& d, std::span<const double> ctx) : dec(d) { context = graph.constant(ctx); }

  std::vector<double> scores(const Value& state) { return decoder_log_probs(dec, state).to_vector(); }
  Value advance(const Value& state, int action) { return decoder_advance(dec, state, action, context); }
};

}  // namespace

std::vector<BeamHypothesis> beam_decode(const Decoder& dec, std::span<const double> context, std::size_t width,
                                        std::size_t max_len) {
  DecoderBeamModel model(dec, context);
  Value start = decoder_start(model.graph, dec, model.context);
  return beam_search(model, start, width, max_len, kEos);
}

std::size_t scored_length(std::span<const TokenId> y) {
  const auto eos = std::find(y.begin(), y.end(), kEos);
  if (eos == y.end()) throw ContractError("response does not end with EOS");
  return static_cast<std::size_t>(eos - y.begin()) + 1;
}

}  // namespace arm
