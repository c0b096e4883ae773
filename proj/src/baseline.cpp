#include "arm/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace arm {

namespace {

constexpr std::uint64_t kStreamBaselineOrder = 11;

}  // namespace

BaselineState BaselineState::create(ParameterStore& store, const ModelDims& d) {
  return {Encoder::create(store, "baseline.encoder", d.vocab, d.embed, d.hidden),
          Decoder::create(store, "baseline.decoder", d.vocab, d.embed, d.hidden)};
}

BaselineState BaselineState::bind(ParameterStore& store, const ModelDims& d) {
  return {Encoder::bind(store, "baseline.encoder", d.vocab, d.embed, d.hidden),
          Decoder::bind(store, "baseline.decoder", d.vocab, d.embed, d.hidden)};
}

BaselineModel::BaselineModel(const ModelDims& d) : dims(d), net(BaselineState::create(store, d)) {}

Value baseline_log_likelihood(Graph& g, const BaselineState& net, std::span<const TokenId> post,
                              std::span<const TokenId> response) {
  return response_log_likelihood(g, net.decoder, encode(g, net.encoder, post), response);
}

double baseline_update(ParameterStore& store, const BaselineState& net, std::span<const BaselineExample> batch,
                       const AdadeltaOptions& options) {
  store.zero_grad(kBaselinePrefix);
  double total = 0.0;
  for (const auto& ex : batch) {
    Graph g;
    const Value loss = scale(baseline_log_likelihood(g, net, ex.post, ex.response),
                             -1.0 / static_cast<double>(scored_length(ex.response)));
    if (!std::isfinite(loss.item())) throw NumericError("baseline: non-finite loss");
    g.backward(loss);
    g.accumulate_param_grads();
    total += loss.item();
  }
  adadelta_step(store, kBaselinePrefix, options);
  return total;
}

std::string serialize_record(const BaselineRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["updates"] = r.updates;
  j["train_loss"] = r.train_loss;
  j["valid_nll"] = r.valid_nll;
  return j.dump();
}

std::string BaselineLog::serialize() const {
  std::string out;
  for (const auto& r : records) out += serialize_record(r) + "\n";
  if (!stop_reason.empty()) {
    nlohmann::ordered_json j;
    j["event"] = "stop";
    j["reason"] = stop_reason;
    j["epochs"] = records.size();
    j["best_epoch"] = best_epoch;
    out += j.dump() + "\n";
  }
  return out;
}

double baseline_validation_nll(const BaselineModel& model, std::span<const EncodedPair> valid) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& pair : valid)
    for (const auto& y : pair.responses) {
      Graph g;
      total += -baseline_log_likelihood(g, model.net, pair.post, y).item() / static_cast<double>(scored_length(y));
      ++n;
    }
  if (n == 0) throw ContractError("baseline validation: empty validation set");
  const double nll = total / static_cast<double>(n);
  if (!std::isfinite(nll)) throw NumericError("baseline validation: non-finite negative log-likelihood");
  return nll;
}

BaselineRecord train_baseline_epoch(BaselineModel& model, std::span<const EncodedPair> train,
                                    const TrainConfig& config, std::size_t epoch) {
  if (train.empty()) throw ContractError("train_baseline_epoch: empty corpus");
  const std::vector<Instance> instances = flatten(train);
  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = derive_rng(config.seed, kStreamBaselineOrder, epoch);
  std::shuffle(order.begin(), order.end(), rng);

  BaselineRecord rec;
  rec.epoch = epoch;
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t stop = std::min(order.size(), start + config.batch_size);
    std::vector<BaselineExample> batch;
    for (std::size_t k = start; k < stop; ++k) {
      const Instance inst = instances[order[k]];
      batch.push_back({train[inst.pair].post, train[inst.pair].responses[inst.response]});
    }
    try {
      rec.train_loss += baseline_update(model.store, model.net, batch, config.adadelta());
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(rec.updates) + ": " +
                         e.what());
    }
    ++rec.updates;
  }
  rec.train_loss /= static_cast<double>(instances.size());
  return rec;
}

BaselineLog train_baseline(BaselineModel& model, std::span<const EncodedPair> train,
                           std::span<const EncodedPair> valid, const TrainConfig& config,
                           const std::function<void(const BaselineRecord&)>& on_epoch) {
  config.validate();
  if (train.empty()) throw ContractError("train_baseline: empty training corpus");
  if (valid.empty()) valid = train;
  BaselineLog log;
  ParameterStore best = model.store;
  std::vector<double> history;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    BaselineRecord rec = train_baseline_epoch(model, train, config, epoch);
    rec.valid_nll = baseline_validation_nll(model, valid);
    log.records.push_back(rec);
    history.push_back(rec.valid_nll);
    const EarlyStop es = early_stop(history, config.patience);
    if (es.best + 1 == history.size()) best = model.store;
    log.best_epoch = es.best + 1;
    if (on_epoch) on_epoch(rec);
    if (es.stop) {
      log.stop_reason = "early-stop";
      break;
    }
  }
  if (!log.records.empty()) {
    if (log.stop_reason.empty()) log.stop_reason = "epoch-cap";
    copy_parameters(best, model.store);
  }
  return log;
}

std::vector<GeneratedResponse> generate_baseline(const BaselineState& net, std::span<const TokenId> post,
                                                 std::size_t k, std::size_t beam_tokens, std::size_t max_len) {
  if (k < 1) throw ContractError("generate_baseline: k must be >= 1");
  Graph g;
  const std::vector<double> ctx = encode(g, net.encoder, post).to_vector();
  const auto hyps = beam_decode(net.decoder, ctx, std::max(k, beam_tokens), max_len);
  std::vector<GeneratedResponse> out;
  for (const auto& h : hyps) {
    if (out.size() == k) break;
    out.push_back({Molecule{}, 0.0, TokenSeq(h.actions.begin(), h.actions.end()), h.score});
  }
  return out;
}

}  // namespace arm
