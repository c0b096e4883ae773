#pragma once

// Plain encoder-decoder baseline trained on flattened (post, response) pairs
// with the same encoder, decoder and beam search code as the student.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "arm/corpus.hpp"
#include "arm/generate.hpp"
#include "arm/networks.hpp"
#include "arm/trainer.hpp"

namespace arm {

inline constexpr std::string_view kBaselinePrefix = "baseline.";

struct BaselineState {
  Encoder encoder;
  Decoder decoder;

  static BaselineState create(ParameterStore& store, const ModelDims& dims);
  static BaselineState bind(ParameterStore& store, const ModelDims& dims);
};

struct BaselineModel {
  ModelDims dims;
  ParameterStore store;
  BaselineState net;

  explicit BaselineModel(const ModelDims& dims);
  BaselineModel(const BaselineModel&) = delete;
  BaselineModel& operator=(const BaselineModel&) = delete;
};

// log p(y | x) with context = encode(x).
Value baseline_log_likelihood(Graph& g, const BaselineState& net, std::span<const TokenId> post,
                              std::span<const TokenId> response);

struct BaselineExample {
  TokenSeq post;
  TokenSeq response;
};

// Zeroes grads, accumulates sum of -(1/|y|) log p(y|x) over the batch and
// applies one ADADELTA step. Returns the summed loss.
double baseline_update(ParameterStore& store, const BaselineState& net, std::span<const BaselineExample> batch,
                       const AdadeltaOptions& options);

struct BaselineRecord {
  std::size_t epoch = 0;
  std::size_t updates = 0;
  double train_loss = 0.0;
  double valid_nll = 0.0;
};

struct BaselineLog {
  std::vector<BaselineRecord> records;
  std::string stop_reason;
  std::size_t best_epoch = 0;

  std::string serialize() const;
};

std::string serialize_record(const BaselineRecord& record);

// Mean over validation instances of -(1/|y|) log p(y|x).
double baseline_validation_nll(const BaselineModel& model, std::span<const EncodedPair> valid);

BaselineRecord train_baseline_epoch(BaselineModel& model, std::span<const EncodedPair> train,
                                    const TrainConfig& config, std::size_t epoch);

// Same early-stop and best-epoch rules as ARM training.
BaselineLog train_baseline(BaselineModel& model, std::span<const EncodedPair> train,
                           std::span<const EncodedPair> valid, const TrainConfig& config,
                           const std::function<void(const BaselineRecord&)>& on_epoch = {});

// Single-stage token beam; the top-K responses, molecule left empty.
std::vector<GeneratedResponse> generate_baseline(const BaselineState& net, std::span<const TokenId> post,
                                                 std::size_t k, std::size_t beam_tokens, std::size_t max_len);

}  // namespace arm
