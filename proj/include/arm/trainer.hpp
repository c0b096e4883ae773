#pragma once

// Alternating teacher/student training, validation and early stopping.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "arm/autodiff.hpp"
#include "arm/composer.hpp"
#include "arm/corpus.hpp"
#include "arm/networks.hpp"
#include "arm/rng.hpp"

namespace arm {

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 200;
  std::size_t k_t = 4;           // molecules sampled per pair by the teacher
  std::size_t k_max = 6;         // longest molecule
  std::size_t max_attempts = 40;
  std::size_t L = 4;             // molecules per post at generation time
  std::size_t beam_molecules = 8;
  std::size_t beam_tokens = 8;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t num_atoms = 8;
  double rho = 0.95;
  double eps = 1e-6;
  std::size_t patience = 7;
  std::uint64_t seed = 1;
  double init_range = 0.01;
  std::size_t max_response_len = 20;
  std::size_t vocab_size = 4000;
  std::string corpus;
  std::string valid_corpus;
  std::string vocab;
  std::string checkpoint_dir = ".";

  // Throws ContractError naming the offending field.
  void validate() const;
  AdadeltaOptions adadelta() const { return {rho, eps}; }
  ModelDims dims(std::size_t vocab) const { return {vocab, embed_dim, hidden_dim, num_atoms}; }
};

// Sets one field from its textual value. Unknown keys and unparsable values
// throw ConfigError.
void set_config_value(TrainConfig& config, std::string_view key, std::string_view value);
// Flat "key = value" lines; '#' starts a comment.
TrainConfig parse_config(std::string_view text, const std::string& source = "<string>");
TrainConfig load_config(const std::string& path);
// Every field as "key=value" lines in declaration order.
std::string config_to_text(const TrainConfig& config);

// ---- parameters --------------------------------------------------------

// Weights uniform on [-range, range], biases zero. Parameters are visited in
// path order so the result depends only on the store layout and the seed.
void init_params(ParameterStore& store, double range, Rng& rng);
bool is_bias_path(std::string_view path);

// Copies values and accumulators of every parameter of `from` into the
// same-path parameter of `to`. Shapes must agree.
void copy_parameters(const ParameterStore& from, ParameterStore& to);

struct ArmModel {
  ModelDims dims;
  ParameterStore store;
  TeacherState teacher;
  StudentState student;

  explicit ArmModel(const ModelDims& dims);
  ArmModel(const ArmModel&) = delete;
  ArmModel& operator=(const ArmModel&) = delete;
};

// ---- training pieces ---------------------------------------------------

// exp(log p) renormalized over the sampled set.
std::vector<double> selection_probabilities(std::span<const double> log_probs);
Molecule select_molecule_for_student(const SampledItem& item, Rng& rng);

struct EarlyStop {
  bool stop = false;
  std::size_t best = 0;  // argmin, earliest on ties
};

// stop iff the last `patience` consecutive deltas are all strict increases.
EarlyStop early_stop(std::span<const double> history, std::size_t patience = 7);

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t updates = 0;  // batches
  double teacher_reward = 0.0;
  double teacher_loss = 0.0;
  double student_loss = 0.0;
  double valid_nll = 0.0;
  double mean_molecule_prob = 0.0;
  double molecule_prob_std = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> records;
  std::string stop_reason;  // "early-stop", "epoch-cap" or empty
  std::size_t best_epoch = 0;  // 1-based, 0 when no epoch ran

  void append(const EpochRecord& record);
  // One JSON object per line; stable field names, no wall time.
  std::string serialize() const;
};

std::string serialize_record(const EpochRecord& record);

// One flattened (post, response) training instance.
struct Instance {
  std::size_t pair = 0;
  std::size_t response = 0;
};

std::vector<Instance> flatten(std::span<const EncodedPair> pairs);

// Independent generator for (seed, stream, a, b).
Rng derive_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t a = 0, std::uint64_t b = 0);

// One epoch of per-batch alternating updates: teacher sampling, read-only
// student scoring, REINFORCE step on "teacher.", molecule selection, student
// step on "student.". Fills every EpochRecord field except the validation
// ones.
EpochRecord train_epoch(ArmModel& model, std::span<const EncodedPair> train, const TrainConfig& config,
                        std::size_t epoch);

// Mean over validation instances of -(1/|y|) log p(y | x, M*) where M* is
// the teacher's most probable molecule among its unique samples.
double validation_nll(const ArmModel& model, std::span<const EncodedPair> valid, const TrainConfig& config);

// Mean over posts of the population standard deviation of p(M|x) across the
// post's top-|Y_x| student molecules.
double molecule_prob_std(const ArmModel& model, std::span<const EncodedPair> pairs, const TrainConfig& config);

using EpochCallback = std::function<void(const EpochRecord&)>;
// Replaces validation_nll as the early-stop metric when set.
using ValidationMetric = std::function<double(const ArmModel&, std::size_t epoch)>;

// Runs to early stop or the epoch cap; on return `model` holds the
// best-epoch parameters (the initial ones when no epoch ran).
TrainLog train(ArmModel& model, std::span<const EncodedPair> train, std::span<const EncodedPair> valid,
               const TrainConfig& config, const EpochCallback& on_epoch = {},
               const ValidationMetric& metric = {});

}  // namespace arm
