#pragma once

// Teacher and student networks.
//
// The teacher sees (post, response), samples molecules with its composer and
// is trained by REINFORCE using the student's response likelihood as reward.
// The student sees only the post; its composer is supervised by teacher
// molecules and its decoder is conditioned on the composed context.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "arm/autodiff.hpp"
#include "arm/composer.hpp"
#include "arm/seq_model.hpp"

namespace arm {

inline constexpr std::string_view kTeacherPrefix = "teacher.";
inline constexpr std::string_view kStudentPrefix = "student.";

struct ModelDims {
  std::size_t vocab = 0;
  std::size_t embed = 32;
  std::size_t hidden = 64;
  std::size_t atoms = 8;
};

struct TeacherState {
  Encoder post_encoder;
  Encoder response_encoder;
  AtomSet atoms;
  ComposerParams composer;  // context 2H

  static TeacherState create(ParameterStore& store, const ModelDims& dims);
  static TeacherState bind(ParameterStore& store, const ModelDims& dims);
};

struct StudentState {
  Encoder encoder;
  AtomSet atoms;
  ComposerParams composer;  // context H
  Decoder decoder;

  static StudentState create(ParameterStore& store, const ModelDims& dims);
  static StudentState bind(ParameterStore& store, const ModelDims& dims);
};

// ---- teacher -----------------------------------------------------------

// [encode_x(x); encode_y(y)], post first.
Value encode_pair(Graph& g, const TeacherState& teacher, std::span<const TokenId> post,
                  std::span<const TokenId> response);

// Rejection-samples up to `count` distinct molecules within `max_attempts`
// draws. The first draw is always kept.
std::vector<Molecule> sample_unique_molecules(const TeacherState& teacher, std::span<const double> ctx,
                                              std::size_t count, std::size_t max_atoms, std::size_t max_attempts,
                                              Rng& rng);

// r_i = (log p_i - min_j log p_j) / |y|.
std::vector<double> compute_rewards(std::span<const double> log_likelihoods, std::size_t response_length);

struct SampledItem {
  TokenSeq post;
  TokenSeq response;  // ends with EOS
  std::size_t num_responses = 1;  // |Y_x|
  std::vector<Molecule> molecules;
  std::vector<double> teacher_log_probs;     // log p(M | x, y) under the teacher
  std::vector<double> student_log_likelihoods;  // log p(y | x, M)
  std::vector<double> rewards;
};

// Surrogate -sum_i log pi(M_i) (r_i - b) / (items * molecules) with the mean
// reward of each item as its baseline b, differentiated into teacher
// parameter grads. Items with a single molecule contribute nothing. Returns
// the surrogate value.
double accumulate_teacher_gradient(const TeacherState& teacher, std::span<const SampledItem> batch,
                                   std::size_t max_atoms);

// Zeroes teacher grads, accumulates the surrogate gradient and applies one
// ADADELTA step to the "teacher." prefix only.
double reinforce_update(ParameterStore& store, const TeacherState& teacher, std::span<const SampledItem> batch,
                        std::size_t max_atoms, const AdadeltaOptions& options);

// ---- student -----------------------------------------------------------

Value student_context(Graph& g, const StudentState& student, std::span<const TokenId> post);
// G_M(c_s) with the student's atoms.
Value mechanism_context(const StudentState& student, const Value& c_s, const Molecule& molecule);
// log p(y | x, M).
Value response_likelihood(Graph& g, const StudentState& student, std::span<const TokenId> post,
                          const Molecule& molecule, std::span<const TokenId> response);
// Forward-only log p(y | x, M) for several molecules sharing one post encoding.
std::vector<double> response_likelihoods(const StudentState& student, std::span<const TokenId> post,
                                         std::span<const Molecule> molecules, std::span<const TokenId> response);

// p * (log p - log(1/n)) with p = exp(molecule_log_prob).
Value kl_to_uniform_term(const Value& molecule_log_prob, std::size_t num_responses);

struct StudentExample {
  TokenSeq post;
  TokenSeq response;
  Molecule molecule;
  std::size_t num_responses = 1;
};

struct StudentLossParts {
  double loss = 0.0;           // summed over the batch
  double mean_molecule_prob = 0.0;
};

// Negated objective  sum (1/|y|) log p(y|x,M) - KL  over the batch,
// differentiated into student parameter grads.
StudentLossParts accumulate_student_gradient(const StudentState& student, std::span<const StudentExample> batch,
                                             std::size_t max_atoms);

// Zeroes student grads, accumulates and applies one ADADELTA step to the
// "student." prefix only.
StudentLossParts student_update(ParameterStore& store, const StudentState& student,
                                std::span<const StudentExample> batch, std::size_t max_atoms,
                                const AdadeltaOptions& options);

}  // namespace arm
