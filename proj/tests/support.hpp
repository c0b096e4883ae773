#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance runner.

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "arm/autodiff.hpp"
#include "arm/composer.hpp"
#include "arm/networks.hpp"
#include "arm/rng.hpp"
#include "arm/seq_model.hpp"

namespace armtest {

// ||a - n|| / max(||a||, ||n||, 1e-6)
double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric);

struct Input {
  arm::Shape shape;
  std::vector<double> data;
};

using InputFn = std::function<arm::Value(arm::Graph&, const std::vector<arm::Value>&)>;
using ParamFn = std::function<double()>;

// Analytic gradient of a scalar function of constant leaves against central
// differences. Returns the relative error over all inputs together.
double check_input_grads(const InputFn& f, const std::vector<Input>& inputs, double h = 1e-5);

// `analytic` fills Parameter::grad for the listed paths; `value` recomputes
// the loss. Every entry of every listed parameter is perturbed.
double check_param_grads(arm::ParameterStore& store, const std::vector<std::string>& paths,
                         const std::function<void()>& analytic, const ParamFn& value, double h = 1e-5);

void fill_uniform(arm::ParameterStore& store, double range, arm::Rng& rng);

// All molecules over atoms 1..n with at most max_atoms atoms.
std::vector<arm::Molecule> enumerate_molecules(std::size_t num_atoms, std::size_t max_atoms);

// All token sequences a decoder beam can finish with: ending in EOS, or
// reaching max_len without it.
std::vector<arm::TokenSeq> enumerate_sequences(std::size_t vocab, std::size_t max_len);

// Plain-loop GRU step on row-major weights, for comparison with gru_step.
std::vector<double> reference_gru(const arm::GruCell& cell, const std::vector<double>& h,
                                  const std::vector<double>& x);

// Plain-loop p(M|x) from the composer parameters.
double reference_molecule_log_prob(const arm::ComposerParams& params, const std::vector<double>& ctx,
                                   const arm::Molecule& m, std::size_t max_atoms);

struct ToyComposer {
  arm::ParameterStore store;
  arm::AtomSet atoms;
  arm::ComposerParams composer;
  std::vector<double> ctx;
};

// Composer with N atoms, atom dim H and context dim C, weights U(-range, range).
void make_toy_composer(ToyComposer& toy, std::size_t num_atoms, std::size_t hidden, std::size_t ctx_dim,
                       double range, arm::Rng& rng);

struct ToyDecoder {
  arm::ParameterStore store;
  arm::Decoder decoder;
  std::vector<double> ctx;
};

void make_toy_decoder(ToyDecoder& toy, std::size_t vocab, std::size_t embed, std::size_t hidden, double range,
                      arm::Rng& rng);

std::vector<double> uniform_vector(std::size_t n, double lo, double hi, arm::Rng& rng);

// Bandit: teacher trained by REINFORCE with rewards fixed at {1, 0} for
// molecules {[1], [2]}. Returns the step-1 policy mass on atom 1 after
// `updates` ADADELTA steps.
double bandit_policy_mass(std::size_t updates, std::uint64_t seed);

// Sum of v weighted by fixed non-uniform coefficients.
arm::Value weighted_sum(const arm::Value& v);

struct GradientResult {
  std::string name;
  double max_error = 0.0;
};

// Every autodiff primitive at `points` seeded random inputs; worst relative
// error per primitive.
std::vector<GradientResult> primitive_gradient_suite(std::size_t points = 20);

// Relative gradient error at one seeded point of the REINFORCE surrogate with
// fixed rewards (all teacher parameters) and of the student objective (all
// student parameters).
double surrogate_gradient_error(std::uint64_t point);
double student_objective_gradient_error(std::uint64_t point);

}  // namespace armtest
