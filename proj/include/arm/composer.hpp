#pragma once

// Atom mechanisms, molecule composition and the composer policy.
//
// An atom i (1..N) is an embedding m_i and the transform g_i(c) = ReLU(c + m_i).
// A molecule is an ordered atom sequence; its transform applies the atoms
// left to right. The composer is a GRU over previously chosen atom embeddings
// conditioned on a context vector, with a softmax policy over N+1 actions
// where action 0 terminates the molecule.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "arm/autodiff.hpp"
#include "arm/rng.hpp"
#include "arm/seq_model.hpp"

namespace arm {

struct Molecule {
  std::vector<int> atoms;  // each in 1..N

  std::size_t size() const { return atoms.size(); }
  bool empty() const { return atoms.empty(); }

  // "24->10->22->3", or "[]" for the empty molecule.
  std::string to_string() const;
  static Molecule parse(std::string_view text);

  friend auto operator<=>(const Molecule&, const Molecule&) = default;
  friend bool operator==(const Molecule&, const Molecule&) = default;
};

struct AtomSet {
  Parameter* embeddings = nullptr;  // [N+1, H]; row 0 is the termination mechanism

  std::size_t num_atoms() const { return embeddings->shape[0] - 1; }
  std::size_t dim() const { return embeddings->shape[1]; }

  static AtomSet create(ParameterStore& store, const std::string& prefix, std::size_t num_atoms, std::size_t dim);
  static AtomSet bind(ParameterStore& store, const std::string& prefix, std::size_t num_atoms, std::size_t dim);
};

// ReLU(c + m_i). Index 0 (termination) is not a transform.
Value apply_atom(const AtomSet& atoms, int index, const Value& c);
// Applies the molecule's atoms in order; the empty molecule is the identity.
Value compose_molecule(const AtomSet& atoms, const Molecule& molecule, const Value& c);

struct ComposerParams {
  GruCell cell;                 // input [m_prev; ctx] (H + C) -> hidden
  Parameter* policy = nullptr;  // [N+1, hidden]
  AtomSet atoms;
  std::size_t context_dim = 0;

  std::size_t num_actions() const { return policy->shape[0]; }

  static ComposerParams create(ParameterStore& store, const std::string& prefix, const AtomSet& atoms,
                               std::size_t context_dim, std::size_t hidden_dim);
  static ComposerParams bind(ParameterStore& store, const std::string& prefix, const AtomSet& atoms,
                             std::size_t context_dim, std::size_t hidden_dim);
};

struct ComposerStep {
  Value hidden;
  Value log_policy;  // [N+1]
};

ComposerStep composer_step(const ComposerParams& params, const Value& h_prev, const Value& m_prev,
                           const Value& ctx);
// Zero hidden state and zero start embedding for the first step.
Value composer_initial_hidden(Graph& g, const ComposerParams& params);
Value composer_start_embedding(Graph& g, const ComposerParams& params);

// Sum of log policy over the molecule's atoms plus the terminating action.
// A molecule of exactly max_atoms atoms is truncated: no termination term.
Value molecule_log_prob(const ComposerParams& params, const Value& ctx, const Molecule& molecule,
                        std::size_t max_atoms);

// Draws actions from the policy until termination or max_atoms atoms.
Molecule sample_molecule(const ComposerParams& params, std::span<const double> ctx, Rng& rng,
                         std::size_t max_atoms);

struct ScoredMolecule {
  Molecule molecule;
  double log_prob = 0.0;
};

// Beam search over molecules (action space N+1, terminal action 0, at most
// max_atoms actions). Returns up to `count` distinct molecules in descending
// log-probability; `width` defaults to `count`.
std::vector<ScoredMolecule> beam_molecules(const ComposerParams& params, std::span<const double> ctx,
                                           std::size_t count, std::size_t max_atoms, std::size_t width = 0);

}  // namespace arm
