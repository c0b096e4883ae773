#pragma once

// Two-stage generation: beam search over molecules by p(M|x), then token
// beam search over p(y|x,M) for each molecule.

#include <cstddef>
#include <span>
#include <vector>

#include "arm/composer.hpp"
#include "arm/networks.hpp"
#include "arm/seq_model.hpp"

namespace arm {

struct GenerationOptions {
  std::size_t L = 4;
  std::size_t beam_molecules = 8;
  std::size_t beam_tokens = 8;
  std::size_t max_atoms = 6;
  std::size_t max_len = 20;
};

struct GeneratedResponse {
  Molecule molecule;
  double molecule_logp = 0.0;
  TokenSeq response;  // ends with EOS unless the beam hit max_len
  double response_logp = 0.0;
};

// Up to L molecules in descending p(M|x) with the best response of each.
// Fewer come back when fewer distinct molecules are reachable.
std::vector<GeneratedResponse> generate(const StudentState& student, std::span<const TokenId> post,
                                        const GenerationOptions& options);

// The `count` best responses under a fixed molecule.
std::vector<GeneratedResponse> respond(const StudentState& student, std::span<const TokenId> post,
                                       const Molecule& molecule, std::size_t count, const GenerationOptions& options);

}  // namespace arm
