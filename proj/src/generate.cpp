#include "arm/generate.hpp"

#include <algorithm>

namespace arm {

std::vector<GeneratedResponse> respond(const StudentState& student, std::span<const TokenId> post,
                                       const Molecule& molecule, std::size_t count, const GenerationOptions& options) {
  if (count < 1) throw ContractError("respond: count must be >= 1");
  Graph g;
  const Value c_s = student_context(g, student, post);
  const std::vector<double> ctx = mechanism_context(student, c_s, molecule).to_vector();
  const double mol_lp = molecule_log_prob(student.composer, c_s, molecule, options.max_atoms).item();
  const auto hyps = beam_decode(student.decoder, ctx, std::max(count, options.beam_tokens), options.max_len);
  std::vector<GeneratedResponse> out;
  for (const auto& h : hyps) {
    if (out.size() == count) break;
    out.push_back({molecule, mol_lp, TokenSeq(h.actions.begin(), h.actions.end()), h.score});
  }
  return out;
}

std::vector<GeneratedResponse> generate(const StudentState& student, std::span<const TokenId> post,
                                        const GenerationOptions& options) {
  if (options.L < 1) throw ContractError("generate: L must be >= 1");
  Graph g;
  const Value c_s = student_context(g, student, post);
  const auto molecules =
      beam_molecules(student.composer, c_s.to_vector(), options.L, options.max_atoms, options.beam_molecules);
  std::vector<GeneratedResponse> out;
  for (const auto& sm : molecules) {
    const std::vector<double> ctx = mechanism_context(student, c_s, sm.molecule).to_vector();
    const auto hyps = beam_decode(student.decoder, ctx, options.beam_tokens, options.max_len);
    if (hyps.empty()) continue;
    const auto& best = hyps.front();
    out.push_back({sm.molecule, sm.log_prob, TokenSeq(best.actions.begin(), best.actions.end()), best.score});
  }
  return out;
}

}  // namespace arm
