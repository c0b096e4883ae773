#include "arm/networks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace arm {

namespace {

template <bool Create>
TeacherState make_teacher(ParameterStore& store, const ModelDims& d) {
  TeacherState t;
  if constexpr (Create) {
    t.post_encoder = Encoder::create(store, "teacher.post_encoder", d.vocab, d.embed, d.hidden);
    t.response_encoder = Encoder::create(store, "teacher.response_encoder", d.vocab, d.embed, d.hidden);
    t.atoms = AtomSet::create(store, "teacher.atoms", d.atoms, d.hidden);
    t.composer = ComposerParams::create(store, "teacher.composer", t.atoms, 2 * d.hidden, d.hidden);
  } else {
    t.post_encoder = Encoder::bind(store, "teacher.post_encoder", d.vocab, d.embed, d.hidden);
    t.response_encoder = Encoder::bind(store, "teacher.response_encoder", d.vocab, d.embed, d.hidden);
    t.atoms = AtomSet::bind(store, "teacher.atoms", d.atoms, d.hidden);
    t.composer = ComposerParams::bind(store, "teacher.composer", t.atoms, 2 * d.hidden, d.hidden);
  }
  return t;
}

template <bool Create>
StudentState make_student(ParameterStore& store, const ModelDims& d) {
  StudentState s;
  if constexpr (Create) {
    s.encoder = Encoder::create(store, "student.encoder", d.vocab, d.embed, d.hidden);
    s.atoms = AtomSet::create(store, "student.atoms", d.atoms, d.hidden);
    s.composer = ComposerParams::create(store, "student.composer", s.atoms, d.hidden, d.hidden);
    s.decoder = Decoder::create(store, "student.decoder", d.vocab, d.embed, d.hidden);
  } else {
    s.encoder = Encoder::bind(store, "student.encoder", d.vocab, d.embed, d.hidden);
    s.atoms = AtomSet::bind(store, "student.atoms", d.atoms, d.hidden);
    s.composer = ComposerParams::bind(store, "student.composer", s.atoms, d.hidden, d.hidden);
    s.decoder = Decoder::bind(store, "student.decoder", d.vocab, d.embed, d.hidden);
  }
  return s;
}

}  // namespace

TeacherState TeacherState::create(ParameterStore& store, const ModelDims& dims) {
  return make_teacher<true>(store, dims);
}
TeacherState TeacherState::bind(ParameterStore& store, const ModelDims& dims) {
  return make_teacher<false>(store, dims);
}
StudentState StudentState::create(ParameterStore& store, const ModelDims& dims) {
  return make_student<true>(store, dims);
}
StudentState StudentState::bind(ParameterStore& store, const ModelDims& dims) {
  return make_student<false>(store, dims);
}

// ---- teacher -----------------------------------------------------------

Value encode_pair(Graph& g, const TeacherState& teacher, std::span<const TokenId> post,
                  std::span<const TokenId> response) {
  return concat(encode(g, teacher.post_encoder, post), encode(g, teacher.response_encoder, response));
}

std::vector<Molecule> sample_unique_molecules(const TeacherState& teacher, std::span<const double> ctx,
                                              std::size_t count, std::size_t max_atoms, std::size_t max_attempts,
                                              Rng& rng) {
  if (count < 1) throw ContractError("sample_unique_molecules: count must be >= 1");
  if (max_attempts < count) throw ContractError("sample_unique_molecules: max_attempts must be >= count");
  std::vector<Molecule> out;
  for (std::size_t attempt = 0; attempt < max_attempts && out.size() < count; ++attempt) {
    Molecule m = sample_molecule(teacher.composer, ctx, rng, max_atoms);
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(std::move(m));
  }
  return out;
}

std::vector<double> compute_rewards(std::span<const double> log_likelihoods, std::size_t response_length) {
  if (log_likelihoods.empty()) throw ContractError("compute_rewards: empty likelihood set");
  if (response_length < 1) throw ContractError("compute_rewards: response length must be >= 1");
  const double lo = *std::min_element(log_likelihoods.begin(), log_likelihoods.end());
  std::vector<double> rewards;
  rewards.reserve(log_likelihoods.size());
  for (double l : log_likelihoods) rewards.push_back((l - lo) / static_cast<double>(response_length));
  return rewards;
}

double accumulate_teacher_gradient(const TeacherState& teacher, std::span<const SampledItem> batch,
                                   std::size_t max_atoms) {
  double total = 0.0;
  for (const auto& item : batch) {
    const std::size_t k = item.molecules.size();
    if (item.rewards.size() != k) throw ContractError("reinforce: rewards not computed for every molecule");
    if (k < 2) continue;
    double baseline = 0.0;
    for (double r : item.rewards) baseline += r;
    baseline /= static_cast<double>(k);

    Graph g;
    const Value ctx = encode_pair(g, teacher, item.post, item.response);
    std::vector<Value> terms;
    terms.reserve(k);
    const double norm = 1.0 / static_cast<double>(batch.size() * k);
    for (std::size_t i = 0; i < k; ++i) {
      const double advantage = item.rewards[i] - baseline;
      terms.push_back(scale(molecule_log_prob(teacher.composer, ctx, item.molecules[i], max_atoms), -advantage * norm));
    }
    const Value loss = sum(concat(terms));
    if (!std::isfinite(loss.item())) throw NumericError("reinforce: non-finite surrogate loss");
    g.backward(loss);
    g.accumulate_param_grads();
    total += loss.item();
  }
  return total;
}

double reinforce_update(ParameterStore& store, const TeacherState& teacher, std::span<const SampledItem> batch,
                        std::size_t max_atoms, const AdadeltaOptions& options) {
  store.zero_grad(kTeacherPrefix);
  const double loss = accumulate_teacher_gradient(teacher, batch, max_atoms);
  adadelta_step(store, kTeacherPrefix, options);
  return loss;
}

// ---- student -----------------------------------------------------------

Value student_context(Graph& g, const StudentState& student, std::span<const TokenId> post) {
  return encode(g, student.encoder, post);
}

Value mechanism_context(const StudentState& student, const Value& c_s, const Molecule& molecule) {
  return compose_molecule(student.atoms, molecule, c_s);
}

Value response_likelihood(Graph& g, const StudentState& student, std::span<const TokenId> post,
                          const Molecule& molecule, std::span<const TokenId> response) {
  const Value c = mechanism_context(student, student_context(g, student, post), molecule);
  return response_log_likelihood(g, student.decoder, c, response);
}

std::vector<double> response_likelihoods(const StudentState& student, std::span<const TokenId> post,
                                         std::span<const Molecule> molecules, std::span<const TokenId> response) {
  Graph g;
  const Value c_s = student_context(g, student, post);
  std::vector<double> out;
  out.reserve(molecules.size());
  for (const auto& m : molecules)
    out.push_back(response_log_likelihood(g, student.decoder, mechanism_context(student, c_s, m), response).item());
  return out;
}

Value kl_to_uniform_term(const Value& molecule_log_prob, std::size_t num_responses) {
  if (num_responses < 1) throw ContractError("kl_to_uniform_term: |Y_x| must be >= 1");
  const Value p = exp(molecule_log_prob);
  return mul(p, add_scalar(molecule_log_prob, std::log(static_cast<double>(num_responses))));
}

StudentLossParts accumulate_student_gradient(const StudentState& student, std::span<const StudentExample> batch,
                                             std::size_t max_atoms) {
  StudentLossParts parts;
  for (const auto& ex : batch) {
    Graph g;
    const Value c_s = student_context(g, student, ex.post);
    const Value loglik =
        response_log_likelihood(g, student.decoder, mechanism_context(student, c_s, ex.molecule), ex.response);
    const Value mol_lp = molecule_log_prob(student.composer, c_s, ex.molecule, max_atoms);
    const double inv_len = 1.0 / static_cast<double>(scored_length(ex.response));
    const Value loss = add(scale(loglik, -inv_len), kl_to_uniform_term(mol_lp, ex.num_responses));
    if (!std::isfinite(loss.item())) throw NumericError("student: non-finite loss");
    g.backward(loss);
    g.accumulate_param_grads();
    parts.loss += loss.item();
    parts.mean_molecule_prob += std::exp(mol_lp.item());
  }
  if (!batch.empty()) parts.mean_molecule_prob /= static_cast<double>(batch.size());
  return parts;
}

StudentLossParts student_update(ParameterStore& store, const StudentState& student,
                                std::span<const StudentExample> batch, std::size_t max_atoms,
                                const AdadeltaOptions& options) {
  store.zero_grad(kStudentPrefix);
  auto parts = accumulate_student_gradient(student, batch, max_atoms);
  adadelta_step(store, kStudentPrefix, options);
  return parts;
}

}  // namespace arm
