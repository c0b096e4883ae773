#include "arm/composer.hpp"

#include <charconv>

namespace arm {

std::string Molecule::to_string() const {
  if (atoms.empty()) return "[]";
  std::string out;
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    if (i) out += "->";
    out += std::to_string(atoms[i]);
  }
  return out;
}

Molecule Molecule::parse(std::string_view text) {
  Molecule m;
  if (text == "[]") return m;
  std::size_t pos = 0;
  while (true) {
    const auto arrow = text.find("->", pos);
    const auto part = text.substr(pos, arrow == std::string_view::npos ? std::string_view::npos : arrow - pos);
    int v = 0;
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc{} || ptr != part.data() + part.size() || v < 1)
      throw FormatError("invalid molecule '" + std::string(text) + "'");
    m.atoms.push_back(v);
    if (arrow == std::string_view::npos) break;
    pos = arrow + 2;
  }
  return m;
}

namespace {

Parameter* bind_checked(ParameterStore& store, const std::string& path, const Shape& shape) {
  Parameter& p = store.at(path);
  if (p.shape != shape)
    throw ShapeError("parameter " + path + " has shape " + shape_string(p.shape) + ", expected " +
                     shape_string(shape));
  return &p;
}

}  // namespace

AtomSet AtomSet::create(ParameterStore& store, const std::string& prefix, std::size_t num_atoms, std::size_t dim) {
  if (num_atoms < 1) throw ContractError("atom set needs at least one atom");
  return AtomSet{&store.create(prefix + ".embeddings", {num_atoms + 1, dim})};
}

AtomSet AtomSet::bind(ParameterStore& store, const std::string& prefix, std::size_t num_atoms, std::size_t dim) {
  return AtomSet{bind_checked(store, prefix + ".embeddings", {num_atoms + 1, dim})};
}

Value apply_atom(const AtomSet& atoms, int index, const Value& c) {
  if (index < 1 || static_cast<std::size_t>(index) > atoms.num_atoms())
    throw IndexError("atom index " + std::to_string(index) + " outside 1.." + std::to_string(atoms.num_atoms()));
  if (c.shape() != Shape{atoms.dim()})
    throw ContractError("apply_atom: context shape " + shape_string(c.shape()) + " does not match atom dim " +
                        std::to_string(atoms.dim()));
  Graph& g = c.graph();
  return relu(add(c, lookup(g.param(*atoms.embeddings), static_cast<std::size_t>(index))));
}

Value compose_molecule(const AtomSet& atoms, const Molecule& molecule, const Value& c) {
  Value out = c;
  for (int i : molecule.atoms) out = apply_atom(atoms, i, out);
  return out;
}

ComposerParams ComposerParams::create(ParameterStore& store, const std::string& prefix, const AtomSet& atoms,
                                      std::size_t context_dim, std::size_t hidden_dim) {
  ComposerParams p;
  p.atoms = atoms;
  p.context_dim = context_dim;
  p.cell = GruCell::create(store, prefix + ".gru", atoms.dim() + context_dim, hidden_dim);
  p.policy = &store.create(prefix + ".policy", {atoms.num_atoms() + 1, hidden_dim});
  return p;
}

ComposerParams ComposerParams::bind(ParameterStore& store, const std::string& prefix, const AtomSet& atoms,
                                    std::size_t context_dim, std::size_t hidden_dim) {
  ComposerParams p;
  p.atoms = atoms;
  p.context_dim = context_dim;
  p.cell = GruCell::bind(store, prefix + ".gru", atoms.dim() + context_dim, hidden_dim);
  p.policy = bind_checked(store, prefix + ".policy", {atoms.num_atoms() + 1, hidden_dim});
  return p;
}

ComposerStep composer_step(const ComposerParams& params, const Value& h_prev, const Value& m_prev,
                           const Value& ctx) {
  if (ctx.shape() != Shape{params.context_dim})
    throw ContractError("composer_step: context shape " + shape_string(ctx.shape()) + ", expected " +
                        shape_string({params.context_dim}));
  if (m_prev.shape() != Shape{params.atoms.dim()})
    throw ContractError("composer_step: mechanism embedding shape " + shape_string(m_prev.shape()));
  Graph& g = h_prev.graph();
  Value h = gru_step(params.cell, h_prev, concat(m_prev, ctx));
  Value logits = matmul(g.param(*params.policy), h);
  return {h, log_softmax(logits)};
}

Value composer_initial_hidden(Graph& g, const ComposerParams& params) { return g.zeros({params.cell.hidden_dim}); }

Value composer_start_embedding(Graph& g, const ComposerParams& params) { return g.zeros({params.atoms.dim()}); }

Value molecule_log_prob(const ComposerParams& params, const Value& ctx, const Molecule& molecule,
                        std::size_t max_atoms) {
  if (molecule.size() > max_atoms)
    throw ContractError("molecule_log_prob: molecule of " + std::to_string(molecule.size()) +
                        " atoms exceeds maximum " + std::to_string(max_atoms));
  Graph& g = ctx.graph();
  const Value table = g.param(*params.atoms.embeddings);
  Value h = composer_initial_hidden(g, params);
  Value m = composer_start_embedding(g, params);
  std::vector<Value> terms;
  auto step_to = [&](std::size_t action) {
    if (action >= params.num_actions())
      throw IndexError("atom index " + std::to_string(action) + " outside 1.." +
                       std::to_string(params.atoms.num_atoms()));
    ComposerStep s = composer_step(params, h, m, ctx);
    terms.push_back(pick(s.log_policy, action));
    h = s.hidden;
  };
  for (int a : molecule.atoms) {
    if (a < 1) throw IndexError("atom index " + std::to_string(a) + " is not an atom");
    step_to(static_cast<std::size_t>(a));
    m = lookup(table, static_cast<std::size_t>(a));
  }
  if (molecule.size() < max_atoms) step_to(0);
  if (terms.empty()) return g.scalar(0.0);
  return sum(concat(terms));
}

Molecule sample_molecule(const ComposerParams& params, std::span<const double> ctx, Rng& rng,
                         std::size_t max_atoms) {
  if (max_atoms < 1) throw ContractError("sample_molecule: max_atoms must be >= 1");
  Graph g;
  const Value c = g.constant(ctx);
  const Value table = g.param(*params.atoms.embeddings);
  Value h = composer_initial_hidden(g, params);
  Value m = composer_start_embedding(g, params);
  Molecule out;
  while (out.size() < max_atoms) {
    ComposerStep s = composer_step(params, h, m, c);
    std::vector<double> probs;
    probs.reserve(params.num_actions());
    for (double lp : s.log_policy.data()) probs.push_back(std::exp(lp));
    std::discrete_distribution<int> pick_action(probs.begin(), probs.end());
    const int a = pick_action(rng);
    if (a == 0) break;
    out.atoms.push_back(a);
    h = s.hidden;
    m = lookup(table, static_cast<std::size_t>(a));
  }
  return out;
}

namespace {

struct ComposerBeamState {
  Value hidden;
  Value mechanism;
  Value log_policy;
};

struct ComposerBeamModel {
  const ComposerParams& params;
  Graph graph;
  Value ctx;
  Value table;

  ComposerBeamModel(const ComposerParams& p, std::span<const double> context) : params(p) {
    ctx = graph.constant(context);
    table = graph.param(*params.atoms.embeddings);
  }

  ComposerBeamState make(const Value& h_prev, const Value& m) {
    ComposerStep s = composer_step(params, h_prev, m, ctx);
    return {s.hidden, m, s.log_policy};
  }

  std::vector<double> scores(const ComposerBeamState& s) { return s.log_policy.to_vector(); }
  ComposerBeamState advance(const ComposerBeamState& s, int action) {
    return make(s.hidden, lookup(table, static_cast<std::size_t>(action)));
  }
};

}  // namespace

std::vector<ScoredMolecule> beam_molecules(const ComposerParams& params, std::span<const double> ctx,
                                           std::size_t count, std::size_t max_atoms, std::size_t width) {
  if (count < 1) throw ContractError("beam_molecules: count must be >= 1");
  if (width == 0) width = count;
  width = std::max(width, count);
  ComposerBeamModel model(params, ctx);
  ComposerBeamState start = model.make(composer_initial_hidden(model.graph, params),
                                       composer_start_embedding(model.graph, params));
  auto hyps = beam_search(model, start, width, max_atoms, 0);
  std::vector<ScoredMolecule> out;
  for (auto& h : hyps) {
    if (out.size() == count) break;
    ScoredMolecule sm;
    for (int a : h.actions)
      if (a != 0) sm.molecule.atoms.push_back(a);
    sm.log_prob = h.score;
    out.push_back(std::move(sm));
  }
  return out;
}

}  // namespace arm
