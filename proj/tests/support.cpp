#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace armtest {

using namespace arm;

double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-6});
}

namespace {

double eval_inputs(const InputFn& f, const std::vector<Input>& inputs) {
  Graph g;
  std::vector<Value> leaves;
  for (const auto& in : inputs) leaves.push_back(g.constant(in.shape, in.data));
  return f(g, leaves).item();
}

}  // namespace

double check_input_grads(const InputFn& f, const std::vector<Input>& inputs, double h) {
  std::vector<double> analytic;
  {
    Graph g;
    std::vector<Value> leaves;
    for (const auto& in : inputs) leaves.push_back(g.constant(in.shape, in.data));
    const Value loss = f(g, leaves);
    g.backward(loss);
    for (std::size_t k = 0; k < leaves.size(); ++k) {
      const auto gr = leaves[k].grad();
      for (std::size_t i = 0; i < inputs[k].data.size(); ++i) analytic.push_back(gr.empty() ? 0.0 : gr[i]);
    }
  }
  std::vector<double> numeric;
  std::vector<Input> work = inputs;
  for (std::size_t k = 0; k < work.size(); ++k)
    for (std::size_t i = 0; i < work[k].data.size(); ++i) {
      const double x = work[k].data[i];
      work[k].data[i] = x + h;
      const double up = eval_inputs(f, work);
      work[k].data[i] = x - h;
      const double down = eval_inputs(f, work);
      work[k].data[i] = x;
      numeric.push_back((up - down) / (2 * h));
    }
  return relative_error(analytic, numeric);
}

double check_param_grads(ParameterStore& store, const std::vector<std::string>& paths,
                         const std::function<void()>& analytic_fn, const ParamFn& value, double h) {
  store.zero_grad("");
  analytic_fn();
  std::vector<double> analytic;
  for (const auto& p : paths) {
    const auto& param = store.at(p);
    analytic.insert(analytic.end(), param.grad.begin(), param.grad.end());
  }
  std::vector<double> numeric;
  for (const auto& p : paths) {
    auto& param = store.at(p);
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double x = param.value[i];
      param.value[i] = x + h;
      const double up = value();
      param.value[i] = x - h;
      const double down = value();
      param.value[i] = x;
      numeric.push_back((up - down) / (2 * h));
    }
  }
  return relative_error(analytic, numeric);
}

void fill_uniform(ParameterStore& store, double range, Rng& rng) {
  std::uniform_real_distribution<double> u(-range, range);
  for (auto& [path, p] : store)
    for (double& v : p.value) v = u(rng);
}

std::vector<Molecule> enumerate_molecules(std::size_t num_atoms, std::size_t max_atoms) {
  std::vector<Molecule> out{Molecule{}};
  std::vector<Molecule> frontier{Molecule{}};
  for (std::size_t len = 1; len <= max_atoms; ++len) {
    std::vector<Molecule> next;
    for (const auto& m : frontier)
      for (std::size_t a = 1; a <= num_atoms; ++a) {
        Molecule e = m;
        e.atoms.push_back(static_cast<int>(a));
        next.push_back(e);
      }
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

std::vector<TokenSeq> enumerate_sequences(std::size_t vocab, std::size_t max_len) {
  std::vector<TokenSeq> out;
  std::vector<TokenSeq> frontier{TokenSeq{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<TokenSeq> next;
    for (const auto& s : frontier)
      for (std::size_t t = 0; t < vocab; ++t) {
        TokenSeq e = s;
        e.push_back(static_cast<TokenId>(t));
        if (static_cast<TokenId>(t) == kEos || len == max_len)
          out.push_back(e);
        else
          next.push_back(e);
      }
    frontier = std::move(next);
  }
  return out;
}

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> affine(const Parameter& w, const Parameter& b, const std::vector<double>& v) {
  const std::size_t rows = w.shape[0], cols = w.shape[1];
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = b.value[r];
    for (std::size_t c = 0; c < cols; ++c) s += w.value[r * cols + c] * v[c];
    out[r] = s;
  }
  return out;
}

}  // namespace

std::vector<double> reference_gru(const GruCell& cell, const std::vector<double>& h, const std::vector<double>& x) {
  std::vector<double> xh = x;
  xh.insert(xh.end(), h.begin(), h.end());
  auto z = affine(*cell.w_update, *cell.b_update, xh);
  auto r = affine(*cell.w_reset, *cell.b_reset, xh);
  std::vector<double> xrh = x;
  for (std::size_t i = 0; i < h.size(); ++i) xrh.push_back(sig(r[i]) * h[i]);
  auto n = affine(*cell.w_cand, *cell.b_cand, xrh);
  std::vector<double> out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double zi = sig(z[i]);
    out[i] = (1 - zi) * h[i] + zi * std::tanh(n[i]);
  }
  return out;
}

double reference_molecule_log_prob(const ComposerParams& params, const std::vector<double>& ctx, const Molecule& m,
                                   std::size_t max_atoms) {
  const std::size_t H = params.cell.hidden_dim;
  const std::size_t D = params.atoms.dim();
  const auto& table = params.atoms.embeddings->value;
  std::vector<double> h(H, 0.0), prev(D, 0.0);
  double total = 0.0;
  auto step = [&](std::size_t action) {
    std::vector<double> x = prev;
    x.insert(x.end(), ctx.begin(), ctx.end());
    h = reference_gru(params.cell, h, x);
    const auto& w = params.policy->value;
    const std::size_t A = params.policy->shape[0];
    std::vector<double> logits(A, 0.0);
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t j = 0; j < H; ++j) logits[a] += w[a * H + j] * h[j];
    double mx = *std::max_element(logits.begin(), logits.end()), z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    total += logits[action] - mx - std::log(z);
  };
  for (int a : m.atoms) {
    step(static_cast<std::size_t>(a));
    prev.assign(table.begin() + static_cast<long>(a * D), table.begin() + static_cast<long>((a + 1) * D));
  }
  if (m.size() < max_atoms) step(0);
  return total;
}

std::vector<double> uniform_vector(std::size_t n, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

void make_toy_composer(ToyComposer& toy, std::size_t num_atoms, std::size_t hidden, std::size_t ctx_dim,
                       double range, Rng& rng) {
  toy.atoms = AtomSet::create(toy.store, "toy.atoms", num_atoms, hidden);
  toy.composer = ComposerParams::create(toy.store, "toy.composer", toy.atoms, ctx_dim, hidden);
  fill_uniform(toy.store, range, rng);
  toy.ctx = uniform_vector(ctx_dim, -1.0, 1.0, rng);
}

void make_toy_decoder(ToyDecoder& toy, std::size_t vocab, std::size_t embed, std::size_t hidden, double range,
                      Rng& rng) {
  toy.decoder = Decoder::create(toy.store, "toy.decoder", vocab, embed, hidden);
  fill_uniform(toy.store, range, rng);
  toy.ctx = uniform_vector(hidden, -1.0, 1.0, rng);
}

double bandit_policy_mass(std::size_t updates, std::uint64_t seed) {
  ParameterStore store;
  const ModelDims dims{8, 4, 8, 2};
  const TeacherState teacher = TeacherState::create(store, dims);
  Rng rng(seed);
  fill_uniform(store, 0.01, rng);
  SampledItem item;
  item.post = {4, 5, 6};
  item.response = {7, kEos};
  item.molecules = {Molecule{{1}}, Molecule{{2}}};
  item.rewards = {1.0, 0.0};
  const std::vector<SampledItem> batch{item};
  for (std::size_t i = 0; i < updates; ++i) reinforce_update(store, teacher, batch, 4, AdadeltaOptions{});
  Graph g;
  const Value ctx = encode_pair(g, teacher, item.post, item.response);
  const ComposerStep s = composer_step(teacher.composer, composer_initial_hidden(g, teacher.composer),
                                       composer_start_embedding(g, teacher.composer), ctx);
  return std::exp(s.log_policy[1]);
}

namespace {

std::vector<double> rand_away_from_zero(std::size_t n, Rng& rng) {
  auto v = uniform_vector(n, 0.05, 1.5, rng);
  std::bernoulli_distribution flip(0.5);
  for (double& x : v)
    if (flip(rng)) x = -x;
  return v;
}

}  // namespace

Value weighted_sum(const Value& v) {
  // Fixed non-uniform weights so a constant-sum output still has a gradient.
  std::vector<double> w(v.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.7 * static_cast<double>(i % 5);
  return sum(mul(v, v.graph().constant(v.shape(), w)));
}

std::vector<GradientResult> primitive_gradient_suite(std::size_t points) {
  std::vector<GradientResult> results;
  auto check_op = [&](const char* name, auto make_case, const InputFn& f) {
    Rng rng(std::hash<std::string>{}(name));
    double worst = 0.0;
    for (std::size_t point = 0; point < points; ++point) worst = std::max(worst, check_input_grads(f, make_case(rng)));
    results.push_back({name, worst});
  };

  auto vec = [](std::size_t n) {
    return [n](Rng& rng) { return std::vector<Input>{{{n}, uniform_vector(n, -1.5, 1.5, rng)}}; };
  };
  auto two_vec = [](std::size_t n) {
    return [n](Rng& rng) {
      return std::vector<Input>{{{n}, uniform_vector(n, -1.5, 1.5, rng)},
                                {{n}, uniform_vector(n, -1.5, 1.5, rng)}};
    };
  };
  check_op("matmul mm",
           [](Rng& rng) {
             return std::vector<Input>{{{3, 4}, uniform_vector(12, -1, 1, rng)},
                                       {{4, 2}, uniform_vector(8, -1, 1, rng)}};
           },
           [](Graph&, const std::vector<Value>& v) { return weighted_sum(matmul(v[0], v[1])); });
  check_op("matmul mv",
           [](Rng& rng) {
             return std::vector<Input>{{{3, 5}, uniform_vector(15, -1, 1, rng)},
                                       {{5}, uniform_vector(5, -1, 1, rng)}};
           },
           [](Graph&, const std::vector<Value>& v) { return weighted_sum(matmul(v[0], v[1])); });
  check_op("add", two_vec(6), [](Graph&, const std::vector<Value>& v) { return weighted_sum(add(v[0], v[1])); });
  check_op("sub", two_vec(6), [](Graph&, const std::vector<Value>& v) { return weighted_sum(sub(v[0], v[1])); });
  check_op("mul", two_vec(6), [](Graph&, const std::vector<Value>& v) { return weighted_sum(mul(v[0], v[1])); });
  check_op("add_scalar", vec(5), [](Graph&, const std::vector<Value>& v) { return weighted_sum(add_scalar(v[0], 0.7)); });
  check_op("scale", vec(5), [](Graph&, const std::vector<Value>& v) { return weighted_sum(scale(v[0], -1.3)); });
  check_op("concat",
           [](Rng& rng) {
             return std::vector<Input>{{{2, 3}, uniform_vector(6, -1, 1, rng)},
                                       {{2, 2}, uniform_vector(4, -1, 1, rng)}};
           },
           [](Graph&, const std::vector<Value>& v) { return weighted_sum(concat(v[0], v[1])); });
  check_op("sigmoid", vec(6), [](Graph&, const std::vector<Value>& v) { return weighted_sum(sigmoid(v[0])); });
  check_op("tanh", vec(6), [](Graph&, const std::vector<Value>& v) { return weighted_sum(tanh(v[0])); });
  check_op("relu", [](Rng& rng) { return std::vector<Input>{{{7}, rand_away_from_zero(7, rng)}}; },
           [](Graph&, const std::vector<Value>& v) { return weighted_sum(relu(v[0])); });
  check_op("exp", vec(5), [](Graph&, const std::vector<Value>& v) { return weighted_sum(exp(v[0])); });
  check_op("log", [](Rng& rng) { return std::vector<Input>{{{5}, uniform_vector(5, 0.3, 3.0, rng)}}; },
           [](Graph&, const std::vector<Value>& v) { return weighted_sum(log(v[0])); });
  check_op("softmax", vec(6), [](Graph&, const std::vector<Value>& v) { return weighted_sum(softmax(v[0])); });
  check_op("softmax rows",
           [](Rng& rng) { return std::vector<Input>{{{3, 4}, uniform_vector(12, -2, 2, rng)}}; },
           [](Graph&, const std::vector<Value>& v) { return weighted_sum(softmax(v[0])); });
  check_op("log_softmax", vec(6), [](Graph&, const std::vector<Value>& v) { return weighted_sum(log_softmax(v[0])); });
  check_op("log_softmax rows",
           [](Rng& rng) { return std::vector<Input>{{{2, 5}, uniform_vector(10, -2, 2, rng)}}; },
           [](Graph&, const std::vector<Value>& v) { return weighted_sum(log_softmax(v[0])); });
  check_op("lookup",
           [](Rng& rng) { return std::vector<Input>{{{4, 3}, uniform_vector(12, -1, 1, rng)}}; },
           [](Graph&, const std::vector<Value>& v) { return weighted_sum(add(lookup(v[0], 2), lookup(v[0], 2))); });
  check_op("pick", vec(5), [](Graph&, const std::vector<Value>& v) { return scale(pick(v[0], 3), 2.5); });
  check_op("sum", vec(5), [](Graph&, const std::vector<Value>& v) { return scale(sum(mul(v[0], v[0])), 0.5); });
  check_op("mean", vec(5), [](Graph&, const std::vector<Value>& v) { return mean(exp(v[0])); });
  return results;
}

namespace {

struct ToyPair {
  ParameterStore store;
  TeacherState teacher;
  StudentState student;
  ToyPair(std::uint64_t seed) {
    const ModelDims d{8, 3, 4, 3};
    teacher = TeacherState::create(store, d);
    student = StudentState::create(store, d);
    Rng rng(seed);
    fill_uniform(store, 0.5, rng);
  }
};

}  // namespace

double surrogate_gradient_error(std::uint64_t point) {
  ToyPair toy(100 + point);
  Rng rng(point);
  const std::vector<SampledItem> batch{
      {{4, 5, 6}, {7, kEos}, 2, {Molecule{{1}}, Molecule{{2, 3}}, Molecule{}}, {}, {}, uniform_vector(3, 0, 1, rng)},
      {{5}, {4, 6, kEos}, 2, {Molecule{{3, 3}}, Molecule{{1, 2}}}, {}, {}, uniform_vector(2, 0, 1, rng)}};
  return check_param_grads(
      toy.store, toy.store.paths("teacher."), [&] { accumulate_teacher_gradient(toy.teacher, batch, 4); },
      [&] { return accumulate_teacher_gradient(toy.teacher, batch, 4); });
}

double student_objective_gradient_error(std::uint64_t point) {
  ToyPair toy(200 + point);
  const std::vector<StudentExample> batch{{{4, 5}, {6, 7, kEos}, Molecule{{1, 3}}, 2}, {{6}, {5, kEos}, Molecule{}, 3}};
  return check_param_grads(
      toy.store, toy.store.paths("student."), [&] { accumulate_student_gradient(toy.student, batch, 4); },
      [&] { return accumulate_student_gradient(toy.student, batch, 4).loss; });
}

}  // namespace armtest
