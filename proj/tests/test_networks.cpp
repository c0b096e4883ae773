#include <algorithm>
#include <cmath>
#include <set>

#include "arm/errors.hpp"
#include "arm/networks.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace arm;

namespace {

const ModelDims kToy{8, 3, 4, 3};

struct Toy {
  ParameterStore store;
  TeacherState teacher;
  StudentState student;
  explicit Toy(double range, std::uint64_t seed, const ModelDims& d = kToy) {
    teacher = TeacherState::create(store, d);
    student = StudentState::create(store, d);
    Rng rng(seed);
    armtest::fill_uniform(store, range, rng);
  }
};

std::vector<double> teacher_ctx(const Toy& toy, const TokenSeq& x, const TokenSeq& y) {
  Graph g;
  return encode_pair(g, toy.teacher, x, y).to_vector();
}

}  // namespace

TEST_CASE("parameter ownership") {
  Toy toy(0.01, 1);
  std::set<std::string> teacher, student;
  for (const auto& p : toy.store.paths("teacher.")) teacher.insert(p);
  for (const auto& p : toy.store.paths("student.")) student.insert(p);
  CHECK(teacher.size() + student.size() == toy.store.size());
  CHECK(toy.teacher.composer.context_dim == 2 * kToy.hidden);
  CHECK(toy.student.composer.context_dim == kToy.hidden);
  CHECK(toy.teacher.post_encoder.embedding != toy.teacher.response_encoder.embedding);
  CHECK(toy.teacher.atoms.num_atoms() == toy.student.atoms.num_atoms());

  ParameterStore other = toy.store;
  const StudentState bound = StudentState::bind(other, kToy);
  CHECK(bound.decoder.projection == &other.at("student.decoder.projection"));
}

TEST_CASE("encode_pair") {
  Toy toy(0.0, 1);
  const auto c = teacher_ctx(toy, {4, 5}, {6, kEos});
  CHECK(c.size() == 2 * kToy.hidden);
  for (double v : c) CHECK(v == 0.0);
  Graph g;
  CHECK_THROWS_AS(encode_pair(g, toy.teacher, TokenSeq{}, TokenSeq{6, kEos}), ContractError);

  Toy rnd(0.5, 2);
  const auto xy = teacher_ctx(rnd, {4, 5}, {6, 7, kEos});
  const auto yx = teacher_ctx(rnd, {6, 7, kEos}, {4, 5});
  CHECK(xy != yx);
}

TEST_CASE("sample_unique_molecules") {
  SUBCASE("deterministic policy returns one molecule") {
    Toy toy(0.01, 3);
    auto& pol = toy.teacher.composer.policy->value;
    std::fill(pol.begin(), pol.end(), 0.0);
    std::fill(pol.begin(), pol.begin() + static_cast<long>(kToy.hidden), 1e4);
    std::fill(toy.teacher.composer.cell.b_update->value.begin(), toy.teacher.composer.cell.b_update->value.end(), 50.0);
    std::fill(toy.teacher.composer.cell.b_cand->value.begin(), toy.teacher.composer.cell.b_cand->value.end(), 50.0);
    const auto ctx = teacher_ctx(toy, {4}, {5, kEos});
    Rng rng(1);
    const auto ms = sample_unique_molecules(toy.teacher, ctx, 4, 6, 40, rng);
    CHECK(ms.size() == 1);
  }
  SUBCASE("uniform policy over 8 atoms gives 4 distinct molecules") {
    Toy toy(0.01, 4, ModelDims{8, 3, 4, 8});
    auto& pol = toy.teacher.composer.policy->value;
    std::fill(pol.begin(), pol.end(), 0.0);
    const auto ctx = teacher_ctx(toy, {4}, {5, kEos});
    int full = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed);
      const auto ms = sample_unique_molecules(toy.teacher, ctx, 4, 6, 40, rng);
      std::set<Molecule> uniq(ms.begin(), ms.end());
      CHECK(uniq.size() == ms.size());
      full += ms.size() == 4;
    }
    CHECK(full == 100);
  }
  SUBCASE("errors") {
    Toy toy(0.01, 5);
    const auto ctx = teacher_ctx(toy, {4}, {5, kEos});
    Rng rng(1);
    CHECK_THROWS_AS(sample_unique_molecules(toy.teacher, ctx, 0, 6, 40, rng), ContractError);
    CHECK_THROWS_AS(sample_unique_molecules(toy.teacher, ctx, 4, 6, 3, rng), ContractError);
  }
}

TEST_CASE("compute_rewards examples") {
  const std::vector<double> two{-2.0, -5.0};
  CHECK(compute_rewards(two, 2) == std::vector<double>{1.5, 0.0});
  const std::vector<double> one{-3.3};
  CHECK(compute_rewards(one, 4) == std::vector<double>{0.0});
  const std::vector<double> a{-1, -2, -3}, b{6, 5, 4};
  CHECK(compute_rewards(a, 3) == compute_rewards(b, 3));
  CHECK_THROWS_AS(compute_rewards(std::vector<double>{}, 3), ContractError);
  CHECK_THROWS_AS(compute_rewards(two, 0), ContractError);
}

TEST_CASE("reward properties on random sets") {
  Rng rng(41);
  std::uniform_int_distribution<std::size_t> size(1, 8), len(1, 20);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto ll = armtest::uniform_vector(size(rng), -50, 0, rng);
    const std::size_t n = len(rng);
    const auto r = compute_rewards(ll, n);
    CHECK(*std::min_element(r.begin(), r.end()) == 0.0);
    for (double v : r) CHECK(v >= 0.0);
    if (ll.size() == 1) CHECK(r.front() == 0.0);
    std::vector<double> shifted = ll;
    const double c = armtest::uniform_vector(1, -10, 10, rng)[0];
    for (double& v : shifted) v += c;
    const auto rs = compute_rewards(shifted, n);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(rs[i] - r[i]) < 1e-12);
  }
}

TEST_CASE("reinforce") {
  SUBCASE("equal rewards leave the teacher unchanged") {
    Toy toy(0.1, 6);
    SampledItem item{{4, 5}, {6, kEos}, 2, {Molecule{{1}}, Molecule{{2, 3}}}, {}, {}, {0.4, 0.4}};
    const std::vector<SampledItem> batch{item};
    toy.store.zero_grad("teacher.");
    accumulate_teacher_gradient(toy.teacher, batch, 6);
    for (const auto& p : toy.store.paths("teacher."))
      for (double gval : toy.store.at(p).grad) CHECK(gval == 0.0);
    const auto before = toy.store.fingerprint("teacher.");
    reinforce_update(toy.store, toy.teacher, batch, 6, {});
    CHECK(toy.store.fingerprint("teacher.") == before);
  }
  SUBCASE("singleton items contribute nothing") {
    Toy toy(0.1, 7);
    SampledItem item{{4, 5}, {6, kEos}, 1, {Molecule{{1}}}, {}, {}, {0.0}};
    const std::vector<SampledItem> batch{item};
    toy.store.zero_grad("teacher.");
    CHECK(accumulate_teacher_gradient(toy.teacher, batch, 6) == 0.0);
  }
  SUBCASE("teacher step leaves the student bit-identical") {
    Toy toy(0.1, 8);
    SampledItem item{{4, 5}, {6, kEos}, 2, {Molecule{{1}}, Molecule{{2}}}, {}, {}, {1.0, 0.0}};
    const auto before = toy.store.fingerprint("student.");
    const auto teacher_before = toy.store.fingerprint("teacher.");
    reinforce_update(toy.store, toy.teacher, std::vector<SampledItem>{item}, 6, {});
    CHECK(toy.store.fingerprint("student.") == before);
    CHECK(toy.store.fingerprint("teacher.") != teacher_before);
  }
  SUBCASE("missing rewards") {
    Toy toy(0.1, 9);
    SampledItem item{{4}, {6, kEos}, 1, {Molecule{{1}}, Molecule{{2}}}, {}, {}, {}};
    CHECK_THROWS_AS(accumulate_teacher_gradient(toy.teacher, std::vector<SampledItem>{item}, 6), ContractError);
  }
}

TEST_CASE("bandit convergence") { CHECK(armtest::bandit_policy_mass(200, 1) > 0.9); }

TEST_CASE("surrogate gradient check") {
  for (std::uint64_t point = 0; point < 20; ++point) CHECK(armtest::surrogate_gradient_error(point) < 1e-4);
}

TEST_CASE("student context and likelihood") {
  Toy toy(0.5, 10);
  Graph g;
  const Value c = student_context(g, toy.student, TokenSeq{4, 5});
  CHECK(mechanism_context(toy.student, c, Molecule{}).to_vector() == c.to_vector());
  for (double v : mechanism_context(toy.student, c, Molecule{{1, 2}}).to_vector()) CHECK(v >= 0.0);
  CHECK_THROWS_AS(mechanism_context(toy.student, c, Molecule{{4}}), IndexError);

  std::fill(toy.student.decoder.projection->value.begin(), toy.student.decoder.projection->value.end(), 0.0);
  std::fill(toy.student.decoder.bias->value.begin(), toy.student.decoder.bias->value.end(), 0.0);
  for (const Molecule& m : {Molecule{}, Molecule{{1}}, Molecule{{3, 2, 1}}})
    CHECK(response_likelihood(g, toy.student, TokenSeq{4, 5}, m, TokenSeq{6, 7, kEos}).item() ==
          doctest::Approx(3 * std::log(1.0 / 8)));
}

TEST_CASE("response likelihoods match the graph version") {
  Toy toy(0.5, 11);
  const std::vector<Molecule> ms{Molecule{}, Molecule{{2}}, Molecule{{1, 3}}};
  const auto batch = response_likelihoods(toy.student, TokenSeq{4, 5}, ms, TokenSeq{6, kEos});
  for (std::size_t i = 0; i < ms.size(); ++i) {
    Graph g;
    CHECK(batch[i] == response_likelihood(g, toy.student, TokenSeq{4, 5}, ms[i], TokenSeq{6, kEos}).item());
  }
}

TEST_CASE("kl_to_uniform_term") {
  Graph g;
  CHECK(std::abs(kl_to_uniform_term(g.scalar(std::log(0.25)), 4).item()) < 1e-15);
  CHECK(kl_to_uniform_term(g.scalar(std::log(0.8)), 2).item() == doctest::Approx(0.8 * std::log(1.6)));
  CHECK(kl_to_uniform_term(g.scalar(std::log(0.8)), 2).item() == doctest::Approx(0.376).epsilon(1e-3));
  CHECK_THROWS_AS(kl_to_uniform_term(g.scalar(-1.0), 0), ContractError);
  Rng rng(12);
  for (int i = 0; i < 200; ++i) {
    const double p = armtest::uniform_vector(1, 1e-6, 1.0, rng)[0];
    const std::size_t n = 1 + static_cast<std::size_t>(i % 7);
    const double t = kl_to_uniform_term(g.scalar(std::log(p)), n).item();
    // p log(p n) is minimized at p = 1/(e n).
    CHECK(t >= -1.0 / (std::exp(1.0) * static_cast<double>(n)) - 1e-15);
    CHECK((t == 0.0) == (std::abs(p * static_cast<double>(n) - 1.0) < 1e-15));
  }
}

TEST_CASE("student objective") {
  SUBCASE("zero KL reduces to the likelihood term") {
    Toy toy(0.5, 13);
    auto& pol = toy.student.composer.policy->value;
    std::fill(pol.begin(), pol.end(), 0.0);
    const std::vector<StudentExample> batch{{{4}, {6, 7, kEos}, Molecule{}, 4}, {{5, 6}, {7, kEos}, Molecule{}, 4}};
    const auto parts = accumulate_student_gradient(toy.student, batch, 6);
    double expected = 0.0;
    for (const auto& ex : batch) {
      Graph g;
      expected -= response_likelihood(g, toy.student, ex.post, ex.molecule, ex.response).item() /
                  static_cast<double>(ex.response.size());
    }
    CHECK(std::abs(parts.loss - expected) < 1e-12);
    CHECK(parts.mean_molecule_prob == doctest::Approx(0.25));
  }
  SUBCASE("gradient check over every student parameter") {
    for (std::uint64_t point = 0; point < 20; ++point) CHECK(armtest::student_objective_gradient_error(point) < 1e-4);
  }
  SUBCASE("likelihood gradient reaches the atom embeddings") {
    for (std::uint64_t point = 0; point < 20; ++point) {
      Toy toy(0.5, 300 + point);
      const Molecule m{{2, 1, 2}};
      auto loss = [&](const StudentState& s, Graph& g) { return response_likelihood(g, s, TokenSeq{4, 5}, m, TokenSeq{6, kEos}); };
      const double err = armtest::check_param_grads(
          toy.store, {"student.atoms.embeddings"},
          [&] {
            Graph g;
            g.backward(loss(toy.student, g));
            g.accumulate_param_grads();
          },
          [&] {
            Graph g;
            return loss(toy.student, g).item();
          });
      CHECK(err < 1e-4);
    }
  }
  SUBCASE("student step leaves the teacher bit-identical") {
    Toy toy(0.1, 14);
    const auto before = toy.store.fingerprint("teacher.");
    student_update(toy.store, toy.student, std::vector<StudentExample>{{{4}, {6, kEos}, Molecule{{1}}, 2}}, 6, {});
    CHECK(toy.store.fingerprint("teacher.") == before);
  }
}

TEST_CASE("student overfits one example") {
  Toy toy(0.01, 15, ModelDims{8, 8, 16, 3});
  const StudentExample ex{{4, 5}, {6, 7, kEos}, Molecule{{2}}, 1};
  for (int i = 0; i < 500; ++i) student_update(toy.store, toy.student, std::vector<StudentExample>{ex}, 6, {});
  Graph g;
  const double ll = response_likelihood(g, toy.student, ex.post, ex.molecule, ex.response).item();
  CHECK(ll / 3 > std::log(0.9));
}
