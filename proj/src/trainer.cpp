#include "arm/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <variant>

#include "json.hpp"

namespace arm {

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seed is stored as a size_t field");
using FieldRef = std::variant<std::size_t TrainConfig::*, double TrainConfig::*, std::string TrainConfig::*>;

struct Field {
  const char* name;
  FieldRef ref;
};

// Declaration order; also the order of config_to_text.
const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"batch_size", &TrainConfig::batch_size},
      {"epochs", &TrainConfig::epochs},
      {"k_t", &TrainConfig::k_t},
      {"k_max", &TrainConfig::k_max},
      {"max_attempts", &TrainConfig::max_attempts},
      {"L", &TrainConfig::L},
      {"beam_molecules", &TrainConfig::beam_molecules},
      {"beam_tokens", &TrainConfig::beam_tokens},
      {"embed_dim", &TrainConfig::embed_dim},
      {"hidden_dim", &TrainConfig::hidden_dim},
      {"num_atoms", &TrainConfig::num_atoms},
      {"rho", &TrainConfig::rho},
      {"eps", &TrainConfig::eps},
      {"patience", &TrainConfig::patience},
      {"seed", &TrainConfig::seed},
      {"init_range", &TrainConfig::init_range},
      {"max_response_len", &TrainConfig::max_response_len},
      {"vocab_size", &TrainConfig::vocab_size},
      {"corpus", &TrainConfig::corpus},
      {"valid_corpus", &TrainConfig::valid_corpus},
      {"vocab", &TrainConfig::vocab},
      {"checkpoint_dir", &TrainConfig::checkpoint_dir},
  };
  return table;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  T out{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
  return out;
}

constexpr std::uint64_t kStreamOrder = 1;
constexpr std::uint64_t kStreamSample = 2;
constexpr std::uint64_t kStreamValid = 3;

}  // namespace

void TrainConfig::validate() const {
  auto positive = [](const char* name, std::size_t v) {
    if (v < 1) throw ContractError(std::string("config: ") + name + " must be >= 1");
  };
  positive("batch_size", batch_size);
  positive("k_t", k_t);
  positive("k_max", k_max);
  positive("L", L);
  positive("beam_molecules", beam_molecules);
  positive("beam_tokens", beam_tokens);
  positive("embed_dim", embed_dim);
  positive("hidden_dim", hidden_dim);
  positive("num_atoms", num_atoms);
  positive("patience", patience);
  positive("max_response_len", max_response_len);
  if (max_attempts < k_t) throw ContractError("config: max_attempts must be >= k_t");
  if (vocab_size < kNumReserved + 1) throw ContractError("config: vocab_size must be >= 5");
  if (!(rho > 0.0 && rho < 1.0)) throw ContractError("config: rho must lie in (0,1)");
  if (!(eps > 0.0)) throw ContractError("config: eps must be positive");
  if (!(init_range > 0.0)) throw ContractError("config: init_range must be positive");
}

void set_config_value(TrainConfig& config, std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (key != f.name) continue;
    std::visit(
        [&](auto member) {
          using T = std::remove_reference_t<decltype(config.*member)>;
          if constexpr (std::is_same_v<T, std::string>)
            config.*member = std::string(value);
          else
            config.*member = parse_number<T>(key, value);
        },
        f.ref);
    return;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

TrainConfig parse_config(std::string_view text, const std::string& source) {
  TrainConfig config;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key=value");
    try {
      set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::string config_to_text(const TrainConfig& config) {
  std::ostringstream out;
  for (const auto& f : fields()) {
    out << f.name << '=';
    std::visit(
        [&](auto member) {
          using T = std::remove_reference_t<decltype(config.*member)>;
          if constexpr (std::is_same_v<T, double>)
            out << nlohmann::json(config.*member).dump();
          else
            out << config.*member;
        },
        f.ref);
    out << '\n';
  }
  return out.str();
}

// ---- parameters --------------------------------------------------------

bool is_bias_path(std::string_view path) {
  const auto dot = path.rfind('.');
  const std::string_view leaf = dot == std::string_view::npos ? path : path.substr(dot + 1);
  return leaf == "bias" || starts_with(leaf, "b_");
}

void init_params(ParameterStore& store, double range, Rng& rng) {
  if (!(range > 0.0)) throw ContractError("init_params: range must be positive");
  std::uniform_real_distribution<double> dist(-range, range);
  for (auto& [path, p] : store) {
    if (is_bias_path(path))
      std::fill(p.value.begin(), p.value.end(), 0.0);
    else
      for (auto& v : p.value) v = dist(rng);
    std::fill(p.sq_grad_avg.begin(), p.sq_grad_avg.end(), 0.0);
    std::fill(p.sq_update_avg.begin(), p.sq_update_avg.end(), 0.0);
  }
}

void copy_parameters(const ParameterStore& from, ParameterStore& to) {
  for (const auto& [path, src] : from) {
    if (!to.contains(path)) throw ContractError("copy_parameters: no parameter " + path);
    if (to.at(path).shape != src.shape)
      throw ShapeError("copy_parameters: " + path + " has shape " + shape_string(to.at(path).shape) + " vs " +
                       shape_string(src.shape));
  }
  for (const auto& [path, src] : from) {
    Parameter& dst = to.at(path);
    dst.value = src.value;
    dst.sq_grad_avg = src.sq_grad_avg;
    dst.sq_update_avg = src.sq_update_avg;
  }
}

ArmModel::ArmModel(const ModelDims& d)
    : dims(d), teacher(TeacherState::create(store, d)), student(StudentState::create(store, d)) {}

// ---- training pieces ---------------------------------------------------

std::vector<double> selection_probabilities(std::span<const double> log_probs) {
  if (log_probs.empty()) throw ContractError("selection_probabilities: empty molecule set");
  const double hi = *std::max_element(log_probs.begin(), log_probs.end());
  std::vector<double> p;
  p.reserve(log_probs.size());
  double z = 0.0;
  for (double lp : log_probs) z += (p.emplace_back(std::exp(lp - hi)));
  for (auto& v : p) v /= z;
  return p;
}

Molecule select_molecule_for_student(const SampledItem& item, Rng& rng) {
  if (item.molecules.empty()) throw ContractError("select_molecule_for_student: empty molecule set");
  if (item.teacher_log_probs.size() != item.molecules.size())
    throw ContractError("select_molecule_for_student: missing composer log-probs");
  if (item.molecules.size() == 1) return item.molecules.front();
  const auto p = selection_probabilities(item.teacher_log_probs);
  std::discrete_distribution<std::size_t> pick(p.begin(), p.end());
  return item.molecules[pick(rng)];
}

EarlyStop early_stop(std::span<const double> history, std::size_t patience) {
  if (history.empty()) throw ContractError("early_stop: empty history");
  if (patience < 1) throw ContractError("early_stop: patience must be >= 1");
  EarlyStop out;
  out.best = static_cast<std::size_t>(std::min_element(history.begin(), history.end()) - history.begin());
  if (history.size() <= patience) return out;
  out.stop = true;
  for (std::size_t i = history.size() - patience; i < history.size(); ++i)
    if (!(history[i] > history[i - 1])) out.stop = false;
  return out;
}

void TrainLog::append(const EpochRecord& record) {
  if (!records.empty() && record.epoch <= records.back().epoch)
    throw ContractError("TrainLog: epochs must be strictly increasing");
  records.push_back(record);
}

std::string serialize_record(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["updates"] = r.updates;
  j["teacher_reward"] = r.teacher_reward;
  j["teacher_loss"] = r.teacher_loss;
  j["student_loss"] = r.student_loss;
  j["valid_nll"] = r.valid_nll;
  j["mean_molecule_prob"] = r.mean_molecule_prob;
  j["molecule_prob_std"] = r.molecule_prob_std;
  return j.dump();
}

std::string TrainLog::serialize() const {
  std::string out;
  for (const auto& r : records) out += serialize_record(r) + "\n";
  if (!stop_reason.empty()) {
    nlohmann::ordered_json j;
    j["event"] = "stop";
    j["reason"] = stop_reason;
    j["epochs"] = records.size();
    j["best_epoch"] = best_epoch;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<Instance> flatten(std::span<const EncodedPair> pairs) {
  std::vector<Instance> out;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    for (std::size_t j = 0; j < pairs[i].responses.size(); ++j) out.push_back({i, j});
  return out;
}

Rng derive_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t b) {
  auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v); };
  auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(seed), hi(seed), lo(stream), hi(stream), lo(a), hi(a), lo(b), hi(b)};
  return Rng(seq);
}

EpochRecord train_epoch(ArmModel& model, std::span<const EncodedPair> train, const TrainConfig& config,
                        std::size_t epoch) {
  if (train.empty()) throw ContractError("train_epoch: empty corpus");
  std::vector<Instance> instances = flatten(train);
  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), 0);
  Rng order_rng = derive_rng(config.seed, kStreamOrder, epoch);
  std::shuffle(order.begin(), order.end(), order_rng);

  const TeacherState& teacher = model.teacher;
  const StudentState& student = model.student;
  const AdadeltaOptions opts = config.adadelta();

  EpochRecord rec;
  rec.epoch = epoch;
  std::size_t reward_count = 0;
  std::size_t example_count = 0;

  for (std::size_t start = 0, batch = 0; start < order.size(); start += config.batch_size, ++batch) {
    const std::size_t stop = std::min(order.size(), start + config.batch_size);
    try {
      std::vector<SampledItem> items;
      std::vector<Rng> rngs;
      for (std::size_t k = start; k < stop; ++k) {
        const Instance inst = instances[order[k]];
        const EncodedPair& pair = train[inst.pair];
        Rng rng = derive_rng(config.seed, kStreamSample, epoch, order[k]);
        SampledItem item;
        item.post = pair.post;
        item.response = pair.responses[inst.response];
        item.num_responses = pair.responses.size();
        Graph g;
        const Value ctx = encode_pair(g, teacher, item.post, item.response);
        const std::vector<double> ctx_data = ctx.to_vector();
        item.molecules =
            sample_unique_molecules(teacher, ctx_data, config.k_t, config.k_max, config.max_attempts, rng);
        for (const auto& m : item.molecules)
          item.teacher_log_probs.push_back(molecule_log_prob(teacher.composer, ctx, m, config.k_max).item());
        item.student_log_likelihoods = response_likelihoods(student, item.post, item.molecules, item.response);
        item.rewards = compute_rewards(item.student_log_likelihoods, scored_length(item.response));
        for (double r : item.rewards) rec.teacher_reward += r;
        reward_count += item.rewards.size();
        items.push_back(std::move(item));
        rngs.push_back(std::move(rng));
      }

      rec.teacher_loss += reinforce_update(model.store, teacher, items, config.k_max, opts);

      std::vector<StudentExample> examples;
      for (std::size_t i = 0; i < items.size(); ++i)
        examples.push_back({items[i].post, items[i].response, select_molecule_for_student(items[i], rngs[i]),
                            items[i].num_responses});
      const StudentLossParts parts = student_update(model.store, student, examples, config.k_max, opts);
      rec.student_loss += parts.loss;
      rec.mean_molecule_prob += parts.mean_molecule_prob * static_cast<double>(examples.size());
      example_count += examples.size();
      ++rec.updates;
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batch) + ": " + e.what());
    }
  }
  rec.teacher_reward /= static_cast<double>(std::max<std::size_t>(1, reward_count));
  rec.teacher_loss /= static_cast<double>(std::max<std::size_t>(1, rec.updates));
  rec.student_loss /= static_cast<double>(std::max<std::size_t>(1, example_count));
  rec.mean_molecule_prob /= static_cast<double>(std::max<std::size_t>(1, example_count));
  return rec;
}

double validation_nll(const ArmModel& model, std::span<const EncodedPair> valid, const TrainConfig& config) {
  const std::vector<Instance> instances = flatten(valid);
  if (instances.empty()) throw ContractError("validation_nll: empty validation set");
  double total = 0.0;
  for (std::size_t k = 0; k < instances.size(); ++k) {
    const EncodedPair& pair = valid[instances[k].pair];
    const TokenSeq& y = pair.responses[instances[k].response];
    Rng rng = derive_rng(config.seed, kStreamValid, k);
    Graph g;
    const Value ctx = encode_pair(g, model.teacher, pair.post, y);
    const auto mols = sample_unique_molecules(model.teacher, ctx.to_vector(), config.k_t, config.k_max,
                                              config.max_attempts, rng);
    std::size_t best = 0;
    double best_lp = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < mols.size(); ++i) {
      const double lp = molecule_log_prob(model.teacher.composer, ctx, mols[i], config.k_max).item();
      if (lp > best_lp) best_lp = lp, best = i;
    }
    Graph gs;
    const double ll = response_likelihood(gs, model.student, pair.post, mols[best], y).item();
    total += -ll / static_cast<double>(scored_length(y));
  }
  const double nll = total / static_cast<double>(instances.size());
  if (!std::isfinite(nll)) throw NumericError("validation: non-finite negative log-likelihood");
  return nll;
}

double molecule_prob_std(const ArmModel& model, std::span<const EncodedPair> pairs, const TrainConfig& config) {
  if (pairs.empty()) throw ContractError("molecule_prob_std: no posts");
  double total = 0.0;
  for (const auto& pair : pairs) {
    Graph g;
    const std::vector<double> c_s = student_context(g, model.student, pair.post).to_vector();
    const std::size_t n = pair.responses.size();
    const auto top = beam_molecules(model.student.composer, c_s, n, config.k_max, config.beam_molecules);
    double mean = 0.0;
    for (const auto& m : top) mean += std::exp(m.log_prob);
    mean /= static_cast<double>(top.size());
    double var = 0.0;
    for (const auto& m : top) var += (std::exp(m.log_prob) - mean) * (std::exp(m.log_prob) - mean);
    total += std::sqrt(var / static_cast<double>(top.size()));
  }
  return total / static_cast<double>(pairs.size());
}

TrainLog train(ArmModel& model, std::span<const EncodedPair> train_pairs, std::span<const EncodedPair> valid,
               const TrainConfig& config, const EpochCallback& on_epoch, const ValidationMetric& metric) {
  config.validate();
  if (train_pairs.empty()) throw ContractError("train: empty training corpus");
  if (valid.empty()) valid = train_pairs;
  TrainLog log;
  ParameterStore best = model.store;
  std::vector<double> history;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochRecord rec = train_epoch(model, train_pairs, config, epoch);
    rec.valid_nll = metric ? metric(model, epoch) : validation_nll(model, valid, config);
    rec.molecule_prob_std = molecule_prob_std(model, train_pairs, config);
    log.append(rec);
    history.push_back(rec.valid_nll);
    const EarlyStop es = early_stop(history, config.patience);
    if (es.best + 1 == history.size()) best = model.store;
    log.best_epoch = es.best + 1;
    if (on_epoch) on_epoch(rec);
    if (es.stop) {
      log.stop_reason = "early-stop";
      break;
    }
  }
  if (!log.records.empty()) {
    if (log.stop_reason.empty()) log.stop_reason = "epoch-cap";
    copy_parameters(best, model.store);
  }
  return log;
}

}  // namespace arm
