// arm: train, generate, evaluate and inspect the ARM mechanism-aware response model and
// its encoder-decoder baseline.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "arm/baseline.hpp"
#include "arm/checkpoint.hpp"
#include "arm/corpus.hpp"
#include "arm/generate.hpp"
#include "arm/metrics.hpp"
#include "arm/trainer.hpp"
#include "json.hpp"

#ifndef ARM_VERSION
#define ARM_VERSION "dev"
#endif

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace arm {
namespace {

enum Exit { kOk = 0, kUsage = 2, kNumeric = 3, kIo = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string corpus;
  std::string out;
  std::optional<std::size_t> L;
  std::optional<std::size_t> beam_molecules;
  std::optional<std::size_t> beam_tokens;
  std::string baseline;
  bool baseline_flag = false;
  // synth
  SyntheticSpec synth;
  // inspect
  std::size_t molecules = 25;
  std::size_t responses = 3;
  std::string stopwords;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

std::string checksum(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) h = (h ^ c) * 1099511628211ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ordered_json config_json(const TrainConfig& config) {
  ordered_json j;
  std::istringstream lines(config_to_text(config));
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    j[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return j;
}

ordered_json manifest(const std::string& command, const TrainConfig& config, const std::string& corpus_path,
                      const std::string& checkpoint) {
  ordered_json m;
  m["command"] = command;
  m["config"] = config_json(config);
  m["seed"] = config.seed;
  m["corpus_checksum"] = corpus_path.empty() ? "" : checksum(read_file(corpus_path));
  m["checkpoint"] = checkpoint;
  m["version"] = ARM_VERSION;
  return m;
}

TrainConfig resolve_config(const Options& o) {
  TrainConfig config = o.config.empty() ? TrainConfig{} : load_config(o.config);
  if (o.seed) config.seed = *o.seed;
  if (!o.corpus.empty()) config.corpus = o.corpus;
  if (o.L) config.L = *o.L;
  if (o.beam_molecules) config.beam_molecules = *o.beam_molecules;
  if (o.beam_tokens) config.beam_tokens = *o.beam_tokens;
  if (!o.out.empty()) config.checkpoint_dir = o.out;
  try {
    config.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  return config;
}

void require_file(const char* key, const std::string& path) {
  if (!path.empty() && !fs::is_regular_file(path))
    throw UsageError(std::string("'") + key + "': no such file " + path);
}

struct TrainingInputs {
  Vocab vocab;
  std::vector<EncodedPair> train;
  std::vector<EncodedPair> valid;
};

TrainingInputs training_inputs(const TrainConfig& config) {
  if (config.corpus.empty()) throw UsageError("no training corpus (set 'corpus' or pass --corpus)");
  const Corpus train = load_corpus(config.corpus);
  if (train.empty()) throw UsageError("training corpus " + config.corpus + " is empty");
  TrainingInputs in;
  in.vocab = config.vocab.empty() ? build_vocab(train, config.vocab_size) : Vocab::load(config.vocab);
  in.train = encode_corpus(in.vocab, train);
  if (!config.valid_corpus.empty()) in.valid = encode_corpus(in.vocab, load_corpus(config.valid_corpus));
  return in;
}

std::map<std::string, std::string> model_header(const std::string& kind, const TrainConfig& config,
                                                std::size_t vocab, std::size_t best_epoch) {
  return {{"kind", kind},
          {"vocab", std::to_string(vocab)},
          {"embed_dim", std::to_string(config.embed_dim)},
          {"hidden_dim", std::to_string(config.hidden_dim)},
          {"num_atoms", std::to_string(config.num_atoms)},
          {"k_max", std::to_string(config.k_max)},
          {"max_response_len", std::to_string(config.max_response_len)},
          {"seed", std::to_string(config.seed)},
          {"best_epoch", std::to_string(best_epoch)}};
}

std::size_t header_size(const Checkpoint& ck, const std::string& key) {
  const auto it = ck.header.find(key);
  if (it == ck.header.end()) throw FormatError("checkpoint header lacks '" + key + "'");
  try {
    return static_cast<std::size_t>(std::stoull(it->second));
  } catch (const std::exception&) {
    throw FormatError("checkpoint header '" + key + "' is not a number: " + it->second);
  }
}

std::string header_kind(const Checkpoint& ck) {
  const auto it = ck.header.find("kind");
  return it == ck.header.end() ? "" : it->second;
}

ModelDims checkpoint_dims(const Checkpoint& ck) {
  return {ck.vocab.size(), header_size(ck, "embed_dim"), header_size(ck, "hidden_dim"), header_size(ck, "num_atoms")};
}

std::string default_checkpoint(const TrainConfig& config, const Options& o, const char* name) {
  return o.checkpoint.empty() ? (fs::path(config.checkpoint_dir) / name).string() : o.checkpoint;
}

// ---- commands ----------------------------------------------------------

int cmd_synth(const Options& o) {
  if (o.out.empty()) throw UsageError("synth needs --out DIR");
  SyntheticSpec spec = o.synth;
  if (o.seed) spec.seed = *o.seed;
  SyntheticCorpus corpus;
  try {
    corpus = generate_synthetic(spec);
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  fs::create_directories(o.out);
  save_corpus(corpus.train, (fs::path(o.out) / "train.jsonl").string());
  save_corpus(corpus.valid, (fs::path(o.out) / "valid.jsonl").string());
  save_corpus(corpus.test, (fs::path(o.out) / "test.jsonl").string());
  std::cerr << "wrote " << corpus.train.size() << "/" << corpus.valid.size() << "/" << corpus.test.size()
            << " posts to " << o.out << "\n";
  return kOk;
}

int cmd_train(const Options& o) {
  const TrainConfig config = resolve_config(o);
  require_file("corpus", config.corpus);
  require_file("valid_corpus", config.valid_corpus);
  require_file("vocab", config.vocab);
  const std::string ckpt = default_checkpoint(config, o, "arm.ckpt");
  fs::create_directories(config.checkpoint_dir);
  const fs::path dir(config.checkpoint_dir);
  write_file((dir / "manifest.json").string(), manifest("train", config, config.corpus, ckpt).dump(2) + "\n");

  const TrainingInputs in = training_inputs(config);
  in.vocab.save((dir / "vocab.txt").string());
  ArmModel model(config.dims(in.vocab.size()));
  Rng rng = derive_rng(config.seed, 0);
  init_params(model.store, config.init_range, rng);

  const std::string log_path = (dir / "train_log.jsonl").string();
  std::ofstream log_out(log_path, std::ios::binary | std::ios::trunc);
  if (!log_out) throw IoError("cannot write " + log_path);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainLog log = train(model, in.train, in.valid, config, [&](const EpochRecord& r) {
    log_out << serialize_record(r) << "\n" << std::flush;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "epoch " << r.epoch << " valid_nll " << r.valid_nll << " (" << secs << " s)\n";
  });
  log_out.close();
  write_file(log_path, log.serialize());

  Checkpoint ck{model_header("arm", config, in.vocab.size(), log.best_epoch), in.vocab, model.store};
  save_checkpoint(ckpt, ck);
  if (!log.stop_reason.empty())
    std::cerr << "stopped: " << log.stop_reason << ", best epoch " << log.best_epoch << "\n";
  std::cerr << "checkpoint " << ckpt << "\n";
  return kOk;
}

int cmd_baseline(const Options& o) {
  const TrainConfig config = resolve_config(o);
  require_file("corpus", config.corpus);
  require_file("valid_corpus", config.valid_corpus);
  require_file("vocab", config.vocab);
  const std::string ckpt = default_checkpoint(config, o, "baseline.ckpt");
  fs::create_directories(config.checkpoint_dir);
  const fs::path dir(config.checkpoint_dir);
  write_file((dir / "baseline_manifest.json").string(),
             manifest("baseline", config, config.corpus, ckpt).dump(2) + "\n");

  const TrainingInputs in = training_inputs(config);
  BaselineModel model(config.dims(in.vocab.size()));
  Rng rng = derive_rng(config.seed, 0);
  init_params(model.store, config.init_range, rng);
  const BaselineLog log = train_baseline(model, in.train, in.valid, config, [](const BaselineRecord& r) {
    std::cerr << "epoch " << r.epoch << " valid_nll " << r.valid_nll << "\n";
  });
  write_file((dir / "baseline_log.jsonl").string(), log.serialize());
  save_checkpoint(ckpt, {model_header("baseline", config, in.vocab.size(), log.best_epoch), in.vocab, model.store});
  std::cerr << "checkpoint " << ckpt << "\n";
  return kOk;
}

// A loaded checkpoint with its network bound.
struct LoadedModel {
  Checkpoint ck;
  std::string kind;
  std::unique_ptr<ArmModel> arm;
  std::unique_ptr<BaselineModel> baseline;
  std::size_t k_max = 6;
  std::size_t max_len = 20;

  const Vocab& vocab() const { return ck.vocab; }
};

LoadedModel load_model(const std::string& path) {
  if (path.empty()) throw UsageError("no checkpoint (pass --checkpoint)");
  LoadedModel m;
  m.ck = load_checkpoint(path);
  m.kind = header_kind(m.ck);
  m.k_max = header_size(m.ck, "k_max");
  m.max_len = header_size(m.ck, "max_response_len");
  const ModelDims dims = checkpoint_dims(m.ck);
  if (m.kind == "arm") {
    m.arm = std::make_unique<ArmModel>(dims);
    restore_parameters(m.ck.store, m.arm->store);
  } else if (m.kind == "baseline") {
    m.baseline = std::make_unique<BaselineModel>(dims);
    restore_parameters(m.ck.store, m.baseline->store);
  } else {
    throw FormatError(path + ": unknown model kind '" + m.kind + "'");
  }
  return m;
}

GenerationOptions generation_options(const TrainConfig& config, const LoadedModel& m) {
  return {config.L, config.beam_molecules, config.beam_tokens, m.k_max, m.max_len};
}

std::vector<GeneratedResponse> run_generation(const LoadedModel& m, const TokenSeq& post,
                                              const GenerationOptions& go) {
  if (m.arm) return generate(m.arm->student, post, go);
  return generate_baseline(m.baseline->net, post, go.L, go.beam_tokens, go.max_len);
}

std::string text_of(const Vocab& vocab, const TokenSeq& ids) { return join_tokens(vocab.decode(ids)); }

class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary | std::ios::trunc);
      if (!file_) throw IoError("cannot write " + path);
    }
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }
  void line(const ordered_json& j) { stream() << j.dump() << "\n"; }

 private:
  std::ofstream file_;
};

int cmd_generate(const Options& o) {
  const TrainConfig config = resolve_config(o);
  if (o.corpus.empty()) throw UsageError("generate needs --corpus POSTS");
  Output out(o.out);
  out.line({{"manifest", manifest("generate", config, o.corpus, o.checkpoint)}});
  const LoadedModel m = load_model(o.checkpoint);
  if (o.baseline_flag && !m.baseline) throw UsageError("--baseline given but " + o.checkpoint + " holds an ARM model");
  const auto posts = load_posts(o.corpus);
  const GenerationOptions go = generation_options(config, m);
  for (const auto& words : posts) {
    const TokenSeq post = m.vocab().encode(words);
    const auto gens = run_generation(m, post, go);
    for (const auto& g : gens) {
      ordered_json r;
      r["post"] = join_tokens(words);
      r["molecule"] = m.arm ? g.molecule.to_string() : "";
      r["molecule_logp"] = g.molecule_logp;
      r["response"] = text_of(m.vocab(), g.response);
      r["response_logp"] = g.response_logp;
      out.line(r);
    }
    if (gens.size() < go.L) {
      ordered_json w;
      w["post"] = join_tokens(words);
      w["warning"] = "only " + std::to_string(gens.size()) + " of " + std::to_string(go.L) +
                     " distinct candidates reachable";
      out.line(w);
    }
  }
  return kOk;
}

struct PostScores {
  double bleu4 = 0.0;
  double diversity = 0.0;
  double coverage = 0.0;
  std::size_t n_distinct = 0;
  std::size_t n_matched = 0;
};

PostScores score_post(const std::vector<Sentence>& generated, const std::vector<Sentence>& refs) {
  PostScores s;
  for (const auto& g : generated) s.bleu4 += bleu4(g, refs);
  s.bleu4 /= static_cast<double>(generated.size());
  s.diversity = diversity_score(generated);
  s.coverage = coverage_at_l(generated, refs);
  s.n_distinct = count_distinct(generated);
  s.n_matched = count_matched_distinct(generated, refs);
  return s;
}

void evaluate_model(Output& out, const std::string& label, const LoadedModel& m, const Corpus& test,
                    const GenerationOptions& go) {
  PostScores total;
  for (const auto& pair : test) {
    const auto gens = run_generation(m, m.vocab().encode(pair.post), go);
    std::vector<Sentence> generated;
    for (const auto& g : gens) generated.push_back(m.vocab().decode(g.response));
    const PostScores s = generated.empty() ? PostScores{} : score_post(generated, pair.responses);
    ordered_json r;
    r["model"] = label;
    r["post"] = join_tokens(pair.post);
    r["bleu4"] = s.bleu4;
    r["diversity"] = s.diversity;
    r["coverage"] = s.coverage;
    r["n_distinct"] = s.n_distinct;
    r["n_matched"] = s.n_matched;
    out.line(r);
    total.bleu4 += s.bleu4;
    total.diversity += s.diversity;
    total.coverage += s.coverage;
    total.n_distinct += s.n_distinct;
    total.n_matched += s.n_matched;
  }
  const double n = static_cast<double>(test.size());
  ordered_json a;
  a["model"] = label;
  a["aggregate"] = true;
  a["posts"] = test.size();
  a["bleu4"] = total.bleu4 / n;
  a["diversity"] = total.diversity / n;
  a["coverage"] = total.coverage / n;
  a["n_distinct"] = static_cast<double>(total.n_distinct) / n;
  a["n_matched"] = static_cast<double>(total.n_matched) / n;
  out.line(a);
}

int cmd_eval(const Options& o) {
  const TrainConfig config = resolve_config(o);
  if (o.corpus.empty()) throw UsageError("eval needs --corpus TEST");
  const Corpus test = load_corpus(o.corpus);
  if (test.empty()) throw UsageError("test corpus " + o.corpus + " is empty");
  Output out(o.out);
  out.line({{"manifest", manifest("eval", config, o.corpus, o.checkpoint)}});
  const LoadedModel m = load_model(o.checkpoint);
  evaluate_model(out, m.kind, m, test, generation_options(config, m));
  if (!o.baseline.empty()) {
    const LoadedModel b = load_model(o.baseline);
    evaluate_model(out, b.kind, b, test, generation_options(config, b));
  }
  return kOk;
}

std::set<std::string> load_stopwords(const std::string& path) {
  std::set<std::string> words;
  if (path.empty()) return words;
  for (const auto& w : split_tokens(read_file(path))) words.insert(w);
  return words;
}

int cmd_inspect(const Options& o) {
  const TrainConfig config = resolve_config(o);
  if (o.corpus.empty()) throw UsageError("inspect needs --corpus POSTS");
  if (o.molecules < 1 || o.responses < 1) throw UsageError("--molecules and --responses must be >= 1");
  Output out(o.out);
  out.line({{"manifest", manifest("inspect", config, o.corpus, o.checkpoint)}});
  const LoadedModel m = load_model(o.checkpoint);
  if (!m.arm) throw UsageError("inspect needs an ARM checkpoint");
  const auto posts = load_posts(o.corpus);
  GenerationOptions go = generation_options(config, m);
  go.L = o.molecules;

  std::vector<GenerationRecord> records;
  std::map<int, std::size_t> usage;
  for (std::size_t a = 1; a <= m.arm->dims.atoms; ++a) usage[static_cast<int>(a)] = 0;
  std::size_t molecule_count = 0, atom_total = 0;
  for (const auto& words : posts) {
    const TokenSeq post = m.vocab().encode(words);
    Graph g;
    const auto c_s = student_context(g, m.arm->student, post).to_vector();
    const auto mols = beam_molecules(m.arm->student.composer, c_s, go.L, go.max_atoms, go.beam_molecules);
    for (const auto& sm : mols) {
      ++molecule_count;
      atom_total += sm.molecule.size();
      for (int a : sm.molecule.atoms) ++usage[a];
      for (const auto& r : respond(m.arm->student, post, sm.molecule, o.responses, go))
        records.push_back({sm.molecule, m.vocab().decode(r.response)});
    }
  }
  const KeywordTable table = keyword_table(records, m.arm->dims.atoms, 0.5, load_stopwords(o.stopwords));
  for (const auto& [atom, count] : usage) {
    ordered_json r;
    r["atom"] = atom;
    r["usage"] = count;
    const auto sup = table.support.find(atom);
    r["responses"] = sup == table.support.end() ? 0 : sup->second;
    ordered_json kws = ordered_json::array();
    if (const auto it = table.keywords.find(atom); it != table.keywords.end())
      for (const auto& k : it->second) kws.push_back({{"word", k.word}, {"p", k.prob}});
    r["keywords"] = kws;
    out.line(r);
  }
  for (int atom : table.omitted) {
    ordered_json n;
    n["notice"] = "atom " + std::to_string(atom) + " occurs in no generated molecule";
    out.line(n);
  }
  ordered_json s;
  s["summary"] = true;
  s["posts"] = posts.size();
  s["molecules_per_post"] = o.molecules;
  s["responses_per_molecule"] = o.responses;
  s["molecules"] = molecule_count;
  s["responses"] = records.size();
  s["mean_molecule_length"] = molecule_count ? static_cast<double>(atom_total) / molecule_count : 0.0;
  out.line(s);
  return kOk;
}

}  // namespace
}  // namespace arm

int main(int argc, char** argv) {
  using namespace arm;
  CLI::App app{"ARM mechanism-aware response generation: training, two-stage generation and evaluation"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "flat key=value training config");
    c->add_option("--seed", o.seed, "random seed (overrides the config)");
    c->add_option("--checkpoint", o.checkpoint, "checkpoint path");
    c->add_option("--corpus", o.corpus, "corpus or posts file (JSON lines)");
    c->add_option("--out", o.out, "output directory (train, baseline, synth) or file");
    c->add_option("-L", o.L, "molecules per post");
    c->add_option("--beam-molecules", o.beam_molecules, "molecule beam width");
    c->add_option("--beam-tokens", o.beam_tokens, "token beam width");
  };

  auto* synth = app.add_subcommand("synth", "write a synthetic 1-to-n corpus (train/valid/test)");
  synth->add_option("--seed", o.seed, "generator seed");
  synth->add_option("--out", o.out, "output directory")->required();
  synth->add_option("--posts", o.synth.num_posts, "training posts");
  synth->add_option("--valid-posts", o.synth.num_valid_posts, "validation posts");
  synth->add_option("--test-posts", o.synth.num_test_posts, "test posts");
  synth->add_option("--responses-min", o.synth.responses_min, "fewest responses per post");
  synth->add_option("--responses-max", o.synth.responses_max, "most responses per post");
  synth->add_option("--shared-rate", o.synth.shared_fragment_rate, "probability a response carries the shared clause");
  synth->add_option("--vocab-size", o.synth.vocab_size, "vocabulary size including reserved tokens");

  auto* train = app.add_subcommand("train", "train ARM; writes the best-epoch checkpoint and the training log");
  common(train);
  auto* baseline = app.add_subcommand("baseline", "train the encoder-decoder baseline");
  common(baseline);
  auto* gen = app.add_subcommand("generate", "two-stage generation for every post of --corpus");
  common(gen);
  gen->add_flag("--baseline", o.baseline_flag, "treat --checkpoint as a baseline checkpoint");
  auto* eval = app.add_subcommand("eval", "BLEU-4, diversity and coverage on a test corpus");
  common(eval);
  eval->add_option("--baseline", o.baseline, "also evaluate this baseline checkpoint");
  auto* inspect = app.add_subcommand("inspect", "keyword tables and atom usage over a generation sweep");
  common(inspect);
  inspect->add_option("--molecules", o.molecules, "molecules per post")->capture_default_str();
  inspect->add_option("--responses", o.responses, "responses per molecule")->capture_default_str();
  inspect->add_option("--stopwords", o.stopwords, "whitespace-separated stopword file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*train) return cmd_train(o);
    if (*baseline) return cmd_baseline(o);
    if (*gen) return cmd_generate(o);
    if (*eval) return cmd_eval(o);
    if (*inspect) return cmd_inspect(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "i/o failure: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "i/o failure: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o failure: " << e.what() << "\n";
    return kIo;
  } catch (const ContractError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kUsage;
}
