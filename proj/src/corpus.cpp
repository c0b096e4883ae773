#include "arm/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "arm/rng.hpp"
#include "json.hpp"

namespace arm {

Sentence split_tokens(std::string_view text) {
  Sentence out;
  std::string cur;
  for (char ch : text) {
    if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join_tokens(const Sentence& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

Corpus parse_corpus(std::string_view text, const std::string& source) {
  Corpus corpus;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    auto fail = [&](const std::string& why) {
      return FormatError(source + ":" + std::to_string(line_no) + ": " + why);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw fail(std::string("malformed JSON (") + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("post") || !j["post"].is_string() || !j.contains("responses") ||
        !j["responses"].is_array())
      throw fail("expected {\"post\": string, \"responses\": [string, ...]}");
    CorpusPair pair;
    pair.post = split_tokens(j["post"].get<std::string>());
    if (pair.post.empty()) throw fail("empty post");
    for (const auto& r : j["responses"]) {
      if (!r.is_string()) throw fail("response is not a string");
      Sentence resp = split_tokens(r.get<std::string>());
      if (resp.empty()) throw fail("empty response");
      if (std::find(pair.responses.begin(), pair.responses.end(), resp) == pair.responses.end())
        pair.responses.push_back(std::move(resp));
    }
    if (pair.responses.empty()) throw fail("post has no responses");
    corpus.push_back(std::move(pair));
  }
  return corpus;
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_corpus(ss.str(), path);
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus file " + path);
  for (const auto& pair : corpus) {
    nlohmann::json j;
    j["post"] = join_tokens(pair.post);
    j["responses"] = nlohmann::json::array();
    for (const auto& r : pair.responses) j["responses"].push_back(join_tokens(r));
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for corpus file " + path);
}

std::vector<Sentence> load_posts(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read posts file " + path);
  std::vector<Sentence> posts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path + ":" + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + "malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("post") || !j["post"].is_string())
      throw FormatError(where + "expected {\"post\": string}");
    Sentence post = split_tokens(j["post"].get<std::string>());
    if (post.empty()) throw FormatError(where + "empty post");
    posts.push_back(std::move(post));
  }
  return posts;
}

Vocab build_vocab(const Corpus& corpus, std::size_t max_size) {
  if (max_size < kNumReserved + 1) throw ContractError("build_vocab: max_size must be >= 5");
  if (corpus.empty()) throw ContractError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  auto count = [&](const Sentence& s) {
    for (const auto& w : s) ++counts[w];
  };
  for (const auto& pair : corpus) {
    count(pair.post);
    for (const auto& r : pair.responses) count(r);
  }
  Vocab reserved;
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [w, c] : counts)
    if (!reserved.contains(w)) ranked.emplace_back(w, c);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens = reserved.tokens();
  for (const auto& [w, c] : ranked) {
    if (tokens.size() >= max_size) break;
    tokens.push_back(w);
  }
  return Vocab(std::move(tokens));
}

EncodedPair encode_record(const Vocab& vocab, const CorpusPair& pair) {
  EncodedPair e;
  e.post = vocab.encode(pair.post);
  for (const auto& r : pair.responses) e.responses.push_back(vocab.encode(r, true));
  return e;
}

std::vector<EncodedPair> encode_corpus(const Vocab& vocab, const Corpus& corpus) {
  std::vector<EncodedPair> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus) out.push_back(encode_record(vocab, p));
  return out;
}

std::size_t count_instances(const Corpus& corpus) {
  std::size_t n = 0;
  for (const auto& p : corpus) n += p.responses.size();
  return n;
}

// ---- synthetic generator ------------------------------------------------

namespace {

struct SyntheticLayout {
  std::size_t styles = 0;
  std::size_t fragments = 0;
  std::size_t topics = 0;
};

SyntheticLayout layout_for(std::size_t vocab_size) {
  SyntheticLayout l;
  if (vocab_size < 8) return l;
  const std::size_t content = vocab_size - kNumReserved;
  l.styles = std::clamp<std::size_t>(content / 4, 1, 16);
  l.fragments = std::max<std::size_t>(1, content / 6);
  l.topics = content - 2 * l.styles - l.fragments;
  return l;
}

std::string numbered(const char* stem, std::size_t i) { return stem + std::to_string(i); }

}  // namespace

std::size_t synthetic_style_capacity(std::size_t vocab_size) { return layout_for(vocab_size).styles; }

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  if (spec.vocab_size < 8) throw ContractError("synthetic spec: vocab_size must be >= 8");
  if (spec.responses_min < 1 || spec.responses_max < spec.responses_min)
    throw ContractError("synthetic spec: need 1 <= responses_min <= responses_max");
  if (!(spec.shared_fragment_rate >= 0.0 && spec.shared_fragment_rate <= 1.0))
    throw ContractError("synthetic spec: shared_fragment_rate must lie in [0,1]");
  const SyntheticLayout layout = layout_for(spec.vocab_size);
  if (spec.responses_max > layout.styles)
    throw ContractError("synthetic spec: " + std::to_string(spec.responses_max) +
                        " responses per post exceed the " + std::to_string(layout.styles) +
                        " response styles available at vocab_size " + std::to_string(spec.vocab_size));
  const std::size_t total_posts = spec.num_posts + spec.num_valid_posts + spec.num_test_posts;
  const double capacity = static_cast<double>(layout.topics) * layout.topics * layout.topics;
  if (static_cast<double>(total_posts) > capacity)
    throw ContractError("synthetic spec: " + std::to_string(total_posts) + " distinct posts exceed capacity " +
                        std::to_string(static_cast<std::size_t>(capacity)));

  Rng rng(spec.seed);
  auto uniform = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };

  // Fixed two-word clause for every topic word; a post's clause follows its second word.
  std::vector<Sentence> topic_clause(layout.topics);
  for (auto& c : topic_clause) c = {numbered("frag", uniform(layout.fragments)), numbered("frag", uniform(layout.fragments))};

  std::set<Sentence> seen;
  auto make_post = [&]() {
    for (std::size_t attempt = 0; attempt < 100000; ++attempt) {
      Sentence post{numbered("topic", uniform(layout.topics)), numbered("topic", uniform(layout.topics)),
                    numbered("topic", uniform(layout.topics))};
      if (seen.insert(post).second) return post;
    }
    throw ContractError("synthetic spec: could not draw enough distinct posts");
  };

  auto make_pair = [&]() {
    CorpusPair pair;
    pair.post = make_post();
    const std::size_t count = spec.responses_min + uniform(spec.responses_max - spec.responses_min + 1);
    const Sentence& clause = topic_clause[std::stoul(pair.post[1].substr(5))];
    std::bernoulli_distribution share(spec.shared_fragment_rate);
    for (std::size_t i = 0; i < count; ++i) {
      Sentence r{numbered("open", i), pair.post[0]};
      if (share(rng)) r.insert(r.end(), clause.begin(), clause.end());
      r.push_back(numbered("close", i));
      pair.responses.push_back(std::move(r));
    }
    return pair;
  };

  SyntheticCorpus out;
  for (std::size_t i = 0; i < spec.num_posts; ++i) out.train.push_back(make_pair());
  for (std::size_t i = 0; i < spec.num_valid_posts; ++i) out.valid.push_back(make_pair());
  for (std::size_t i = 0; i < spec.num_test_posts; ++i) out.test.push_back(make_pair());
  return out;
}

}  // namespace arm
