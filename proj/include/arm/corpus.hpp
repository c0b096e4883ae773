#pragma once

// Corpus records, JSON-lines I/O, vocabulary construction and the synthetic
// 1-to-n corpus generator.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "arm/seq_model.hpp"

namespace arm {

using Sentence = std::vector<std::string>;

struct CorpusPair {
  Sentence post;
  std::vector<Sentence> responses;  // distinct, nonempty

  friend bool operator==(const CorpusPair&, const CorpusPair&) = default;
};

using Corpus = std::vector<CorpusPair>;

// Whitespace tokenization.
Sentence split_tokens(std::string_view text);
std::string join_tokens(const Sentence& tokens);

// One JSON object per line: {"post": "...", "responses": ["...", ...]}.
// Duplicate responses of a post are dropped on load.
Corpus load_corpus(const std::string& path);
void save_corpus(const Corpus& corpus, const std::string& path);
// Parses the same format from a string; `source` names it in errors.
Corpus parse_corpus(std::string_view text, const std::string& source = "<string>");

// Posts only, from the same format; "responses" may be absent.
std::vector<Sentence> load_posts(const std::string& path);

// Reserved tokens plus the most frequent tokens, at most max_size entries in
// total. Frequency ties are broken lexicographically.
Vocab build_vocab(const Corpus& corpus, std::size_t max_size);

struct EncodedPair {
  TokenSeq post;
  std::vector<TokenSeq> responses;  // each ends with EOS
};

EncodedPair encode_record(const Vocab& vocab, const CorpusPair& pair);
std::vector<EncodedPair> encode_corpus(const Vocab& vocab, const Corpus& corpus);

// Total number of (post, response) instances.
std::size_t count_instances(const Corpus& corpus);

struct SyntheticSpec {
  std::size_t num_posts = 50;  // training posts
  std::size_t num_valid_posts = 10;
  std::size_t num_test_posts = 10;
  std::size_t responses_min = 4;
  std::size_t responses_max = 4;
  double shared_fragment_rate = 1.0;
  std::size_t vocab_size = 64;  // including the reserved tokens
  std::uint64_t seed = 1;
};

struct SyntheticCorpus {
  Corpus train;
  Corpus valid;
  Corpus test;
};

// Posts are three topic words. Each response is
//   <style opener> <first post word> [<shared clause>] <style closer>
// where response i of every post uses style i and the two-word shared clause
// is fixed by the second post word; each response carries it with
// probability shared_fragment_rate. All posts are distinct across splits.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

// Styles available for the given vocabulary size (the per-post response cap).
std::size_t synthetic_style_capacity(std::size_t vocab_size);

}  // namespace arm
