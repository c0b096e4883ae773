#pragma once

// Automatic response metrics: BLEU-4, distinct-response diversity,
// reference coverage and per-atom keyword tables.

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "arm/composer.hpp"
#include "arm/corpus.hpp"

namespace arm {

// Strips reserved tokens (<pad>, <bos>) and truncates at <eos>.
Sentence normalize_response(const Sentence& tokens);

// Sentence BLEU-4 with multi-reference clipping and the closest-reference
// brevity penalty. Any zero n-gram precision yields 0 (no smoothing).
double bleu4(const Sentence& candidate, const std::vector<Sentence>& references);

std::size_t count_distinct(const std::vector<Sentence>& responses);
// distinct / K after normalization.
double diversity_score(const std::vector<Sentence>& responses);
// Fraction of references matched exactly by at least one generated response.
double coverage_at_l(const std::vector<Sentence>& generated, const std::vector<Sentence>& references);
// Number of distinct generated responses that exactly match some reference.
std::size_t count_matched_distinct(const std::vector<Sentence>& generated, const std::vector<Sentence>& references);

struct GenerationRecord {
  Molecule molecule;
  Sentence response;
};

struct Keyword {
  std::string word;
  double prob = 0.0;
};

struct KeywordTable {
  // atom -> keywords with p(w|m_i) > threshold, descending p, ties lexicographic
  std::map<int, std::vector<Keyword>> keywords;
  // atom -> number of responses whose molecule contains it
  std::map<int, std::size_t> support;
  // atoms in 1..num_atoms that occur in no record
  std::vector<int> omitted;
};

// p(w|m_i) = (responses whose molecule contains atom i and which contain w) /
//            (responses whose molecule contains atom i).
KeywordTable keyword_table(const std::vector<GenerationRecord>& records, std::size_t num_atoms,
                           double threshold = 0.5, const std::set<std::string>& stopwords = {});

}  // namespace arm
