#include "arm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace arm {

Sentence normalize_response(const Sentence& tokens) {
  Sentence out;
  for (const auto& t : tokens) {
    if (t == Vocab::kEosToken) break;
    if (t == Vocab::kPadToken || t == Vocab::kBosToken) continue;
    out.push_back(t);
  }
  return out;
}

namespace {

std::map<Sentence, std::size_t> ngram_counts(const Sentence& s, std::size_t n) {
  std::map<Sentence, std::size_t> counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[Sentence(s.begin() + i, s.begin() + i + n)];
  return counts;
}

}  // namespace

double bleu4(const Sentence& candidate_raw, const std::vector<Sentence>& references_raw) {
  const Sentence candidate = normalize_response(candidate_raw);
  std::vector<Sentence> references;
  for (const auto& r : references_raw) references.push_back(normalize_response(r));
  if (candidate.empty() || references.empty()) return 0.0;

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cand = ngram_counts(candidate, n);
    std::size_t total = 0;
    std::size_t clipped = 0;
    std::vector<std::map<Sentence, std::size_t>> ref_counts;
    for (const auto& r : references) ref_counts.push_back(ngram_counts(r, n));
    for (const auto& [gram, c] : cand) {
      total += c;
      std::size_t max_ref = 0;
      for (const auto& rc : ref_counts)
        if (auto it = rc.find(gram); it != rc.end()) max_ref = std::max(max_ref, it->second);
      clipped += std::min(c, max_ref);
    }
    if (total == 0 || clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
  }

  // Closest reference length; the shorter one on ties.
  const double c = static_cast<double>(candidate.size());
  std::size_t best = references.front().size();
  for (const auto& r : references) {
    const auto d = std::abs(static_cast<long>(r.size()) - static_cast<long>(candidate.size()));
    const auto bd = std::abs(static_cast<long>(best) - static_cast<long>(candidate.size()));
    if (d < bd || (d == bd && r.size() < best)) best = r.size();
  }
  const double r = static_cast<double>(best);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / 4.0);
}

std::size_t count_distinct(const std::vector<Sentence>& responses) {
  std::set<Sentence> distinct;
  for (const auto& r : responses) distinct.insert(normalize_response(r));
  return distinct.size();
}

double diversity_score(const std::vector<Sentence>& responses) {
  if (responses.empty()) throw ContractError("diversity_score: no responses");
  return static_cast<double>(count_distinct(responses)) / static_cast<double>(responses.size());
}

double coverage_at_l(const std::vector<Sentence>& generated, const std::vector<Sentence>& references) {
  if (references.empty()) throw ContractError("coverage_at_l: no references");
  std::set<Sentence> gen;
  for (const auto& g : generated) gen.insert(normalize_response(g));
  std::set<Sentence> refs;
  for (const auto& r : references) refs.insert(normalize_response(r));
  std::size_t hit = 0;
  for (const auto& r : refs) hit += gen.count(r);
  return static_cast<double>(hit) / static_cast<double>(refs.size());
}

std::size_t count_matched_distinct(const std::vector<Sentence>& generated, const std::vector<Sentence>& references) {
  std::set<Sentence> refs;
  for (const auto& r : references) refs.insert(normalize_response(r));
  std::set<Sentence> matched;
  for (const auto& g : generated) {
    Sentence n = normalize_response(g);
    if (refs.count(n)) matched.insert(std::move(n));
  }
  return matched.size();
}

KeywordTable keyword_table(const std::vector<GenerationRecord>& records, std::size_t num_atoms, double threshold,
                           const std::set<std::string>& stopwords) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ContractError("keyword_table: threshold must lie in (0,1]");
  KeywordTable table;
  std::map<int, std::map<std::string, std::size_t>> word_counts;
  for (const auto& rec : records) {
    std::set<int> atoms(rec.molecule.atoms.begin(), rec.molecule.atoms.end());
    const Sentence norm = normalize_response(rec.response);
    std::set<std::string> words(norm.begin(), norm.end());
    for (int a : atoms) {
      ++table.support[a];
      for (const auto& w : words) ++word_counts[a][w];
    }
  }
  for (std::size_t a = 1; a <= num_atoms; ++a)
    if (!table.support.count(static_cast<int>(a))) table.omitted.push_back(static_cast<int>(a));
  for (const auto& [atom, counts] : word_counts) {
    const double n = static_cast<double>(table.support[atom]);
    std::vector<Keyword> kws;
    for (const auto& [w, c] : counts) {
      if (stopwords.count(w) || w == Vocab::kUnkToken) continue;
      const double p = static_cast<double>(c) / n;
      if (p > threshold) kws.push_back({w, p});
    }
    std::sort(kws.begin(), kws.end(), [](const Keyword& x, const Keyword& y) {
      if (x.prob != y.prob) return x.prob > y.prob;
      return x.word < y.word;
    });
    table.keywords[atom] = std::move(kws);
  }
  return table;
}

}  // namespace arm
