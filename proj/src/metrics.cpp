#include "lstmt/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>

#include <nlohmann/json.hpp>

#include "lstmt/errors.hpp"

namespace lstmt::metrics {
namespace {

constexpr int kCiderOrder = 4;
constexpr double kCiderSigma = 6.0;
constexpr double kMeteorAlpha = 0.9;
constexpr double kMeteorGamma = 0.5;
constexpr double kMeteorBeta = 3.0;
constexpr double kRougeBeta = 1.2;

using Counts = std::map<std::string, std::size_t>;

Counts ngram_counts(const Words& w, int n) {
  Counts out;
  if (w.size() < static_cast<std::size_t>(n)) return out;
  for (std::size_t i = 0; i + n <= w.size(); ++i) {
    std::string key = w[i];
    for (int k = 1; k < n; ++k) key += ' ' + w[i + k];
    ++out[key];
  }
  return out;
}

struct Tokenized {
  Words candidate;
  std::vector<Words> references;
};

std::vector<Tokenized> tokenize_corpus(std::span<const EvalPair> pairs) {
  if (pairs.empty()) throw ContractError("metric over an empty corpus");
  std::vector<Tokenized> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.references.empty()) throw ContractError("pair \"" + p.id + "\" has no references");
    Tokenized t;
    t.candidate = tokenize(p.candidate);
    for (const auto& r : p.references) t.references.push_back(tokenize(r));
    out.push_back(std::move(t));
  }
  return out;
}

struct BleuStats {
  std::array<double, 4> clipped{};
  std::array<double, 4> total{};
  double cand_len = 0.0;
  double ref_len = 0.0;

  void add(const Words& c, const std::vector<Words>& refs, int n) {
    cand_len += static_cast<double>(c.size());
    std::size_t best = refs.front().size();
    for (const auto& r : refs) {
      const auto diff = [&](std::size_t len) { return len > c.size() ? len - c.size() : c.size() - len; };
      if (diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best)) best = r.size();
    }
    ref_len += static_cast<double>(best);
    for (int k = 1; k <= n; ++k) {
      const Counts cc = ngram_counts(c, k);
      Counts max_ref;
      for (const auto& r : refs) {
        for (const auto& [g, cnt] : ngram_counts(r, k)) max_ref[g] = std::max(max_ref[g], cnt);
      }
      for (const auto& [g, cnt] : cc) {
        auto it = max_ref.find(g);
        if (it != max_ref.end()) clipped[k - 1] += static_cast<double>(std::min(cnt, it->second));
        total[k - 1] += static_cast<double>(cnt);
      }
    }
  }

  double score(int n) const {
    if (cand_len == 0.0) return 0.0;
    double log_sum = 0.0;
    for (int k = 0; k < n; ++k) {
      if (clipped[k] == 0.0 || total[k] == 0.0) return 0.0;
      log_sum += std::log(clipped[k] / total[k]);
    }
    const double bp = cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0;
    return bp * std::exp(log_sum / n);
  }
};

void check_order(int n) {
  if (n < 1 || n > 4) throw ContractError("BLEU order must be in 1..4, got " + std::to_string(n));
}

double meteor_score(const MeteorAlignment& a, std::size_t cand_len, std::size_t ref_len) {
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(cand_len);
  const double r = m / static_cast<double>(ref_len);
  const double f = p * r / (kMeteorAlpha * p + (1.0 - kMeteorAlpha) * r);
  const double penalty = kMeteorGamma * std::pow(static_cast<double>(a.chunks) / m, kMeteorBeta);
  return f * (1.0 - penalty);
}

bool ends_with(std::string_view w, std::string_view suffix) {
  return w.size() >= suffix.size() && w.substr(w.size() - suffix.size()) == suffix;
}

}  // namespace

Words tokenize(std::string_view text) {
  Words out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (!std::ispunct(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double bleu(std::span<const EvalPair> pairs, int n) {
  check_order(n);
  BleuStats stats;
  for (const auto& t : tokenize_corpus(pairs)) stats.add(t.candidate, t.references, n);
  return stats.score(n);
}

double bleu_sentence(const Words& candidate, const std::vector<Words>& references, int n) {
  check_order(n);
  if (references.empty()) throw ContractError("bleu_sentence: no references");
  BleuStats stats;
  stats.add(candidate, references, n);
  return stats.score(n);
}

std::size_t lcs_length(const Words& a, const Words& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l_sentence(const Words& candidate, const std::vector<Words>& references) {
  double best = 0.0;
  for (const auto& ref : references) {
    const auto lcs = static_cast<double>(lcs_length(candidate, ref));
    if (lcs == 0.0) continue;
    const double p = lcs / static_cast<double>(candidate.size());
    const double r = lcs / static_cast<double>(ref.size());
    const double b2 = kRougeBeta * kRougeBeta;
    best = std::max(best, (1.0 + b2) * p * r / (r + b2 * p));
  }
  return best;
}

double rouge_l(std::span<const EvalPair> pairs) {
  const auto corpus = tokenize_corpus(pairs);
  double total = 0.0;
  for (const auto& t : corpus) total += rouge_l_sentence(t.candidate, t.references);
  return total / static_cast<double>(corpus.size());
}

std::string stem(std::string_view word) {
  for (std::string_view suffix : {"ing", "ed", "ly", "es", "s"}) {
    if (ends_with(word, suffix) && word.size() - suffix.size() >= 3) {
      return std::string(word.substr(0, word.size() - suffix.size()));
    }
  }
  return std::string(word);
}

MeteorAlignment meteor_align(const Words& candidate, const Words& reference) {
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> match(candidate.size(), kNone);
  std::vector<bool> used(reference.size(), false);

  auto pass = [&](auto&& same) {
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      if (match[i] != kNone) continue;
      for (std::size_t j = 0; j < reference.size(); ++j) {
        if (!used[j] && same(i, j)) {
          match[i] = j;
          used[j] = true;
          break;
        }
      }
    }
  };
  pass([&](std::size_t i, std::size_t j) { return candidate[i] == reference[j]; });
  Words cs, rs;
  for (const auto& w : candidate) cs.push_back(stem(w));
  for (const auto& w : reference) rs.push_back(stem(w));
  pass([&](std::size_t i, std::size_t j) { return cs[i] == rs[j]; });

  MeteorAlignment a;
  std::size_t prev = kNone;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    if (match[i] == kNone) continue;
    ++a.matches;
    const bool continues = prev != kNone && prev + 1 == i && match[prev] + 1 == match[i];
    if (!continues) ++a.chunks;
    prev = i;
  }
  return a;
}

double meteor_lite_sentence(const Words& candidate, const std::vector<Words>& references) {
  double best = 0.0;
  for (const auto& ref : references) {
    best = std::max(best, meteor_score(meteor_align(candidate, ref), candidate.size(), ref.size()));
  }
  return best;
}

double meteor_lite(std::span<const EvalPair> pairs) {
  const auto corpus = tokenize_corpus(pairs);
  double total = 0.0;
  for (const auto& t : corpus) total += meteor_lite_sentence(t.candidate, t.references);
  return total / static_cast<double>(corpus.size());
}

CiderScorer::CiderScorer(const std::vector<std::vector<Words>>& reference_corpus) {
  if (reference_corpus.empty()) throw ContractError("CIDEr-D needs at least one reference set");
  for (const auto& refs : reference_corpus) {
    std::set<std::string> seen;
    for (const auto& r : refs) {
      for (int n = 1; n <= kCiderOrder; ++n) {
        for (const auto& [g, cnt] : ngram_counts(r, n)) seen.insert(g);
      }
    }
    for (const auto& g : seen) doc_freq_[g] += 1.0;
  }
  log_docs_ = std::log(static_cast<double>(reference_corpus.size()));
  uniform_idf_ = reference_corpus.size() == 1;
}

void CiderScorer::vectorize(const Words& words, NgramVec& vec, std::array<double, 4>& norm) const {
  for (int n = 1; n <= kCiderOrder; ++n) {
    double sq = 0.0;
    for (const auto& [g, cnt] : ngram_counts(words, n)) {
      double idf = 1.0;
      if (!uniform_idf_) {
        auto it = doc_freq_.find(g);
        const double df = it == doc_freq_.end() ? 0.0 : it->second;
        idf = log_docs_ - std::log(std::max(1.0, df));
      }
      const double v = static_cast<double>(cnt) * idf;
      vec[n - 1][g] = v;
      sq += v * v;
    }
    norm[n - 1] = std::sqrt(sq);
  }
}

double CiderScorer::score(const Words& candidate, const std::vector<Words>& references) const {
  if (references.empty()) throw ContractError("CIDEr-D: no references");
  NgramVec cv;
  std::array<double, 4> cn{};
  vectorize(candidate, cv, cn);
  double total = 0.0;
  for (const auto& ref : references) {
    NgramVec rv;
    std::array<double, 4> rn{};
    vectorize(ref, rv, rn);
    const double delta = static_cast<double>(candidate.size()) - static_cast<double>(ref.size());
    const double length_penalty = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
    double per_ref = 0.0;
    for (int n = 0; n < kCiderOrder; ++n) {
      double val = 0.0;
      for (const auto& [g, v] : cv[n]) {
        auto it = rv[n].find(g);
        if (it != rv[n].end()) val += std::min(v, it->second) * it->second;
      }
      if (cn[n] != 0.0 && rn[n] != 0.0) val /= cn[n] * rn[n];
      per_ref += val * length_penalty;
    }
    total += per_ref / kCiderOrder;
  }
  return total / static_cast<double>(references.size());
}

double cider_d(std::span<const EvalPair> pairs) {
  const auto corpus = tokenize_corpus(pairs);
  std::vector<std::vector<Words>> refs;
  for (const auto& t : corpus) refs.push_back(t.references);
  CiderScorer scorer(refs);
  double total = 0.0;
  for (const auto& t : corpus) total += scorer.score(t.candidate, t.references);
  return total / static_cast<double>(corpus.size());
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  for (int n = 0; n < 4; ++n) j["bleu_" + std::to_string(n + 1)] = bleu[n] * 100.0;
  j["meteor_lite"] = meteor_lite * 100.0;
  j["rouge_l"] = rouge_l * 100.0;
  j["cider_d"] = cider_d * 100.0;
  if (!warnings.empty()) j["warnings"] = warnings;
  return j.dump(2);
}

std::string MetricReport::table(const std::string& label) const {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s|%8s|%8s|%8s|%8s|%8s|%8s|%8s\n", "Model", "B@1", "B@2", "B@3", "B@4", "M-lite",
                "R", "C");
  out += buf;
  out += std::string(16, '-') + ("|" + std::string(8, '-')) + ("|" + std::string(8, '-')) +
         ("|" + std::string(8, '-')) + ("|" + std::string(8, '-')) + ("|" + std::string(8, '-')) +
         ("|" + std::string(8, '-')) + ("|" + std::string(8, '-')) + "\n";
  std::snprintf(buf, sizeof buf, "%-16s|%8.2f|%8.2f|%8.2f|%8.2f|%8.2f|%8.2f|%8.2f\n", label.c_str(), bleu[0] * 100,
                bleu[1] * 100, bleu[2] * 100, bleu[3] * 100, meteor_lite * 100, rouge_l * 100, cider_d * 100);
  out += buf;
  return out;
}

MetricReport evaluate(std::span<const EvalPair> pairs) {
  MetricReport r;
  for (int n = 1; n <= 4; ++n) r.bleu[n - 1] = bleu(pairs, n);
  r.meteor_lite = meteor_lite(pairs);
  r.rouge_l = rouge_l(pairs);
  r.cider_d = cider_d(pairs);
  if (pairs.size() == 1) r.warnings.push_back("CIDEr-D over a single pair: idf is degenerate, using uniform weights");
  return r;
}

}  // namespace lstmt::metrics
