#include "hpl/textmetrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

#include "hpl/errors.hpp"

namespace hpl::textm {

namespace {

using Tokens = std::vector<std::string>;
using Counts = std::map<std::string, long>;

Counts ngram_counts(const Tokens& toks, int n) {
  Counts c;
  if (static_cast<int>(toks.size()) < n) return c;
  for (size_t i = 0; i + n <= toks.size(); ++i) {
    std::string g = toks[i];
    for (int k = 1; k < n; ++k) g += ' ' + toks[i + k];
    ++c[g];
  }
  return c;
}

long total(const Counts& c) {
  long t = 0;
  for (const auto& [_, v] : c) t += v;
  return t;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& s) {
  Tokens out;
  std::istringstream in(s);
  std::string w;
  auto is_punct = [](char c) {
    return std::ispunct(static_cast<unsigned char>(c)) != 0;
  };
  while (in >> w) {
    size_t b = 0, e = w.size();
    while (b < e && is_punct(w[b])) ++b;
    while (e > b && is_punct(w[e - 1])) --e;
    if (b == e) continue;
    std::string t = w.substr(b, e - b);
    for (char& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(std::move(t));
  }
  return out;
}

std::string stem_lite(const std::string& token) {
  auto ends_with = [&](const char* suf) {
    const size_t n = std::strlen(suf);
    return token.size() > n && token.compare(token.size() - n, n, suf) == 0;
  };
  if (ends_with("ing") && token.size() > 5) return token.substr(0, token.size() - 3);
  if (ends_with("ed") && token.size() > 4) return token.substr(0, token.size() - 2);
  if (ends_with("ss")) return token;
  if (ends_with("s") && token.size() > 3) return token.substr(0, token.size() - 1);
  return token;
}

double bleu(const std::string& hyp, const std::vector<std::string>& refs, int max_n) {
  if (max_n < 1) throw ParamError("bleu: order must be >= 1");
  if (refs.empty()) throw ParamError("bleu: need at least one reference");
  const Tokens h = tokenize(hyp);
  if (h.empty()) return 0.0;
  std::vector<Tokens> rs;
  for (const auto& r : refs) rs.push_back(tokenize(r));

  double log_prec_sum = 0;
  for (int n = 1; n <= max_n; ++n) {
    const Counts hc = ngram_counts(h, n);
    const long denom = total(hc);
    if (denom == 0) return 0.0;
    long clipped = 0;
    for (const auto& [g, cnt] : hc) {
      long best = 0;
      for (const auto& r : rs) {
        const Counts rc = ngram_counts(r, n);
        auto it = rc.find(g);
        if (it != rc.end()) best = std::max(best, it->second);
      }
      clipped += std::min(cnt, best);
    }
    if (clipped == 0) return 0.0;
    log_prec_sum += std::log(double(clipped) / denom);
  }

  // Brevity penalty against the reference whose length is closest to the
  // hypothesis (shorter wins ties).
  long ref_len = static_cast<long>(rs[0].size());
  for (const auto& r : rs) {
    const long l = static_cast<long>(r.size());
    const long cur = std::abs(ref_len - static_cast<long>(h.size()));
    const long cand = std::abs(l - static_cast<long>(h.size()));
    if (cand < cur || (cand == cur && l < ref_len)) ref_len = l;
  }
  const double bp =
      h.size() >= static_cast<size_t>(ref_len) ? 1.0 : std::exp(1.0 - double(ref_len) / h.size());
  return bp * std::exp(log_prec_sum / max_n);
}

double rouge_n(const std::string& hyp, const std::vector<std::string>& refs, int n) {
  if (n < 1) throw ParamError("rouge_n: order must be >= 1");
  if (refs.empty()) throw ParamError("rouge_n: need at least one reference");
  const Counts hc = ngram_counts(tokenize(hyp), n);
  const long hn = total(hc);
  double best = 0;
  for (const auto& ref : refs) {
    const Counts rc = ngram_counts(tokenize(ref), n);
    const long rn = total(rc);
    long ov = 0;
    for (const auto& [g, cnt] : hc) {
      auto it = rc.find(g);
      if (it != rc.end()) ov += std::min(cnt, it->second);
    }
    if (hn == 0 || rn == 0 || ov == 0) continue;
    const double p = double(ov) / hn, r = double(ov) / rn;
    best = std::max(best, 2 * p * r / (p + r));
  }
  return best;
}

namespace {

long lcs_length(const Tokens& a, const Tokens& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<long> prev(m + 1, 0), cur(m + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[m];
}

}  // namespace

double rouge_l(const std::string& hyp, const std::vector<std::string>& refs) {
  if (refs.empty()) throw ParamError("rouge_l: need at least one reference");
  const Tokens h = tokenize(hyp);
  double best = 0;
  for (const auto& ref : refs) {
    const Tokens r = tokenize(ref);
    if (h.empty() || r.empty()) continue;
    const long l = lcs_length(h, r);
    if (l == 0) continue;
    const double p = double(l) / h.size(), rc = double(l) / r.size();
    best = std::max(best, 2 * p * rc / (p + rc));
  }
  return best;
}

double meteor_lite(const std::string& hyp, const std::vector<std::string>& refs, double alpha) {
  if (refs.empty()) throw ParamError("meteor_lite: need at least one reference");
  Tokens h = tokenize(hyp);
  for (auto& t : h) t = stem_lite(t);
  double best = 0;
  for (const auto& ref : refs) {
    Tokens r = tokenize(ref);
    for (auto& t : r) t = stem_lite(t);
    if (h.empty() || r.empty()) continue;
    // Greedy left-to-right alignment: each hypothesis token takes the
    // earliest unused matching reference position.
    std::vector<bool> used(r.size(), false);
    std::vector<long> align(h.size(), -1);
    long matches = 0;
    for (size_t i = 0; i < h.size(); ++i)
      for (size_t j = 0; j < r.size(); ++j)
        if (!used[j] && h[i] == r[j]) {
          used[j] = true;
          align[i] = static_cast<long>(j);
          ++matches;
          break;
        }
    if (matches == 0) continue;
    long chunks = 0;
    long prev = -2;
    for (size_t i = 0; i < h.size(); ++i) {
      if (align[i] < 0) continue;
      if (align[i] != prev + 1) ++chunks;
      prev = align[i];
    }
    const double p = double(matches) / h.size(), rc = double(matches) / r.size();
    const double f = p * rc / (alpha * p + (1 - alpha) * rc);
    const double frag = double(chunks) / matches;
    const double score = f * (1.0 - 0.5 * frag * frag * frag);
    best = std::max(best, score);
  }
  return best;
}

std::vector<double> cider(const std::vector<std::string>& hyps,
                          const std::vector<std::vector<std::string>>& refs, bool scaled) {
  if (hyps.size() != refs.size()) throw ParamError("cider: hyps/refs size mismatch");
  if (hyps.empty()) throw ParamError("cider: empty corpus");
  const int kMaxN = 4;
  const long n_images = static_cast<long>(refs.size());

  // Document frequency per n-gram: number of images whose reference set
  // contains it at least once.
  std::vector<Counts> df(kMaxN);
  std::vector<std::vector<std::vector<Counts>>> ref_counts(n_images);
  for (long i = 0; i < n_images; ++i) {
    if (refs[i].empty()) throw ParamError("cider: image without references");
    std::vector<Counts> seen(kMaxN);
    ref_counts[i].resize(refs[i].size());
    for (size_t j = 0; j < refs[i].size(); ++j) {
      const Tokens toks = tokenize(refs[i][j]);
      ref_counts[i][j].resize(kMaxN);
      for (int n = 0; n < kMaxN; ++n) {
        ref_counts[i][j][n] = ngram_counts(toks, n + 1);
        for (const auto& [g, _] : ref_counts[i][j][n]) seen[n][g] = 1;
      }
    }
    for (int n = 0; n < kMaxN; ++n)
      for (const auto& [g, _] : seen[n]) ++df[n][g];
  }

  auto tfidf = [&](const std::vector<Counts>& counts, int n) {
    std::map<std::string, double> v;
    const long tot = total(counts[n]);
    if (tot == 0) return v;
    for (const auto& [g, cnt] : counts[n]) {
      auto it = df[n].find(g);
      const double d = it == df[n].end() ? 1.0 : double(std::max<long>(1, it->second));
      v[g] = (double(cnt) / tot) * std::log(double(n_images) / d);
    }
    return v;
  };
  auto cosine = [](const std::map<std::string, double>& a,
                   const std::map<std::string, double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (const auto& [g, w] : a) {
      na += w * w;
      auto it = b.find(g);
      if (it != b.end()) dot += w * it->second;
    }
    for (const auto& [_, w] : b) nb += w * w;
    if (na == 0 || nb == 0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };

  std::vector<double> scores(n_images, 0.0);
  for (long i = 0; i < n_images; ++i) {
    const Tokens h = tokenize(hyps[i]);
    std::vector<Counts> hc(kMaxN);
    for (int n = 0; n < kMaxN; ++n) hc[n] = ngram_counts(h, n + 1);
    double score = 0;
    for (int n = 0; n < kMaxN; ++n) {
      const auto hv = tfidf(hc, n);
      double per_ref = 0;
      for (size_t j = 0; j < refs[i].size(); ++j)
        per_ref += cosine(hv, tfidf(ref_counts[i][j], n));
      score += per_ref / refs[i].size();
    }
    scores[i] = (scaled ? 10.0 : 1.0) * score / kMaxN;
  }
  return scores;
}

}  // namespace hpl::textm
