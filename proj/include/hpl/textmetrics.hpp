#pragma once

#include <string>
#include <vector>

namespace hpl::textm {

// Lowercases and splits on whitespace; leading/trailing ASCII punctuation is
// stripped from each token.
std::vector<std::string> tokenize(const std::string& s);

// Tiny rule-based suffix stemmer (plural s / ed / ing); used by METEOR only.
std::string stem_lite(const std::string& token);

// Cumulative BLEU up to order max_n: geometric mean of clipped n-gram
// precisions times the brevity penalty (closest reference length).
double bleu(const std::string& hyp, const std::vector<std::string>& refs, int max_n);

// N-gram overlap F1 (beta = 1), maximum over references.
double rouge_n(const std::string& hyp, const std::vector<std::string>& refs, int n);

// Longest-common-subsequence F1, maximum over references.
double rouge_l(const std::string& hyp, const std::vector<std::string>& refs);

// Unigram precision/recall harmonic mean F = PR / (alpha*P + (1-alpha)*R)
// with alpha = 0.9, on stemmed tokens, multiplied by the fragmentation
// penalty 1 - 0.5*(chunks/matches)^3. Chunks come from a greedy
// left-to-right alignment. No synonym tables.
double meteor_lite(const std::string& hyp, const std::vector<std::string>& refs,
                   double alpha = 0.9);

// Consensus captioning score: TF-IDF weighted n-gram (n = 1..4) cosine
// against each image's references, averaged over orders and references.
// IDF comes from the reference corpus. Returns one score per image, in
// [0,1]; pass scaled=true for the x10 convention.
std::vector<double> cider(const std::vector<std::string>& hyps,
                          const std::vector<std::vector<std::string>>& refs,
                          bool scaled = false);

}  // namespace hpl::textm
