#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hpl/serialize.hpp"
#include "hpl/tensor.hpp"

namespace hpl {

// Pluggable label-to-vector provider. Implementations must be deterministic:
// the same string always maps to the same vector.
class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual std::vector<double> embed(const std::string& label) const = 0;
  virtual int dim() const = 0;
};

// Default provider: character n-grams hashed into random projection buckets.
// Similar spellings share n-grams and land near each other; no external
// model involved.
class HashEmbedder : public TextEmbedder {
 public:
  explicit HashEmbedder(int dim = 64, int min_n = 2, int max_n = 4,
                        uint64_t seed = 0);
  std::vector<double> embed(const std::string& label) const override;
  int dim() const override { return dim_; }

 private:
  int dim_, min_n_, max_n_;
  uint64_t seed_;
};

// Table-backed provider reading UTF-8 lines "label<TAB>v1,v2,...,vD";
// unknown labels are an error.
class FileEmbedder : public TextEmbedder {
 public:
  explicit FileEmbedder(const fs::path& table_path);
  std::vector<double> embed(const std::string& label) const override;
  int dim() const override { return dim_; }

 private:
  std::map<std::string, std::vector<double>> table_;
  int dim_ = 0;
};

// Lowercase, collapse separators (whitespace, '_', '-') to single spaces,
// strip punctuation, trim. Idempotent.
std::string normalize_label(const std::string& raw);

struct MergeResult {
  std::vector<std::string> canonical;       // representative per component
  std::map<std::string, int> label_to_idx;  // normalized label -> component
  // For the written merge report: members and pairwise sims per component.
  std::vector<std::vector<std::string>> members;
};

// Connects unique labels whose embedding cosine similarity reaches the
// threshold; connected components become canonical labels named by their
// lexicographically smallest member.
MergeResult merge_labels(const std::vector<std::string>& labels,
                         const TextEmbedder& embedder, double threshold);

// Row i = L2-normalized embedding of canonical_labels[i].
Tensor build_prototype_init(const std::vector<std::string>& canonical_labels,
                            const TextEmbedder& embedder);

// Binary target/indicator pair for one sample: labeled samples get n = ones
// and a (multi-)hot y; unlabeled samples are fully ignored.
void labels_to_targets(const std::vector<int>& canonical_ids, long n_c,
                       float* y_out, float* n_out);

struct PrototypeBank {
  std::vector<std::string> label_names;
  Tensor init_matrix;  // N_c x D snapshot of the initialization
  MergeResult merge;

  static PrototypeBank build(const std::vector<std::string>& raw_labels,
                             const TextEmbedder& embedder, double threshold);
  // Report: one block per canonical label with members and their pairwise
  // similarities under the embedder that built the bank.
  void write_merge_report(const fs::path& path, const TextEmbedder& embedder) const;
};

}  // namespace hpl
