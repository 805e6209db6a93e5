#pragma once

#include <string>
#include <vector>

#include "hpl/features.hpp"
#include "hpl/tensor.hpp"

namespace hpl {

struct KnnResult {
  int predicted = -1;
  std::vector<long> neighbor_rows;  // gallery rows, most similar first
  std::vector<double> scores;       // per-class top-k vote fractions
};

// Cosine-similarity k-NN with majority vote over the top k labels. A tied
// vote goes to the label of the most similar neighbor among the tied labels;
// equal similarities rank by gallery order. The vote fractions double as the
// per-class soft scores for AUROC. n_classes = 0 derives the class count from
// the gallery labels.
KnnResult knn_retrieve(const Tensor& query, const FeatureSet& gallery, int k = 5,
                       int n_classes = 0);

struct RetrievalEval {
  std::vector<int> predicted;
  Tensor scores;  // [N, C]
};

RetrievalEval knn_eval(const FeatureSet& queries, const FeatureSet& gallery,
                       int k = 5, int n_classes = 0);

// Single linear layer over frozen features, softmax cross entropy, Adam steps
// with the learning rate cosine-annealed to zero.
struct ProbeConfig {
  int epochs = 50;
  double lr = 5e-3;
  int batch_size = 64;
  uint64_t seed = 0;

  void validate() const;
};

struct LinearProbe {
  Tensor W;  // [C, D]
  Tensor b;  // [C]

  long n_classes() const { return W.numel() ? W.dim(0) : 0; }
  long dim() const { return W.numel() ? W.dim(1) : 0; }
  Tensor predict_proba(const Tensor& X) const;  // softmax rows, [N, C]
  std::vector<int> predict(const Tensor& X) const;
};

LinearProbe make_linear_probe(long dim, int n_classes);

// Shared trainer (the probe protocol and the federated clients both use it).
// Returns the per-epoch mean training losses.
std::vector<double> train_probe_inplace(LinearProbe& probe, const FeatureSet& train,
                                        const ProbeConfig& cfg);

LinearProbe train_linear_probe(const FeatureSet& train, int n_classes,
                               const ProbeConfig& cfg = {});

// Prediction dump, one row per sample: sample_id,true,predicted,score_0,...
// These files decouple the evaluators from the metric code.
void write_classification_csv(const fs::path& path, const std::vector<std::string>& ids,
                              const std::vector<int>& truth,
                              const std::vector<int>& predicted, const Tensor& scores);

struct ClassificationDump {
  std::vector<std::string> ids;
  std::vector<int> truth;
  std::vector<int> predicted;
  Tensor scores;  // [N, C]
};

ClassificationDump read_classification_csv(const fs::path& path);

}  // namespace hpl
