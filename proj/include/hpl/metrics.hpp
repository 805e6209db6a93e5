#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "hpl/tensor.hpp"

namespace hpl {

// One-vs-rest AUROC for a single class, midrank tie handling
// (tied pairs count 0.5).
double binary_auroc(const std::vector<int>& is_positive, const std::vector<double>& scores);

// Macro AUROC over classes present in `labels`; scores is N x C row-major.
// Throws if labels contain a single distinct class.
double macro_auroc(const std::vector<int>& labels, const Tensor& scores);

// Macro F1 over all `n_classes` classes; a class with no true and no
// predicted samples scores 0 and still enters the mean.
double macro_f1(const std::vector<int>& labels, const std::vector<int>& predictions,
                int n_classes);

double accuracy(const std::vector<int>& labels, const std::vector<int>& predictions);

// Binary masks (nonzero = foreground). Conventions: both empty -> (1,1),
// exactly one empty -> (0,0).
std::pair<double, double> dice_jac(const ByteTensor& pred_mask, const ByteTensor& true_mask);

}  // namespace hpl
