#include "hpl/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "hpl/errors.hpp"

namespace hpl {

double binary_auroc(const std::vector<int>& is_positive, const std::vector<double>& scores) {
  const size_t n = scores.size();
  if (is_positive.size() != n) throw ParamError("auroc: size mismatch");
  long n_pos = 0;
  for (int p : is_positive) n_pos += (p != 0);
  const long n_neg = static_cast<long>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("auroc: need both positives and negatives");

  // Midranks: ties share the average of the ranks they span.
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = (double(i + 1) + double(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double rank_sum_pos = 0;
  for (size_t k = 0; k < n; ++k)
    if (is_positive[k]) rank_sum_pos += rank[k];
  return (rank_sum_pos - double(n_pos) * (n_pos + 1) / 2.0) / (double(n_pos) * n_neg);
}

double macro_auroc(const std::vector<int>& labels, const Tensor& scores) {
  const long n = static_cast<long>(labels.size());
  if (scores.rows() != n) throw ParamError("macro_auroc: row count mismatch");
  const long C = scores.cols();
  std::set<int> present(labels.begin(), labels.end());
  if (present.size() < 2) throw DataError("macro_auroc: labels contain a single class");
  double sum = 0;
  long used = 0;
  for (int c : present) {
    if (c < 0 || c >= C) throw ParamError("macro_auroc: label out of score range");
    std::vector<int> pos(n);
    std::vector<double> sc(n);
    for (long r = 0; r < n; ++r) {
      pos[r] = (labels[r] == c);
      sc[r] = scores[r * C + c];
    }
    sum += binary_auroc(pos, sc);
    ++used;
  }
  return sum / used;
}

double macro_f1(const std::vector<int>& labels, const std::vector<int>& predictions,
                int n_classes) {
  if (labels.size() != predictions.size()) throw ParamError("macro_f1: size mismatch");
  if (n_classes < 1) throw ParamError("macro_f1: need n_classes >= 1");
  std::vector<long> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
  for (size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || y >= n_classes || p < 0 || p >= n_classes)
      throw ParamError("macro_f1: class id out of range");
    if (y == p) ++tp[y];
    else {
      ++fp[p];
      ++fn[y];
    }
  }
  double sum = 0;
  for (int c = 0; c < n_classes; ++c) {
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    sum += denom > 0 ? 2.0 * tp[c] / denom : 0.0;
  }
  return sum / n_classes;
}

double accuracy(const std::vector<int>& labels, const std::vector<int>& predictions) {
  if (labels.size() != predictions.size() || labels.empty())
    throw ParamError("accuracy: bad sizes");
  long hit = 0;
  for (size_t i = 0; i < labels.size(); ++i) hit += (labels[i] == predictions[i]);
  return double(hit) / labels.size();
}

std::pair<double, double> dice_jac(const ByteTensor& pred_mask, const ByteTensor& true_mask) {
  if (pred_mask.numel() != true_mask.numel()) throw ParamError("dice_jac: size mismatch");
  long np = 0, nt = 0, ni = 0;
  for (long i = 0; i < pred_mask.numel(); ++i) {
    const bool p = pred_mask[i] != 0, t = true_mask[i] != 0;
    np += p;
    nt += t;
    ni += (p && t);
  }
  if (np == 0 && nt == 0) return {1.0, 1.0};
  if (np == 0 || nt == 0) return {0.0, 0.0};
  const double dice = 2.0 * ni / (np + nt);
  const double jac = double(ni) / (np + nt - ni);
  return {dice, jac};
}

}  // namespace hpl
