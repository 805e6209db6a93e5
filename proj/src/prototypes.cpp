#include "hpl/prototypes.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hpl/errors.hpp"
#include "hpl/rng.hpp"

namespace hpl {

std::string normalize_label(const std::string& raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (unsigned char ch : raw) {
    if (std::isalnum(ch)) {
      if (pending_space && !out.empty()) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(std::tolower(ch)));
    } else if (std::isspace(ch) || ch == '_' || ch == '-') {
      pending_space = true;
    }
    // Any other punctuation is stripped outright.
  }
  return out;
}

HashEmbedder::HashEmbedder(int dim, int min_n, int max_n, uint64_t seed)
    : dim_(dim), min_n_(min_n), max_n_(max_n), seed_(seed) {
  if (dim <= 0 || min_n <= 0 || max_n < min_n)
    throw ParamError("hash embedder: bad n-gram or dimension settings");
}

std::vector<double> HashEmbedder::embed(const std::string& label) const {
  std::vector<double> v(static_cast<size_t>(dim_), 0.0);
  const std::string padded = "^" + label + "$";
  for (int n = min_n_; n <= max_n_; ++n) {
    if (static_cast<size_t>(n) > padded.size()) break;
    for (size_t i = 0; i + n <= padded.size(); ++i) {
      uint64_t h = fnv1a64(padded.data() + i, static_cast<size_t>(n),
                           0xcbf29ce484222325ULL ^ seed_);
      const uint64_t mixed = splitmix64(h);
      v[mixed % dim_] += (mixed >> 63) ? 1.0 : -1.0;
    }
  }
  return v;
}

FileEmbedder::FileEmbedder(const fs::path& table_path) {
  std::istringstream in(read_text_file(table_path));
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError("embedding table " + table_path.string() + " line " +
                      std::to_string(lineno) + ": missing tab separator");
    const std::string label = line.substr(0, tab);
    std::vector<double> vec;
    std::istringstream vs(line.substr(tab + 1));
    std::string piece;
    while (std::getline(vs, piece, ',')) {
      try {
        vec.push_back(std::stod(piece));
      } catch (const std::exception&) {
        throw DataError("embedding table " + table_path.string() + " line " +
                        std::to_string(lineno) + ": bad number '" + piece + "'");
      }
    }
    if (vec.empty())
      throw DataError("embedding table " + table_path.string() + " line " +
                      std::to_string(lineno) + ": empty vector");
    if (dim_ == 0) dim_ = static_cast<int>(vec.size());
    if (static_cast<int>(vec.size()) != dim_)
      throw DataError("embedding table " + table_path.string() + " line " +
                      std::to_string(lineno) + ": dimension " +
                      std::to_string(vec.size()) + " != " + std::to_string(dim_));
    table_[label] = std::move(vec);
  }
  if (table_.empty()) throw DataError("embedding table " + table_path.string() + " is empty");
}

std::vector<double> FileEmbedder::embed(const std::string& label) const {
  auto it = table_.find(label);
  if (it == table_.end())
    throw DataError("embedding table has no entry for label '" + label + "'");
  return it->second;
}

namespace {

std::vector<double> unit_or_zero(std::vector<double> v) {
  double n2 = 0;
  for (double x : v) n2 += x * x;
  if (n2 <= 0) return v;
  const double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

MergeResult merge_labels(const std::vector<std::string>& labels,
                         const TextEmbedder& embedder, double threshold) {
  if (labels.empty()) throw ParamError("merge_labels: empty label list");
  if (threshold <= 0.0 || threshold > 1.0)
    throw ParamError("merge_labels: threshold must lie in (0, 1]");

  std::vector<std::string> unique = labels;
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  const int n = static_cast<int>(unique.size());

  std::vector<std::vector<double>> emb(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) emb[i] = unit_or_zero(embedder.embed(unique[i]));

  UnionFind uf(n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (dot(emb[i], emb[j]) >= threshold) uf.unite(i, j);

  // Components keyed by their smallest member (unique[] is sorted, so the
  // first member seen per root is the representative).
  std::map<int, std::vector<std::string>> comps;
  for (int i = 0; i < n; ++i) comps[uf.find(i)].push_back(unique[i]);

  MergeResult res;
  std::vector<std::pair<std::string, std::vector<std::string>>> ordered;
  for (auto& [root, members] : comps) ordered.emplace_back(members.front(), members);
  std::sort(ordered.begin(), ordered.end());
  for (int c = 0; c < static_cast<int>(ordered.size()); ++c) {
    res.canonical.push_back(ordered[c].first);
    res.members.push_back(ordered[c].second);
    for (const auto& member : ordered[c].second) res.label_to_idx[member] = c;
  }
  return res;
}

Tensor build_prototype_init(const std::vector<std::string>& canonical_labels,
                            const TextEmbedder& embedder) {
  if (canonical_labels.empty()) throw ParamError("prototype init: no labels");
  const long D = embedder.dim();
  Tensor W({static_cast<long>(canonical_labels.size()), D});
  for (size_t i = 0; i < canonical_labels.size(); ++i) {
    std::vector<double> v = embedder.embed(canonical_labels[i]);
    if (static_cast<long>(v.size()) != D)
      throw DataError("embedder returned dimension " + std::to_string(v.size()) +
                      " for '" + canonical_labels[i] + "', expected " + std::to_string(D));
    double n2 = 0;
    for (double x : v) n2 += x * x;
    if (n2 <= 1e-24)
      throw DataError("label '" + canonical_labels[i] + "' embeds to the zero vector");
    const double inv = 1.0 / std::sqrt(n2);
    for (long d = 0; d < D; ++d) W[i * D + d] = static_cast<float>(v[d] * inv);
  }
  return W;
}

void labels_to_targets(const std::vector<int>& canonical_ids, long n_c, float* y_out,
                       float* n_out) {
  for (long j = 0; j < n_c; ++j) {
    y_out[j] = 0.0f;
    n_out[j] = 0.0f;
  }
  if (canonical_ids.empty()) return;
  for (long j = 0; j < n_c; ++j) n_out[j] = 1.0f;
  for (int id : canonical_ids) {
    if (id < 0 || id >= n_c)
      throw ParamError("labels_to_targets: canonical id " + std::to_string(id) +
                       " outside [0, " + std::to_string(n_c) + ")");
    y_out[id] = 1.0f;
  }
}

PrototypeBank PrototypeBank::build(const std::vector<std::string>& raw_labels,
                                   const TextEmbedder& embedder, double threshold) {
  std::vector<std::string> normalized;
  normalized.reserve(raw_labels.size());
  for (const auto& raw : raw_labels) {
    std::string n = normalize_label(raw);
    if (n.empty()) throw DataError("label '" + raw + "' normalizes to the empty string");
    normalized.push_back(std::move(n));
  }
  PrototypeBank bank;
  bank.merge = merge_labels(normalized, embedder, threshold);
  // Raw spellings resolve through their normalized form.
  for (const auto& raw : raw_labels)
    bank.merge.label_to_idx[raw] = bank.merge.label_to_idx.at(normalize_label(raw));
  bank.label_names = bank.merge.canonical;
  bank.init_matrix = build_prototype_init(bank.label_names, embedder);
  return bank;
}

void PrototypeBank::write_merge_report(const fs::path& path,
                                       const TextEmbedder& embedder) const {
  std::ostringstream out;
  out << "label merge report: " << label_names.size() << " canonical labels\n";
  for (size_t c = 0; c < label_names.size(); ++c) {
    out << "\ncanonical[" << c << "]: " << label_names[c] << "\n";
    const auto& members = merge.members[c];
    for (const auto& m : members) out << "  member: " << m << "\n";
    std::vector<std::vector<double>> emb;
    for (const auto& m : members) emb.push_back(unit_or_zero(embedder.embed(m)));
    for (size_t i = 0; i < members.size(); ++i)
      for (size_t j = i + 1; j < members.size(); ++j)
        out << "  sim(\"" << members[i] << "\", \"" << members[j]
            << "\") = " << fmt_float(dot(emb[i], emb[j]), 6) << "\n";
  }
  write_text_file(path, out.str());
}

}  // namespace hpl
