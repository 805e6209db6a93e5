#include "hpl/caption.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "hpl/errors.hpp"
#include "hpl/image.hpp"
#include "hpl/optim.hpp"
#include "hpl/rng.hpp"
#include "hpl/textmetrics.hpp"

namespace hpl {

CaptionVocab CaptionVocab::build(const std::vector<std::string>& captions) {
  std::set<std::string> words;
  for (const auto& c : captions)
    for (auto& w : textm::tokenize(c)) words.insert(w);
  CaptionVocab v;
  v.tokens = {"<bos>", "<eos>", "<unk>"};
  for (const auto& w : words) v.tokens.push_back(w);
  for (size_t i = 0; i < v.tokens.size(); ++i)
    v.index.emplace(v.tokens[i], static_cast<int>(i));
  return v;
}

std::vector<int> CaptionVocab::encode(const std::string& text) const {
  std::vector<int> ids;
  for (auto& w : textm::tokenize(text)) {
    auto it = index.find(w);
    ids.push_back(it == index.end() ? kUnk : it->second);
  }
  return ids;
}

std::string CaptionVocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= size())
      throw ParamError("vocab decode: id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(size()) + ")");
    if (!out.empty()) out += ' ';
    out += tokens[id];
  }
  return out;
}

void LoRAConfig::validate() const {
  if (rank < 1) throw ParamError("lora rank must be >= 1, got " + std::to_string(rank));
  if (!(alpha > 0) || !std::isfinite(alpha))
    throw ParamError("lora alpha must be a positive finite number");
  if (targets.empty()) throw ParamError("lora targets must name at least one layer group");
  for (const auto& t : targets)
    if (t != "attention" && t != "mlp")
      throw ParamError("unknown lora target '" + t + "' (expected attention or mlp)");
}

void CaptionTrainConfig::validate() const {
  if (width < 1 || width % heads != 0)
    throw ParamError("caption decoder width " + std::to_string(width) +
                     " must be a positive multiple of heads " + std::to_string(heads));
  if (layers < 1) throw ParamError("caption decoder needs at least one layer");
  if (max_len < 1) throw ParamError("max_len must be >= 1");
  if (lm_epochs < 0 || epochs < 0) throw ParamError("epoch counts must be >= 0");
  if (!(lm_lr > 0) || !(proj_lr > 0) || !(lora_lr > 0))
    throw ParamError("caption learning rates must be positive");
  if (batch_size < 1) throw ParamError("batch_size must be >= 1");
  lora.validate();
}

CaptionDecoder::CaptionDecoder(int width, int depth, int heads, long vocab_size,
                               long max_tokens, uint64_t seed)
    : width_(width), heads_(heads), vocab_size_(vocab_size), max_tokens_(max_tokens) {
  if (width < 1 || heads < 1 || width % heads != 0)
    throw ParamError("decoder width " + std::to_string(width) +
                     " must be a positive multiple of heads " + std::to_string(heads));
  if (depth < 1 || vocab_size < 4 || max_tokens < 2)
    throw ParamError("decoder needs depth >= 1, vocab >= 4, max_tokens >= 2");
  const long W = width;
  const long hidden = 4 * W;
  const Rng root(mix_seed({0x63617064656355ULL, seed}));
  uint64_t stream = 0;
  auto randn = [&](std::vector<long> shape, double stddev) {
    Rng r = root.split(stream++);
    return ag::make_var(Tensor::randn(std::move(shape), r, stddev), true);
  };
  auto fill = [&](std::vector<long> shape, Real v) {
    return ag::make_var(Tensor::full(std::move(shape), v), true);
  };
  constexpr double kStd = 0.02;

  tok_embed_ = randn({vocab_size, W}, kStd);
  pos_embed_ = randn({max_tokens, W}, kStd);
  base_params_ = {{"tok_embed.weight", tok_embed_}, {"pos_embed", pos_embed_}};
  blocks_.resize(depth);
  for (int i = 0; i < depth; ++i) {
    Block& blk = blocks_[i];
    blk.ln1_g = fill({W}, 1);
    blk.ln1_b = fill({W}, 0);
    blk.qkv_w = randn({3 * W, W}, kStd);
    blk.qkv_b = fill({3 * W}, 0);
    blk.proj_w = randn({W, W}, kStd);
    blk.proj_b = fill({W}, 0);
    blk.ln2_g = fill({W}, 1);
    blk.ln2_b = fill({W}, 0);
    blk.fc1_w = randn({hidden, W}, kStd);
    blk.fc1_b = fill({hidden}, 0);
    blk.fc2_w = randn({W, hidden}, kStd);
    blk.fc2_b = fill({W}, 0);
    const std::string p = "blocks." + std::to_string(i) + ".";
    base_params_.push_back({p + "ln1.gamma", blk.ln1_g});
    base_params_.push_back({p + "ln1.beta", blk.ln1_b});
    base_params_.push_back({p + "attn.qkv.weight", blk.qkv_w});
    base_params_.push_back({p + "attn.qkv.bias", blk.qkv_b});
    base_params_.push_back({p + "attn.proj.weight", blk.proj_w});
    base_params_.push_back({p + "attn.proj.bias", blk.proj_b});
    base_params_.push_back({p + "ln2.gamma", blk.ln2_g});
    base_params_.push_back({p + "ln2.beta", blk.ln2_b});
    base_params_.push_back({p + "mlp.fc1.weight", blk.fc1_w});
    base_params_.push_back({p + "mlp.fc1.bias", blk.fc1_b});
    base_params_.push_back({p + "mlp.fc2.weight", blk.fc2_w});
    base_params_.push_back({p + "mlp.fc2.bias", blk.fc2_b});
  }
  lnf_g_ = fill({W}, 1);
  lnf_b_ = fill({W}, 0);
  out_w_ = randn({vocab_size, W}, kStd);
  out_b_ = fill({vocab_size}, 0);
  base_params_.push_back({"norm.gamma", lnf_g_});
  base_params_.push_back({"norm.beta", lnf_b_});
  base_params_.push_back({"out.weight", out_w_});
  base_params_.push_back({"out.bias", out_b_});
}

ag::VarT<Real> CaptionDecoder::embed(const IndexVec& ids) const {
  return ag::select_rows(tok_embed_, ids);
}

ag::VarT<Real> CaptionDecoder::lin(const ag::VarT<Real>& x, const ag::VarT<Real>& w,
                                   const ag::VarT<Real>& b,
                                   const std::string& site) const {
  auto base = ag::linear(x, w, b);
  auto it = lora_.find(site);
  if (it == lora_.end()) return base;
  auto delta = ag::matmul(ag::matmul(x, it->second.down, false, true), it->second.up,
                          false, true);
  return ag::add(base, ag::scale(delta, static_cast<Real>(lora_scale_)));
}

ag::VarT<Real> CaptionDecoder::decode(const ag::VarT<Real>& x, long batch,
                                      long T) const {
  const long W = width_;
  const long H = heads_;
  const long dh = W / H;
  if (T < 1 || T > max_tokens_)
    throw ParamError("decode: sequence length " + std::to_string(T) +
                     " outside [1, " + std::to_string(max_tokens_) + "]");
  if (x->val.rows() != batch * T || x->val.cols() != W)
    throw ParamError("decode: input is " + x->val.shape_str() + ", expected [" +
                     std::to_string(batch * T) + ", " + std::to_string(W) + "]");

  ag::VarT<Real> pos = pos_embed_;
  if (T != max_tokens_) {
    IndexVec rows(T);
    for (long t = 0; t < T; ++t) rows[t] = t;
    pos = ag::select_rows(pos_embed_, std::move(rows));
  }
  auto seq = ag::add_tiled(x, pos, T);

  // Future positions are blocked with a large negative bias before softmax.
  Tensor causal({T, T});
  for (long i = 0; i < T; ++i)
    for (long j = 0; j < T; ++j) causal[i * T + j] = j > i ? Real(-1e9) : Real(0);

  const Real att_scale = static_cast<Real>(1.0 / std::sqrt(double(dh)));
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const Block& blk = blocks_[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    auto h = ag::layer_norm(seq, blk.ln1_g, blk.ln1_b);
    auto qkv = lin(h, blk.qkv_w, blk.qkv_b, p + "qkv");
    auto qh = ag::split_heads(ag::slice_cols(qkv, 0, W), batch, T, H);
    auto kh = ag::split_heads(ag::slice_cols(qkv, W, W), batch, T, H);
    auto vh = ag::split_heads(ag::slice_cols(qkv, 2 * W, W), batch, T, H);
    auto scores = ag::scale(ag::bmm(qh, kh, false, true), att_scale);
    auto att = ag::softmax_rows(ag::add_const_tiled(scores, causal, T));
    auto ctx = ag::merge_heads(ag::bmm(att, vh), batch, T, H);
    seq = ag::add(seq, lin(ctx, blk.proj_w, blk.proj_b, p + "proj"));
    auto f = lin(ag::gelu(lin(ag::layer_norm(seq, blk.ln2_g, blk.ln2_b), blk.fc1_w,
                              blk.fc1_b, p + "fc1")),
                 blk.fc2_w, blk.fc2_b, p + "fc2");
    seq = ag::add(seq, f);
  }
  seq = ag::layer_norm(seq, lnf_g_, lnf_b_);
  return ag::linear(seq, out_w_, out_b_);
}

void CaptionDecoder::apply_lora(const LoRAConfig& cfg, uint64_t seed) {
  cfg.validate();
  if (!lora_.empty()) throw ParamError("adapters are already attached to this decoder");
  const long W = width_;
  const long hidden = 4 * W;
  const long r = cfg.rank;
  lora_scale_ = cfg.alpha / cfg.rank;
  const Rng root(mix_seed({0x6c6f7261696e6974ULL, seed}));
  uint64_t stream = 0;
  auto attach = [&](const std::string& site, long out_dim, long in_dim) {
    Adapter a;
    Rng rr = root.split(stream++);
    a.down = ag::make_var(Tensor::randn({r, in_dim}, rr, 0.02), true);
    // Zero second factor: the adapter contributes nothing until trained.
    a.up = ag::make_var(Tensor::full({out_dim, r}, 0), true);
    lora_params_.push_back({site + ".lora_down", a.down});
    lora_params_.push_back({site + ".lora_up", a.up});
    lora_.emplace(site, std::move(a));
  };
  const bool want_attn =
      std::count(cfg.targets.begin(), cfg.targets.end(), "attention") > 0;
  const bool want_mlp = std::count(cfg.targets.begin(), cfg.targets.end(), "mlp") > 0;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    if (want_attn) {
      attach(p + "qkv", 3 * W, W);
      attach(p + "proj", W, W);
    }
    if (want_mlp) {
      attach(p + "fc1", hidden, W);
      attach(p + "fc2", W, hidden);
    }
  }
}

std::vector<ParamRef> CaptionDecoder::base_parameters() const { return base_params_; }
std::vector<ParamRef> CaptionDecoder::lora_parameters() const { return lora_params_; }

void CaptionDecoder::set_base_trainable(bool on) {
  for (auto& p : base_params_) p.var->requires_grad = on;
}

namespace {

// One teacher-forced batch: embedding rows for every position plus flattened
// next-token targets (negative entries are ignored by the loss).
struct SeqBatch {
  ag::VarT<Real> x;
  std::shared_ptr<IndexVec> targets;
  long T = 0;
};

// Text-only sequences: input [bos, w1..wn] padded with eos, targets
// [w1..wn, eos] padded with -1.
SeqBatch make_lm_batch(const CaptionDecoder& dec,
                       const std::vector<std::vector<int>>& seqs,
                       const std::vector<long>& rows) {
  long T = 0;
  for (long r : rows) T = std::max<long>(T, static_cast<long>(seqs[r].size()) + 1);
  const long B = static_cast<long>(rows.size());
  IndexVec ids(B * T);
  auto targets = std::make_shared<IndexVec>(B * T, -1);
  for (long b = 0; b < B; ++b) {
    const auto& s = seqs[rows[b]];
    const long n = static_cast<long>(s.size());
    ids[b * T] = CaptionVocab::kBos;
    for (long t = 0; t < n; ++t) {
      ids[b * T + 1 + t] = s[t];
      (*targets)[b * T + t] = s[t];
    }
    (*targets)[b * T + n] = CaptionVocab::kEos;
    for (long t = n + 1; t < T; ++t) ids[b * T + t] = CaptionVocab::kEos;
  }
  SeqBatch out;
  out.x = dec.embed(ids);
  out.targets = std::move(targets);
  out.T = T;
  return out;
}

// Image-conditioned sequences: position 0 carries the projected cls
// embedding, followed by [bos, w1..wn] with eos padding. Targets shift one
// step left; the prefix position itself predicts nothing.
SeqBatch make_adapt_batch(const CaptionDecoder& dec, const ag::VarT<Real>& prefixes,
                          const std::vector<std::vector<int>>& seqs,
                          const std::vector<long>& rows) {
  long T = 0;
  for (long r : rows) T = std::max<long>(T, static_cast<long>(seqs[r].size()) + 2);
  const long B = static_cast<long>(rows.size());
  auto targets = std::make_shared<IndexVec>(B * T, -1);
  std::vector<ag::VarT<Real>> pieces;
  pieces.reserve(2 * B);
  for (long b = 0; b < B; ++b) {
    const auto& s = seqs[rows[b]];
    const long n = static_cast<long>(s.size());
    IndexVec ids(T - 1, CaptionVocab::kEos);
    ids[0] = CaptionVocab::kBos;
    for (long t = 0; t < n; ++t) {
      ids[1 + t] = s[t];
      (*targets)[b * T + 1 + t] = s[t];
    }
    (*targets)[b * T + 1 + n] = CaptionVocab::kEos;
    pieces.push_back(ag::select_rows(prefixes, IndexVec{b}));
    pieces.push_back(dec.embed(ids));
  }
  SeqBatch out;
  out.x = ag::concat_rows<Real>(pieces);
  out.targets = std::move(targets);
  out.T = T;
  return out;
}

std::vector<std::vector<int>> encode_captions(
    const CaptionVocab& vocab, const std::vector<const SampleRecord*>& records) {
  std::vector<std::vector<int>> seqs;
  seqs.reserve(records.size());
  for (const SampleRecord* rec : records) {
    auto ids = vocab.encode(rec->caption);
    if (ids.empty())
      throw DataError("sample '" + rec->sample_id + "' has an empty caption");
    seqs.push_back(std::move(ids));
  }
  return seqs;
}

std::vector<double> lm_pretrain(CaptionDecoder& dec,
                                const std::vector<std::vector<int>>& seqs,
                                const CaptionTrainConfig& cfg) {
  const long N = static_cast<long>(seqs.size());
  AdamW opt;
  opt.add_group(dec.base_parameters(), 0.0);
  const long batches_per_epoch = (N + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = std::max<long>(1, cfg.lm_epochs * batches_per_epoch);
  std::vector<double> epoch_losses;
  long gstep = 0;
  for (int epoch = 0; epoch < cfg.lm_epochs; ++epoch) {
    std::vector<long> order(N);
    for (long i = 0; i < N; ++i) order[i] = i;
    Rng shuf(mix_seed({cfg.seed, 0x6c6d74657874ULL, static_cast<uint64_t>(epoch)}));
    shuf.shuffle(order.begin(), order.end());
    double epoch_loss = 0;
    for (long b0 = 0; b0 < N; b0 += cfg.batch_size) {
      const long bsz = std::min<long>(cfg.batch_size, N - b0);
      std::vector<long> rows(order.begin() + b0, order.begin() + b0 + bsz);
      auto batch = make_lm_batch(dec, seqs, rows);
      auto logits = dec.decode(batch.x, bsz, batch.T);
      auto loss = ag::nll_rows(ag::log_softmax_rows(logits), batch.targets);
      epoch_loss += static_cast<double>(loss->val[0]) * bsz;
      opt.zero_grad();
      ag::backward(loss);
      const double lr =
          cosine_schedule(gstep, std::max<long>(1, total_steps - 1), cfg.lm_lr, 0.0);
      opt.step(lr);
      ++gstep;
    }
    epoch_losses.push_back(epoch_loss / N);
  }
  return epoch_losses;
}

}  // namespace

CaptionModel caption_build(const ViT& encoder, const CorpusManifest& corpus,
                           const std::string& split, const CaptionTrainConfig& cfg) {
  cfg.validate();
  const auto records = corpus.split_records(split);
  if (records.empty())
    throw DataError("split '" + split + "' of corpus '" + corpus.name +
                    "' has no samples to caption");
  std::vector<std::string> captions;
  captions.reserve(records.size());
  for (const SampleRecord* rec : records) {
    if (textm::tokenize(rec->caption).empty())
      throw DataError("sample '" + rec->sample_id + "' has an empty caption");
    captions.push_back(rec->caption);
  }

  CaptionModel m;
  m.cfg = cfg;
  m.vocab = CaptionVocab::build(captions);
  long max_n = 0;
  std::vector<std::vector<int>> seqs;
  seqs.reserve(captions.size());
  for (const auto& c : captions) {
    seqs.push_back(m.vocab.encode(c));
    max_n = std::max<long>(max_n, static_cast<long>(seqs.back().size()));
  }
  const long max_T = std::max<long>(max_n + 2, cfg.max_len + 2);
  m.decoder = std::make_shared<CaptionDecoder>(cfg.width, cfg.layers, cfg.heads,
                                               m.vocab.size(), max_T,
                                               mix_seed({cfg.seed, 0x646563ULL}));
  m.lm_losses = lm_pretrain(*m.decoder, seqs, cfg);

  // From here on the language model is read-only; adaptation flows through
  // the zero-initialised adapters and the visual projection.
  m.decoder->set_base_trainable(false);
  m.decoder->apply_lora(cfg.lora, mix_seed({cfg.seed, 0x6c6f7261ULL}));
  Rng pr(mix_seed({cfg.seed, 0x70726f6aULL}));
  m.proj_w = ag::make_var(
      Tensor::randn({static_cast<long>(cfg.width), encoder.config().dim, }, pr, 0.02),
      true);
  m.proj_b = ag::make_var(Tensor::full({static_cast<long>(cfg.width)}, 0), true);
  return m;
}

std::vector<double> caption_adapt(CaptionModel& model, const ViT& encoder,
                                  const CorpusManifest& corpus,
                                  const std::string& split) {
  const CaptionTrainConfig& cfg = model.cfg;
  if (!model.decoder) throw ParamError("caption model has no decoder");
  if (!model.decoder->has_lora())
    throw ParamError("caption model has no adapters attached");
  const auto records = corpus.split_records(split);
  const auto seqs = encode_captions(model.vocab, records);
  const FeatureSet feats = extract_features(encoder, corpus, split);
  const long N = feats.n();

  AdamW opt_proj, opt_lora;
  opt_proj.add_group({{"caption_proj.weight", model.proj_w},
                      {"caption_proj.bias", model.proj_b}},
                     0.0);
  opt_lora.add_group(model.decoder->lora_parameters(), 0.0);
  const long batches_per_epoch = (N + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = std::max<long>(1, cfg.epochs * batches_per_epoch);
  std::vector<double> epoch_losses;
  long gstep = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<long> order(N);
    for (long i = 0; i < N; ++i) order[i] = i;
    Rng shuf(mix_seed({cfg.seed, 0x616461707473ULL, static_cast<uint64_t>(epoch)}));
    shuf.shuffle(order.begin(), order.end());
    double epoch_loss = 0;
    for (long b0 = 0; b0 < N; b0 += cfg.batch_size) {
      const long bsz = std::min<long>(cfg.batch_size, N - b0);
      std::vector<long> rows(order.begin() + b0, order.begin() + b0 + bsz);
      Tensor Xb({bsz, feats.dim()});
      for (long b = 0; b < bsz; ++b)
        std::copy_n(feats.X.ptr() + rows[b] * feats.dim(), feats.dim(),
                    Xb.ptr() + b * feats.dim());
      auto prefixes = ag::linear(ag::constant(Xb), model.proj_w, model.proj_b);
      auto batch = make_adapt_batch(*model.decoder, prefixes, seqs, rows);
      auto logits = model.decoder->decode(batch.x, bsz, batch.T);
      auto loss = ag::nll_rows(ag::log_softmax_rows(logits), batch.targets);
      epoch_loss += static_cast<double>(loss->val[0]) * bsz;
      opt_proj.zero_grad();
      opt_lora.zero_grad();
      ag::backward(loss);
      const long denom = std::max<long>(1, total_steps - 1);
      opt_proj.step(cosine_schedule(gstep, denom, cfg.proj_lr, 0.0));
      opt_lora.step(cosine_schedule(gstep, denom, cfg.lora_lr, 0.0));
      ++gstep;
    }
    epoch_losses.push_back(epoch_loss / N);
    model.adapt_losses.push_back(epoch_losses.back());
  }
  return epoch_losses;
}

CaptionModel caption_train(const ViT& encoder, const CorpusManifest& corpus,
                           const std::string& split, const CaptionTrainConfig& cfg) {
  CaptionModel m = caption_build(encoder, corpus, split, cfg);
  caption_adapt(m, encoder, corpus, split);
  return m;
}

std::string caption_generate(const CaptionModel& model, const ViT& encoder,
                             const ImageF& image, int max_len) {
  if (!model.decoder) throw ParamError("caption model has no decoder");
  const CaptionDecoder& dec = *model.decoder;
  long cap = max_len > 0 ? max_len : model.cfg.max_len;
  cap = std::min<long>(cap, dec.max_tokens() - 2);
  ag::NoGradGuard ng;

  const int size = encoder.config().image_size;
  ImageF input = image;
  if (input.h != size || input.w != size) input = resize_bilinear(input, size, size);
  auto enc = encoder.encode_images({input});
  auto prefix = ag::linear(enc.cls, model.proj_w, model.proj_b);

  std::vector<int> out_ids;
  while (static_cast<long>(out_ids.size()) < cap) {
    const long T = static_cast<long>(out_ids.size()) + 2;
    IndexVec ids(T - 1);
    ids[0] = CaptionVocab::kBos;
    for (size_t t = 0; t < out_ids.size(); ++t) ids[1 + t] = out_ids[t];
    auto x = ag::concat_rows<Real>({prefix, dec.embed(ids)});
    auto logits = dec.decode(x, 1, T);
    const Real* row = logits->val.ptr() + (T - 1) * dec.vocab_size();
    long best = 0;
    for (long v = 1; v < dec.vocab_size(); ++v)
      if (row[v] > row[best]) best = v;
    if (best == CaptionVocab::kEos) break;
    out_ids.push_back(static_cast<int>(best));
  }
  return model.vocab.decode(out_ids);
}

std::vector<CaptionEvalRow> caption_eval_rows(const CaptionModel& model,
                                              const ViT& encoder,
                                              const CorpusManifest& corpus,
                                              const std::string& split, int max_len) {
  std::vector<CaptionEvalRow> rows;
  for (const SampleRecord* rec : corpus.split_records(split)) {
    const ImageF img = load_sample_image(corpus, *rec);
    rows.push_back({rec->sample_id, rec->caption,
                    caption_generate(model, encoder, img, max_len)});
  }
  return rows;
}

void write_caption_tsv(const std::filesystem::path& path,
                       const std::vector<CaptionEvalRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "sample_id\treference\thypothesis\n";
  for (const auto& r : rows) {
    if (r.reference.find('\t') != std::string::npos ||
        r.hypothesis.find('\t') != std::string::npos)
      throw DataError("caption for '" + r.sample_id + "' contains a tab");
    out << r.sample_id << '\t' << r.reference << '\t' << r.hypothesis << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<CaptionEvalRow> read_caption_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "sample_id\treference\thypothesis")
    throw DataError(path.string() + ": missing caption table header");
  std::vector<CaptionEvalRow> rows;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto a = line.find('\t');
    const auto b = a == std::string::npos ? a : line.find('\t', a + 1);
    if (a == std::string::npos || b == std::string::npos ||
        line.find('\t', b + 1) != std::string::npos)
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": expected exactly three tab-separated fields");
    rows.push_back({line.substr(0, a), line.substr(a + 1, b - a - 1),
                    line.substr(b + 1)});
  }
  return rows;
}

}  // namespace hpl
