#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "hpl/autograd.hpp"
#include "hpl/dataset.hpp"
#include "hpl/features.hpp"
#include "hpl/tensor.hpp"
#include "hpl/vit.hpp"

namespace hpl {

// Token ids 0..2 are reserved; corpus words follow in sorted order so the
// mapping is independent of sample order.
struct CaptionVocab {
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;

  std::vector<std::string> tokens;  // index == id
  std::unordered_map<std::string, int> index;

  static CaptionVocab build(const std::vector<std::string>& captions);

  long size() const { return static_cast<long>(tokens.size()); }
  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;
};

struct LoRAConfig {
  int rank = 4;
  double alpha = 8.0;
  // Which linear layers get adapters: "attention" (qkv + output projection)
  // and/or "mlp" (both feed-forward layers).
  std::vector<std::string> targets = {"attention"};

  void validate() const;
};

// Small causal transformer used as the caption language model: learned token
// and position embeddings, pre-norm blocks, and a vocabulary projection.
// Adapter factors can be attached to selected linear layers; the second
// factor starts at zero so a freshly adapted decoder computes exactly what
// the base decoder does.
class CaptionDecoder {
 public:
  CaptionDecoder(int width, int depth, int heads, long vocab_size, long max_tokens,
                 uint64_t seed);

  // x holds one embedding row per position, batch-major: [B*T, width].
  ag::VarT<Real> decode(const ag::VarT<Real>& x, long batch, long T) const;

  // Embedding rows for a flat id list (one row per id).
  ag::VarT<Real> embed(const IndexVec& ids) const;

  void apply_lora(const LoRAConfig& cfg, uint64_t seed);

  std::vector<ParamRef> base_parameters() const;
  std::vector<ParamRef> lora_parameters() const;
  void set_base_trainable(bool on);

  int width() const { return width_; }
  long vocab_size() const { return vocab_size_; }
  long max_tokens() const { return max_tokens_; }
  bool has_lora() const { return !lora_.empty(); }

 private:
  struct Block {
    ag::VarT<Real> ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
    ag::VarT<Real> ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };
  struct Adapter {
    ag::VarT<Real> down;  // [rank, in]
    ag::VarT<Real> up;    // [out, rank], zero-initialised
  };

  // Applies a base linear plus its adapter when one is attached.
  ag::VarT<Real> lin(const ag::VarT<Real>& x, const ag::VarT<Real>& w,
                     const ag::VarT<Real>& b, const std::string& site) const;

  int width_ = 0;
  int heads_ = 0;
  long vocab_size_ = 0;
  long max_tokens_ = 0;
  double lora_scale_ = 0.0;
  ag::VarT<Real> tok_embed_, pos_embed_;
  std::vector<Block> blocks_;
  ag::VarT<Real> lnf_g_, lnf_b_, out_w_, out_b_;
  std::vector<ParamRef> base_params_;
  std::unordered_map<std::string, Adapter> lora_;  // keyed "blocks.i.role"
  std::vector<ParamRef> lora_params_;
};

struct CaptionTrainConfig {
  int width = 128;
  int layers = 2;
  int heads = 4;
  int max_len = 24;       // generation cap, in emitted tokens
  int lm_epochs = 40;     // text-only pretraining of the decoder
  double lm_lr = 1e-3;
  int epochs = 2;         // adaptation epochs
  double proj_lr = 4e-4;  // visual projection layer
  double lora_lr = 8e-5;  // adapter factors
  int batch_size = 8;
  LoRAConfig lora;
  uint64_t seed = 0;

  void validate() const;
};

// Frozen-encoder captioner: a projection from encoder cls embeddings into the
// decoder width supplies a one-token visual prefix; the decoder base weights
// stay frozen after text pretraining and only adapters plus the projection
// train during adaptation.
struct CaptionModel {
  CaptionTrainConfig cfg;
  CaptionVocab vocab;
  std::shared_ptr<CaptionDecoder> decoder;
  ag::VarT<Real> proj_w, proj_b;  // [width, enc_dim], [width]
  std::vector<double> lm_losses;
  std::vector<double> adapt_losses;
};

// Builds the vocabulary, pretrains the decoder on caption text alone, freezes
// it, attaches zero-initialised adapters, and creates a fresh projection.
// The result is the "untrained" captioner: adapters have had no effect yet.
CaptionModel caption_build(const ViT& encoder, const CorpusManifest& corpus,
                           const std::string& split, const CaptionTrainConfig& cfg);

// Teacher-forced adaptation on (image, caption) pairs. Only the projection
// and adapter factors receive updates, each under its own learning rate.
// Returns per-epoch mean losses (also appended to model.adapt_losses).
std::vector<double> caption_adapt(CaptionModel& model, const ViT& encoder,
                                  const CorpusManifest& corpus,
                                  const std::string& split);

CaptionModel caption_train(const ViT& encoder, const CorpusManifest& corpus,
                           const std::string& split, const CaptionTrainConfig& cfg);

// Greedy decode for one image; stops at end-of-sequence or after max_len
// tokens (cfg.max_len when max_len <= 0).
std::string caption_generate(const CaptionModel& model, const ViT& encoder,
                             const ImageF& image, int max_len = 0);

struct CaptionEvalRow {
  std::string sample_id;
  std::string reference;
  std::string hypothesis;
};

// Generates a hypothesis for every record in the split, paired with its
// reference caption. This table is the sole input to caption metrics.
std::vector<CaptionEvalRow> caption_eval_rows(const CaptionModel& model,
                                              const ViT& encoder,
                                              const CorpusManifest& corpus,
                                              const std::string& split,
                                              int max_len = 0);

void write_caption_tsv(const std::filesystem::path& path,
                       const std::vector<CaptionEvalRow>& rows);
std::vector<CaptionEvalRow> read_caption_tsv(const std::filesystem::path& path);

}  // namespace hpl
