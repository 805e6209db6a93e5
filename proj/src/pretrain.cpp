#include "hpl/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hpl/config.hpp"
#include "hpl/errors.hpp"
#include "hpl/optim.hpp"
#include "hpl/prototypes.hpp"

namespace hpl {

void TrainConfig::validate() const {
  if (epochs < 1) throw ParamError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ParamError("train config: batch_size must be >= 1");
  if (final_lr < 0) throw ParamError("train config: final_lr must be >= 0");
  if (warmup_fraction < 0 || warmup_fraction >= 1)
    throw ParamError("train config: warmup_fraction must lie in [0, 1)");
  if (weight_decay < 0) throw ParamError("train config: negative weight decay");
  if (optimizer != "adamw")
    throw ParamError("train config: unsupported optimizer '" + optimizer + "'");
  for (double m : {momentum_schedule.first, momentum_schedule.second})
    if (m < 0 || m > 1) throw ParamError("train config: momentum must lie in [0, 1]");
  if (teacher_temp.start <= 0 || teacher_temp.end <= 0)
    throw ParamError("train config: teacher temperatures must be positive");
  if (teacher_temp.warmup_epochs < 1)
    throw ParamError("train config: teacher temp warmup_epochs must be >= 1");
}

double TrainConfig::resolved_base_lr() const {
  return base_lr > 0 ? base_lr : 2e-3 * static_cast<double>(batch_size) / 2048.0;
}

void PretrainOptions::validate() const {
  vit.validate();
  head.validate();
  loss_weights.validate();
  crops.validate();
  mask.validate();
  train.validate();
  if (merge_threshold <= 0 || merge_threshold > 1)
    throw ParamError("pretrain: merge_threshold must lie in (0, 1]");
  if (sinkhorn_iters < 1) throw ParamError("pretrain: sinkhorn_iters must be >= 1");
  if (crops.global_size != vit.image_size)
    throw ParamError("pretrain: global crop size must match the encoder image size");
  if (crops.local_size % vit.patch_size != 0)
    throw ParamError("pretrain: local crop size must be divisible by the patch size");
}

namespace {

double teacher_temp_at(const TeacherTempSchedule& s, int epoch) {
  const double f = std::min(1.0, static_cast<double>(epoch) /
                                     static_cast<double>(s.warmup_epochs));
  return s.start + (s.end - s.start) * f;
}

// Teacher-side probabilities for the masked patch rows only. The balancing
// step runs across all masked rows of the batch jointly; unmasked rows stay
// zero (the patch loss never reads them).
Tensor masked_patch_probs(const Tensor& logits, const ByteTensor& mask, double temp,
                          int iters) {
  const long R = logits.rows(), K = logits.cols();
  IndexVec rows;
  for (long r = 0; r < R; ++r)
    if (mask[r]) rows.push_back(r);
  Tensor out({R, K});
  if (rows.empty()) return out;
  Tensor gathered({static_cast<long>(rows.size()), K});
  for (size_t i = 0; i < rows.size(); ++i)
    for (long k = 0; k < K; ++k) gathered[i * K + k] = logits[rows[i] * K + k];
  const Tensor p = sinkhorn_knopp(gathered, temp, iters);
  for (size_t i = 0; i < rows.size(); ++i)
    for (long k = 0; k < K; ++k) out[rows[i] * K + k] = p[i * K + k];
  return out;
}

Tensor slice_rows(const Tensor& t, long row0, long count) {
  const long K = t.cols();
  Tensor out({count, K});
  std::copy(t.ptr() + row0 * K, t.ptr() + (row0 + count) * K, out.ptr());
  return out;
}

struct LogLine {
  std::ofstream stream;
  explicit LogLine(const fs::path& p, bool append)
      : stream(p, append ? std::ios::app : std::ios::trunc) {
    if (!stream) throw DataError("cannot open training log " + p.string());
  }
  void write(const nlohmann::json& j) { stream << j.dump() << "\n"; }
};

}  // namespace

PretrainResult pretrain(const CorpusManifest& corpus, const std::string& split,
                        const PretrainOptions& opt, const fs::path& out_dir,
                        const fs::path& resume_from) {
  opt.validate();
  const auto records = corpus.split_records(split);
  if (records.empty())
    throw ParamError("pretrain: split '" + split + "' of corpus '" + corpus.name +
                     "' is empty");
  fs::create_directories(out_dir);

  const TrainConfig& tc = opt.train;
  const uint64_t seed = tc.seed;

  // --- prototype bank (label supervision), built from the corpus label set.
  const bool use_sup = opt.loss_weights.w_sup > 0 && !corpus.label_names.empty();
  std::vector<std::string> canonical;
  std::vector<int> corpus_to_canonical;  // corpus label id -> canonical id
  Tensor w_init;
  if (use_sup) {
    HashEmbedder embedder(opt.vit.dim);
    PrototypeBank bank = PrototypeBank::build(corpus.label_names, embedder, opt.merge_threshold);
    canonical = bank.label_names;
    w_init = bank.init_matrix;
    corpus_to_canonical.resize(corpus.label_names.size());
    for (size_t i = 0; i < corpus.label_names.size(); ++i)
      corpus_to_canonical[i] = bank.merge.label_to_idx.at(corpus.label_names[i]);
    bank.write_merge_report(out_dir / "label_merge.txt", embedder);
  }
  const long n_c = static_cast<long>(canonical.size());

  // --- towers. The teacher starts as an exact copy of the student and is
  // never trainable; it only moves through the EMA update.
  ViT student(opt.vit, mix_seed({seed, 0x73747564656e74ULL}));
  ViT teacher(opt.vit, 0);
  ema_update(teacher.parameters(), student.parameters(), 0.0);
  teacher.set_trainable(false);
  ProjectionHead s_head(opt.vit.dim, opt.head, mix_seed({seed, 0x68656164ULL}), "head");
  ProjectionHead t_head(opt.vit.dim, opt.head, 0, "head");
  ema_update(t_head.parameters(), s_head.parameters(), 0.0);
  t_head.set_trainable(false);

  ag::VarT<Real> proto_w;
  if (use_sup) proto_w = ag::make_var(w_init, /*requires_grad=*/true);

  // --- optimizer over student tower, student head, and the prototype matrix.
  AdamW optimizer;
  {
    std::vector<ParamRef> trainable = student.parameters();
    for (const auto& p : s_head.parameters()) trainable.push_back(p);
    if (proto_w) trainable.push_back({"sup_prototypes.weight", proto_w});
    optimizer.add_model(trainable, tc.weight_decay);
  }

  // --- resume: restore every tensor plus the optimizer clock.
  int start_epoch = 0;
  long gstep = 0;
  auto checkpoint_entries = [&]() {
    std::vector<ParamEntry> entries;
    for (auto& p : student.parameters()) entries.push_back({"student." + p.name, &p.var->val});
    for (auto& p : teacher.parameters()) entries.push_back({"teacher." + p.name, &p.var->val});
    for (auto& p : s_head.parameters())
      entries.push_back({"student_head." + p.name, &p.var->val});
    for (auto& p : t_head.parameters())
      entries.push_back({"teacher_head." + p.name, &p.var->val});
    if (proto_w) entries.push_back({"sup_prototypes.weight", &proto_w->val});
    for (auto e : optimizer.state_entries()) entries.push_back(e);
    return entries;
  };
  if (!resume_from.empty()) {
    const nlohmann::json meta = Checkpoint::load(resume_from, checkpoint_entries());
    if (meta.value("kind", "") != "pretrain")
      throw DataError("resume checkpoint " + resume_from.string() + " is not a pretraining run");
    optimizer.load_state_meta(meta.at("optimizer"));
    start_epoch = meta.at("epoch").get<int>();
    gstep = meta.at("step").get<long>();
    if (start_epoch >= tc.epochs)
      throw ParamError("pretrain: checkpoint already covers " +
                       std::to_string(start_epoch) + " epochs, nothing to resume");
  }

  const long n = static_cast<long>(records.size());
  const long steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const long total_steps = steps_per_epoch * tc.epochs;
  const long warmup_steps =
      std::min<long>(total_steps - 1, std::lround(tc.warmup_fraction * total_steps));
  const double base_lr = tc.resolved_base_lr();

  const int n_g = opt.crops.n_global, n_l = opt.crops.n_local;
  const long n_p = static_cast<long>(opt.vit.grid()) * opt.vit.grid();

  const fs::path log_path = out_dir / "train_log.jsonl";
  LogLine log(log_path, /*append=*/start_epoch > 0);

  PretrainResult result;
  result.checkpoint_dir = out_dir / "checkpoint";
  result.log_path = log_path;
  result.canonical_labels = canonical;

  for (int epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    // Deterministic epoch shuffle, independent of prior epochs.
    std::vector<long> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed({seed, 0x65706f6368ULL, static_cast<uint64_t>(epoch)}));
    shuffle_rng.shuffle(order.begin(), order.end());

    const double t_temp = teacher_temp_at(tc.teacher_temp, epoch);
    EpochStats acc;

    for (long b0 = 0; b0 < n; b0 += tc.batch_size) {
      const long bsz = std::min<long>(tc.batch_size, n - b0);

      // ---- crops and masks, one stateless stream per (epoch, image).
      std::vector<ImageF> globals, locals;
      globals.reserve(bsz * n_g);
      locals.reserve(bsz * n_l);
      auto masks = std::make_shared<ByteTensor>(ByteTensor({bsz * n_g * n_p}));
      std::vector<std::string> batch_ids;
      for (long i = 0; i < bsz; ++i) {
        const SampleRecord& rec = *records[order[b0 + i]];
        batch_ids.push_back(rec.sample_id);
        Rng rng(mix_seed({seed, 0x696d616765ULL, static_cast<uint64_t>(epoch),
                          fnv1a64(rec.sample_id)}));
        const ImageF img = load_sample_image(corpus, rec);
        MultiCropOutput mc = multi_crop(img, opt.crops, rng);
        for (int g = 0; g < n_g; ++g) {
          ByteTensor m = block_mask(n_p, opt.vit.grid(), opt.mask, rng);
          const long base = (i * n_g + g) * n_p;
          for (long t = 0; t < n_p; ++t) (*masks)[base + t] = m[t];
          globals.push_back(std::move(mc.global_crops[g]));
        }
        for (auto& l : mc.local_crops) locals.push_back(std::move(l));
      }

      // ---- teacher pass (no tape) on unmasked globals.
      Tensor t_cls_p, t_patch_p;
      {
        ag::NoGradGuard ng;
        auto t_out = teacher.encode_images(globals);
        const Tensor t_cls_logits = t_head.logits(t_out.cls)->val;
        t_cls_p = sinkhorn_knopp(t_cls_logits, t_temp, opt.sinkhorn_iters);
        const Tensor t_patch_logits = t_head.logits(t_out.patches)->val;
        t_patch_p = masked_patch_probs(t_patch_logits, *masks, t_temp, opt.sinkhorn_iters);
      }

      // ---- student pass: masked globals, unmasked locals.
      auto s_out = student.encode_images(globals, masks);
      auto s_cls_logp = s_head.forward(s_out.cls, opt.head.student_temp);
      auto s_patch_logp = s_head.forward(s_out.patches, opt.head.student_temp);
      ag::VarT<Real> s_loc_cls, s_loc_logp;
      if (n_l > 0) {
        auto l_out = student.encode_images(locals);
        s_loc_cls = l_out.cls;
        s_loc_logp = s_head.forward(s_loc_cls, opt.head.student_temp);
      }

      // ---- image and patch terms, per image, averaged over the batch.
      ag::VarT<Real> image_sum, patch_sum;
      for (long i = 0; i < bsz; ++i) {
        IndexVec grows(n_g);
        std::iota(grows.begin(), grows.end(), i * n_g);
        auto sg = ag::select_rows(s_cls_logp, grows);
        ag::VarT<Real> sl;
        if (n_l > 0) {
          IndexVec lrows(n_l);
          std::iota(lrows.begin(), lrows.end(), i * n_l);
          sl = ag::select_rows(s_loc_logp, lrows);
        }
        auto li = image_level_loss(sg, sl, slice_rows(t_cls_p, i * n_g, n_g));
        image_sum = image_sum ? ag::add(image_sum, li) : li;

        IndexVec prows(n_g * n_p);
        std::iota(prows.begin(), prows.end(), i * n_g * n_p);
        auto sp = ag::select_rows(s_patch_logp, prows);
        ByteTensor mask_i({n_g * n_p});
        for (long t = 0; t < n_g * n_p; ++t) mask_i[t] = (*masks)[i * n_g * n_p + t];
        auto lp = patch_level_loss(sp, slice_rows(t_patch_p, i * n_g * n_p, n_g * n_p),
                                   mask_i, n_g, n_p);
        patch_sum = patch_sum ? ag::add(patch_sum, lp) : lp;
      }
      const Real inv_b = static_cast<Real>(1.0 / static_cast<double>(bsz));
      auto image_term = ag::scale(image_sum, inv_b);
      auto patch_term = ag::scale(patch_sum, inv_b);

      // ---- spreading regularizer per global view across the batch.
      ag::VarT<Real> koleo_term;
      if (opt.loss_weights.w_koleo > 0 && bsz >= 2) {
        ag::VarT<Real> ksum;
        for (int g = 0; g < n_g; ++g) {
          IndexVec vrows(bsz);
          for (long i = 0; i < bsz; ++i) vrows[i] = i * n_g + g;
          auto kv = koleo_loss(ag::select_rows(s_out.cls, vrows));
          ksum = ksum ? ag::add(ksum, kv) : kv;
        }
        koleo_term = ag::scale(ksum, static_cast<Real>(1.0 / n_g));
      }

      // ---- prototype supervision on global cls rows (labeled rows only).
      ag::VarT<Real> sup_term;
      if (proto_w) {
        Tensor y({bsz * n_g, n_c}), ind({bsz * n_g, n_c});
        for (long i = 0; i < bsz; ++i) {
          const SampleRecord& rec = *records[order[b0 + i]];
          std::vector<int> cids;
          for (int lid : rec.label_ids) cids.push_back(corpus_to_canonical[lid]);
          std::sort(cids.begin(), cids.end());
          cids.erase(std::unique(cids.begin(), cids.end()), cids.end());
          for (int g = 0; g < n_g; ++g) {
            const long row = i * n_g + g;
            labels_to_targets(cids, n_c, y.ptr() + row * n_c, ind.ptr() + row * n_c);
          }
        }
        sup_term = supervised_prototype_loss(s_out.cls, proto_w, y, ind);
      }

      LossReport report;
      auto total = hybrid_total_loss(image_term, patch_term, koleo_term, sup_term,
                                     opt.loss_weights, &report);
      if (!std::isfinite(report.total)) {
        nlohmann::json dump = {{"step", gstep},
                               {"epoch", epoch},
                               {"batch_ids", batch_ids},
                               {"report", report.to_json()}};
        write_json_file(out_dir / "abort_diagnostics.json", dump);
        throw NumericError("pretrain: non-finite loss at step " + std::to_string(gstep) +
                           "; diagnostics in " + (out_dir / "abort_diagnostics.json").string());
      }

      const double lr = warmup_cosine_lr(gstep, total_steps, warmup_steps, base_lr, tc.final_lr);
      optimizer.zero_grad();
      ag::backward(total);
      optimizer.step(lr);

      const double momentum =
          total_steps > 1 ? cosine_schedule(gstep, total_steps - 1, tc.momentum_schedule.first,
                                            tc.momentum_schedule.second)
                          : tc.momentum_schedule.first;
      ema_update(teacher.parameters(), student.parameters(), momentum);
      ema_update(t_head.parameters(), s_head.parameters(), momentum);

      nlohmann::json line = report.to_json();
      line["type"] = "step";
      line["step"] = gstep;
      line["epoch"] = epoch;
      line["lr"] = lr;
      line["momentum"] = momentum;
      line["teacher_temp"] = t_temp;
      log.write(line);

      acc.image += report.image_loss;
      acc.patch += report.patch_loss;
      acc.koleo += report.koleo_loss;
      acc.sup += report.sup_loss;
      acc.total += report.total;
      acc.steps += 1;
      ++gstep;
    }

    const double inv = 1.0 / static_cast<double>(std::max<long>(1, acc.steps));
    EpochStats mean{acc.image * inv, acc.patch * inv, acc.koleo * inv,
                    acc.sup * inv,   acc.total * inv, acc.steps};
    result.epoch_means.push_back(mean);
    log.write({{"type", "epoch_mean"},
               {"epoch", epoch},
               {"image", mean.image},
               {"patch", mean.patch},
               {"koleo", mean.koleo},
               {"sup", mean.sup},
               {"total", mean.total},
               {"steps", mean.steps}});
  }
  result.total_steps = gstep;

  nlohmann::json meta = {{"kind", "pretrain"},
                         {"config", pretrain_options_json(opt)},
                         {"epoch", tc.epochs},
                         {"step", gstep},
                         {"seed", seed},
                         {"labels", canonical},
                         {"optimizer", optimizer.state_meta()},
                         {"corpus", corpus.name},
                         {"split", split}};
  Checkpoint::save(result.checkpoint_dir, checkpoint_entries(), meta);
  return result;
}

}  // namespace hpl
