#include "vlur/harness/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "vlur/harness/checkpoint.hpp"
#include "vlur/image/image.hpp"
#include "vlur/losses/losses.hpp"

namespace vlur::harness {

namespace fs = std::filesystem;
using nlohmann::json;

std::shared_ptr<clf::SceneClassifier> make_classifier(const Config& cfg) {
  auto backend = clf::make_backend(cfg.get_string("classifier.backend"),
                                   cfg.get_string("classifier.pretrained_path"));
  return std::make_shared<clf::SceneClassifier>(
      std::shared_ptr<clf::EncoderBackend>(std::move(backend)),
      static_cast<float>(cfg.get_double("classifier.temperature")));
}

TrainScResult train_sc(const Config& cfg, const synth::DatasetManifest& manifest,
                       double holdout_fraction) {
  if (manifest.entries.empty()) throw DataError("train_sc: empty manifest");
  auto classifier = make_classifier(cfg);
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("train.seed"));

  // stratified holdout split, deterministic in the seed
  std::vector<size_t> train_idx, holdout_idx;
  for (auto type : synth::all_degradations()) {
    auto idx = manifest.indices_of_type(type);
    auto rs = rng::stream(seed, "sc-split", {static_cast<uint64_t>(type)});
    for (size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<size_t>(rs.uniform_int(static_cast<int64_t>(i)))]);
    const size_t hold = static_cast<size_t>(std::llround(holdout_fraction * static_cast<double>(idx.size())));
    for (size_t i = 0; i < idx.size(); ++i)
      (i < hold ? holdout_idx : train_idx).push_back(idx[i]);
  }

  auto embed = [&](const std::vector<size_t>& ids, std::vector<Tensorf>& embs,
                   std::vector<int>& labels) {
    for (size_t id : ids) {
      const Tensorf degraded = img::read_image(manifest.degraded_path(id));
      embs.push_back(classifier->backend().encode_image(degraded));
      labels.push_back(static_cast<int>(manifest.entries[id].type));
    }
  };
  std::vector<Tensorf> train_embs, holdout_embs;
  std::vector<int> train_labels, holdout_labels;
  embed(train_idx, train_embs, train_labels);
  embed(holdout_idx, holdout_embs, holdout_labels);

  TrainScResult out;
  out.report = classifier->finetune_adapter(
      train_embs, train_labels, holdout_embs, holdout_labels,
      static_cast<int>(cfg.get_int("classifier.adapter_epochs")),
      cfg.get_double("classifier.adapter_lr"), seed);
  out.classifier = std::move(classifier);
  return out;
}

namespace {

struct LoadedPair {
  Tensorf clean;
  Tensorf degraded;
  synth::Degradation type;
};

Tensorf crop_at(const Tensorf& im, int64_t y0, int64_t x0, int64_t size) {
  Tensorf out(Shape{size, size, 3});
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x)
      for (int64_t c = 0; c < 3; ++c) out.at(y, x, c) = im.at(y0 + y, x0 + x, c);
  return out;
}

// Balanced per-epoch order: per-type shuffles interleaved round-robin.
std::vector<size_t> epoch_schedule(const synth::DatasetManifest& m, uint64_t seed, int64_t epoch) {
  std::vector<std::vector<size_t>> per_type;
  size_t longest = 0;
  for (auto type : synth::all_degradations()) {
    auto idx = m.indices_of_type(type);
    auto rs = rng::stream(seed, "schedule",
                          {static_cast<uint64_t>(epoch), static_cast<uint64_t>(type)});
    for (size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<size_t>(rs.uniform_int(static_cast<int64_t>(i)))]);
    longest = std::max(longest, idx.size());
    if (!idx.empty()) per_type.push_back(std::move(idx));
  }
  std::vector<size_t> flat;
  for (size_t p = 0; p < longest; ++p)
    for (const auto& lst : per_type)
      if (p < lst.size()) flat.push_back(lst[p]);
  return flat;
}

double grad_norm(const nn::ParamStore<float>& store) {
  double s = 0;
  for (const auto& [name, v] : store.all()) {
    if (!v.requires_grad() || v.node()->grad.numel() == 0) continue;
    for (int64_t i = 0; i < v.node()->grad.numel(); ++i) {
      const double g = v.node()->grad[i];
      s += g * g;
    }
  }
  return std::sqrt(s);
}

}  // namespace

TrainSrResult train_sr(const Config& cfg, const synth::DatasetManifest& train_manifest,
                       clf::SceneClassifier& classifier, const TrainSrOptions& opts) {
  if (train_manifest.entries.empty()) throw DataError("train_sr: empty manifest");
  if (!classifier.frozen() && !opts.allow_stub_sc)
    throw ProtocolError(
        "scene classifier is not frozen; run the SC phase first or pass --allow-stub-sc");
  const uint64_t sc_checksum_before = classifier.checksum();

  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("train.seed"));
  const int64_t epochs = cfg.get_int("train.epochs");
  const int64_t batch = std::max<int64_t>(1, cfg.get_int("train.batch_size"));
  const int64_t crop = cfg.get_int("train.crop");
  const int64_t max_steps = cfg.get_int("train.max_steps");
  const double lr0 = cfg.get_double("train.lr");
  const double lr_min = cfg.get_double("train.lr_min");
  const int64_t warmup = cfg.get_int("train.warmup_steps");
  const double clip_norm = cfg.get_double("train.clip_grad_norm");
  const int64_t ckpt_every = cfg.get_int("train.checkpoint_every_epochs");
  const int n_negatives = static_cast<int>(cfg.get_int("loss.negatives"));
  if (crop % 8 != 0) throw ConfigError("train.crop must be a multiple of 8");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (lr0 <= 0) throw ConfigError("train.lr must be > 0");

  losses::LossWeights weights = cfg.loss_weights();
  if (weights.gamma2 > 0) {
    const int64_t needed = static_cast<int64_t>(weights.msssim.window)
                           << (weights.msssim.scales - 1);
    if (crop < needed)
      throw ScaleError("crop " + std::to_string(crop) + " too small for " +
                       std::to_string(weights.msssim.scales) +
                       " MS-SSIM scales; lower loss.msssim_scales");
  }

  std::vector<int> taps;
  for (int64_t t : cfg.get_int_list("loss.vgg_taps")) taps.push_back(static_cast<int>(t));
  losses::VggFeatureExtractor<float> vgg(taps, rng::mix(seed, rng::tag("vgg-ci-weights")));
  if (cfg.get_string("loss.vgg_weights") == "pretrained") {
    const std::string path = cfg.get_string("loss.vgg_weights_path");
    if (path.empty())
      throw ConfigError("loss.vgg_weights=pretrained requires loss.vgg_weights_path");
    vgg.load_weights(path);
  }

  // preload the whole split; desk-scale sets fit in memory comfortably
  std::vector<LoadedPair> data;
  data.reserve(train_manifest.entries.size());
  for (size_t i = 0; i < train_manifest.entries.size(); ++i) {
    auto pr = synth::load_pair(train_manifest, i);
    if (pr.clean.dim(0) < crop || pr.clean.dim(1) < crop)
      throw DataError("image " + train_manifest.degraded_path(i) + " smaller than train.crop");
    data.push_back({std::move(pr.clean), std::move(pr.degraded), pr.type});
  }

  auto model = std::make_unique<restorer::Restorer<float>>(cfg.restorer_config(), seed);
  nn::Adam<float> adam(model->params());

  const int64_t steps_per_epoch =
      (static_cast<int64_t>(data.size()) + batch - 1) / batch;
  // the lr schedule spans the planned epochs; max_steps only cuts the run short
  const int64_t total_planned = epochs * steps_per_epoch;

  int64_t start_epoch = 0;
  int64_t global_step = 0;
  if (!opts.resume_from.empty()) {
    auto ck = load_checkpoint(opts.resume_from);
    apply_restorer(ck, *model);
    apply_optimizer(ck, *model, adam);
    start_epoch = ck.meta.epoch;
    global_step = ck.meta.step;
  }

  std::ofstream log_file;
  if (!opts.log_path.empty()) {
    log_file.open(opts.log_path, std::ios::app);
    if (!log_file) throw IoError("cannot open training log " + opts.log_path);
  }
  if (!opts.checkpoint_dir.empty()) fs::create_directories(opts.checkpoint_dir);

  CheckpointMeta meta;
  meta.seed = seed;
  meta.config = cfg.effective();

  auto write_checkpoint = [&](const std::string& name, int64_t epoch, int64_t step) {
    if (opts.checkpoint_dir.empty()) return std::string();
    meta.epoch = epoch;
    meta.step = step;
    const std::string path = (fs::path(opts.checkpoint_dir) / name).string();
    save_checkpoint(path, *model, &classifier, &adam, meta);
    return path;
  };

  TrainSrResult result;
  const Tensorf text_matrix = classifier.text_matrix();
  bool stop = false;

  for (int64_t epoch = start_epoch; epoch < epochs && !stop; ++epoch) {
    const auto schedule = epoch_schedule(train_manifest, seed, epoch);
    for (int64_t step = 0; step < steps_per_epoch && !stop; ++step) {
      if (max_steps > 0 && global_step >= max_steps) {
        stop = true;
        break;
      }
      model->params().zero_grad();
      double sum_l1 = 0, sum_ms = 0, sum_cd = 0, sum_total = 0;
      const double lr =
          global_step < warmup
              ? lr0 * static_cast<double>(global_step + 1) / static_cast<double>(warmup)
              : nn::cosine_lr(lr0, lr_min, global_step - warmup, total_planned - warmup);
      const float inv_batch = 1.0f / static_cast<float>(batch);

      for (int64_t slot = 0; slot < batch; ++slot) {
        const size_t entry =
            schedule[static_cast<size_t>((step * batch + slot) % static_cast<int64_t>(schedule.size()))];
        const LoadedPair& pair = data[entry];

        auto crop_rs = rng::stream(seed, "crop",
                                   {static_cast<uint64_t>(epoch), static_cast<uint64_t>(step),
                                    static_cast<uint64_t>(slot)});
        const int64_t y0 = crop_rs.uniform_int(pair.clean.dim(0) - crop + 1);
        const int64_t x0 = crop_rs.uniform_int(pair.clean.dim(1) - crop + 1);
        Tensorf clean_c = crop_at(pair.clean, y0, x0, crop);
        Tensorf degraded_c = crop_at(pair.degraded, y0, x0, crop);

        std::vector<Tensorf> negatives;
        if (weights.gamma3 > 0 && n_negatives > 0) {
          // negatives re-drawn each epoch from an epoch-salted seed
          const auto neg_idx = synth::sample_negative_indices(
              train_manifest, entry, n_negatives,
              rng::mix(seed, rng::mix(rng::tag("neg-epoch"), static_cast<uint64_t>(epoch))));
          int j = 0;
          for (size_t ni : neg_idx) {
            const LoadedPair& np = data[ni];
            auto nrs = rng::stream(seed, "negcrop",
                                   {static_cast<uint64_t>(epoch), static_cast<uint64_t>(step),
                                    static_cast<uint64_t>(slot), static_cast<uint64_t>(j++)});
            const int64_t ny = nrs.uniform_int(np.degraded.dim(0) - crop + 1);
            const int64_t nx = nrs.uniform_int(np.degraded.dim(1) - crop + 1);
            negatives.push_back(crop_at(np.degraded, ny, nx, crop));
          }
        }

        // ground-truth type text guides training
        Tensorf y_text(Shape{1, clf::kEmbeddingDim});
        std::copy_n(text_matrix.ptr() + static_cast<int64_t>(pair.type) * clf::kEmbeddingDim,
                    clf::kEmbeddingDim, y_text.ptr());

        auto x = make_leaf(Tensorf(Shape{1, crop, crop, 3}, degraded_c.data), false);
        auto yt = make_leaf(std::move(y_text), false);
        auto restored = model->forward(x, yt, restorer::RunMode::kTrain);
        auto lt = losses::total_loss(restored, clean_c, degraded_c, negatives, vgg, weights);

        if (!std::isfinite(lt.value))
          throw TrainingError(
              "non-finite loss at step " + std::to_string(global_step) + ": l1=" +
              std::to_string(lt.l1) + " msssim=" + std::to_string(lt.msssim) + " cdrl=" +
              std::to_string(lt.cdrl) + " grad_norm=" + std::to_string(grad_norm(model->params())));

        auto scaled = mul_scalar(lt.total, inv_batch);
        scaled.backward();
        sum_l1 += lt.l1;
        sum_ms += lt.msssim;
        sum_cd += lt.cdrl;
        sum_total += lt.value;
      }

      if (clip_norm > 0) {
        const double norm = grad_norm(model->params());
        if (norm > clip_norm) {
          const float scale = static_cast<float>(clip_norm / norm);
          for (const auto& [nm, v] : model->params().all()) {
            if (!v.requires_grad()) continue;
            TensorT<float>& g = v.node()->grad_buffer();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] *= scale;
          }
        }
      }
      adam.step(static_cast<float>(lr));
      ++global_step;

      LossRecord rec{global_step, sum_l1 / static_cast<double>(batch),
                     sum_ms / static_cast<double>(batch), sum_cd / static_cast<double>(batch),
                     sum_total / static_cast<double>(batch), lr};
      result.log.push_back(rec);
      if (log_file.is_open()) {
        json line = {{"step", rec.step}, {"l1", rec.l1},       {"msssim", rec.msssim},
                     {"cdrl", rec.cdrl}, {"total", rec.total}, {"lr", rec.lr}};
        log_file << line.dump() << "\n";
      }

      if (opts.probe && opts.probe_every > 0 && global_step % opts.probe_every == 0)
        if (opts.probe(*model, global_step)) stop = true;
    }
    result.epochs_run = epoch + 1;
    if (ckpt_every > 0 && (epoch + 1) % ckpt_every == 0 && epoch + 1 < epochs)
      write_checkpoint("checkpoint_epoch_" + std::to_string(epoch + 1) + ".vlur", epoch + 1,
                       global_step);
  }

  result.final_checkpoint =
      write_checkpoint("checkpoint_final.vlur", result.epochs_run, global_step);
  result.steps_run = global_step;
  result.param_hash = model->params().content_hash();
  result.model = std::move(model);

  if (classifier.checksum() != sc_checksum_before)
    throw ProtocolError("scene classifier parameters changed during restorer training");
  return result;
}

}  // namespace vlur::harness
