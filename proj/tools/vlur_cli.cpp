#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "vlur/config.hpp"
#include "vlur/harness/ablation.hpp"
#include "vlur/harness/checkpoint.hpp"
#include "vlur/harness/train.hpp"
#include "vlur/image/image.hpp"
#include "vlur/metrics/evaluate.hpp"
#include "vlur/restorer/pipeline.hpp"
#include "vlur/synth/dataset.hpp"
#include "vlur/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vlur;

namespace {

int exit_code_for(const std::string& cls) {
  if (cls == "parameter_error") return 2;
  if (cls == "shape_error") return 3;
  if (cls == "data_error") return 4;
  if (cls == "ingestion_error") return 5;
  if (cls == "config_error") return 6;
  if (cls == "classification_error") return 7;
  if (cls == "protocol_error") return 8;
  if (cls == "scale_error") return 9;
  if (cls == "migration_error") return 10;
  if (cls == "io_error") return 11;
  if (cls == "training_error") return 12;
  return 1;
}

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> sets;
  int64_t seed = -1;

  Config make_config() const {
    Config cfg;
    if (!config_file.empty()) cfg.load_file(config_file);
    for (const auto& kv : sets) cfg.set_override(kv);
    if (seed >= 0) cfg.set("train.seed", seed);
    return cfg;
  }
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_file, "JSON config file");
  cmd->add_option("--set", args.sets, "config override key=value (repeatable)");
  cmd->add_option("--seed", args.seed, "seed override (train.seed)");
}

void write_provenance(const std::string& dir, const std::string& command, const Config& cfg,
                      std::optional<uint64_t> checkpoint_hash) {
  fs::create_directories(dir);
  json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["config"] = cfg.effective();
  j["seed"] = cfg.get_int("train.seed");
  if (checkpoint_hash) {
    char hex[32];
    std::snprintf(hex, sizeof(hex), "0x%016llx", static_cast<unsigned long long>(*checkpoint_hash));
    j["checkpoint_hash"] = std::string(hex);
  }
  std::ofstream out(fs::path(dir) / "provenance.json");
  out << j.dump(2) << "\n";
}

restorer::RestorerConfig restorer_config_from_snapshot(const json& flat) {
  restorer::RestorerConfig rc;
  rc.base_channels = flat.at("restorer.base_channels").get<int64_t>();
  const auto blocks = flat.at("restorer.blocks").get<std::vector<int64_t>>();
  const auto heads = flat.at("restorer.heads").get<std::vector<int64_t>>();
  for (int i = 0; i < 4; ++i) {
    rc.blocks_per_level[static_cast<size_t>(i)] = static_cast<int>(blocks[static_cast<size_t>(i)]);
    rc.heads_per_level[static_cast<size_t>(i)] = static_cast<int>(heads[static_cast<size_t>(i)]);
  }
  rc.ffn_expansion = flat.at("restorer.ffn_expansion").get<double>();
  const auto& tg = flat.at("restorer.text_guidance");
  rc.text_guidance = tg.is_boolean() ? tg.get<bool>() : (tg.get<std::string>() == "on");
  return rc;
}

struct LoadedModel {
  std::unique_ptr<restorer::Restorer<float>> model;
  std::shared_ptr<clf::SceneClassifier> classifier;
  std::optional<uint64_t> checkpoint_hash;
};

// Builds model+classifier; with a checkpoint, the architecture comes from
// the stored config snapshot and the adapter section is applied.
LoadedModel load_model(const Config& cfg, const std::string& checkpoint_path) {
  LoadedModel out;
  out.classifier = harness::make_classifier(cfg);
  if (checkpoint_path.empty()) {
    out.model = std::make_unique<restorer::Restorer<float>>(
        cfg.restorer_config(), static_cast<uint64_t>(cfg.get_int("train.seed")));
    return out;
  }
  auto ck = harness::load_checkpoint(checkpoint_path);
  restorer::RestorerConfig rc = ck.meta.config.contains("restorer.base_channels")
                                    ? restorer_config_from_snapshot(ck.meta.config)
                                    : cfg.restorer_config();
  // flags can still flip the ablation switch at inference
  rc.text_guidance = cfg.restorer_config().text_guidance;
  out.model = std::make_unique<restorer::Restorer<float>>(rc, ck.meta.seed);
  harness::apply_restorer(ck, *out.model);
  if (ck.archive.tensors.count("scene_classifier.adapter.w"))
    harness::apply_adapter(ck, *out.classifier);
  out.checkpoint_hash = ck.content_hash;
  return out;
}

json classification_json(const clf::Classification& cls) {
  json probs = json::array();
  float sum = 0;
  for (int k = 0; k < synth::kNumDegradations; ++k) {
    probs.push_back({{"type", synth::label_of(static_cast<synth::Degradation>(k))},
                     {"prob", cls.probs[static_cast<size_t>(k)]}});
    sum += cls.probs[static_cast<size_t>(k)];
  }
  return json{{"type", synth::label_of(cls.type)},
              {"roman", synth::roman_of(cls.type)},
              {"probs", probs},
              {"prob_sum", sum}};
}

Tensorf side_by_side(const Tensorf& a, const Tensorf& b) {
  const int64_t h = a.dim(0), w = a.dim(1);
  Tensorf grid(Shape{h, 2 * w + 4, 3});
  grid.fill(1.0f);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        grid.at(y, x, c) = a.at(y, x, c);
        grid.at(y, w + 4 + x, c) = b.at(y, x, c);
      }
  return grid;
}

// ------------------------------------------------------------- subcommands

int cmd_synthesize(const CommonArgs& common, const std::string& clean_dir,
                   const std::string& out_dir, int per_type, int generate_clean,
                   const std::string& size, const std::string& split) {
  Config cfg = common.make_config();
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("train.seed"));
  std::string cdir = clean_dir;
  if (generate_clean > 0) {
    int64_t h = 64, w = 64;
    if (!size.empty() && std::sscanf(size.c_str(), "%ldx%ld", &w, &h) != 2)
      throw ParameterError("bad --size, expected WxH");
    if (cdir.empty()) cdir = (fs::path(out_dir) / "generated_clean").string();
    synth::generate_clean_dir(cdir, generate_clean, rng::mix(seed, rng::tag("clean-gen")), h, w);
  }
  if (cdir.empty()) throw ParameterError("either --clean-dir or --generate-clean is required");
  auto manifest = synth::build_synthetic_dataset(cdir, out_dir, per_type, seed, split);
  write_provenance(out_dir, "synthesize", cfg, std::nullopt);
  std::cout << (fs::path(out_dir) / "manifest.json").string() << "\n";
  std::cerr << "wrote " << manifest.entries.size() << " pairs (" << per_type << " per type)\n";
  return 0;
}

int cmd_classify(const CommonArgs& common, const std::string& image_path,
                 const std::string& manifest_path, const std::string& checkpoint,
                 const std::string& backend, bool as_json) {
  Config cfg = common.make_config();
  if (!backend.empty()) cfg.set("classifier.backend", backend);
  auto loaded = load_model(cfg, checkpoint);
  auto classify_one = [&](const Tensorf& image, const std::string& name,
                          std::optional<synth::Degradation> truth) {
    auto cls = loaded.classifier->classify(image);
    if (as_json) {
      json j = classification_json(cls);
      if (!name.empty()) j["image"] = name;
      if (truth) j["truth"] = synth::label_of(*truth);
      std::cout << j.dump() << "\n";
    } else {
      std::cout << (name.empty() ? std::string("image") : name) << ": "
                << synth::label_of(cls.type);
      if (truth) std::cout << " (truth: " << synth::label_of(*truth) << ")";
      std::cout << "\n";
      for (int k = 0; k < synth::kNumDegradations; ++k) {
        char line[96];
        std::snprintf(line, sizeof(line), "  %-15s %.4f\n",
                      synth::label_of(static_cast<synth::Degradation>(k)).c_str(),
                      cls.probs[static_cast<size_t>(k)]);
        std::cout << line;
      }
    }
    return cls;
  };

  if (!image_path.empty()) {
    classify_one(img::read_image(image_path), image_path, std::nullopt);
  } else if (!manifest_path.empty()) {
    auto manifest = synth::load_dataset(manifest_path);
    int correct = 0;
    for (size_t i = 0; i < manifest.entries.size(); ++i) {
      const Tensorf degraded = img::read_image(manifest.degraded_path(i));
      auto cls = classify_one(degraded, manifest.entries[i].degraded, manifest.entries[i].type);
      if (cls.type == manifest.entries[i].type) ++correct;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(manifest.entries.size());
    if (as_json)
      std::cout << json{{"accuracy", acc}, {"count", manifest.entries.size()}}.dump() << "\n";
    else
      std::cout << "accuracy: " << acc * 100.0 << "% over " << manifest.entries.size()
                << " images\n";
  } else {
    throw ParameterError("classify requires --image or --manifest");
  }
  return 0;
}

int cmd_restore(const CommonArgs& common, const std::string& image_path,
                const std::string& manifest_path, const std::string& checkpoint,
                const std::string& type_label, bool auto_guidance, const std::string& out_dir,
                bool grids) {
  Config cfg = common.make_config();
  if (type_label.empty() && !auto_guidance)
    throw ParameterError("restore requires --type <label> or --auto");
  auto loaded = load_model(cfg, checkpoint);
  std::optional<synth::Degradation> override_type;
  if (!type_label.empty()) override_type = synth::degradation_from_label(type_label);
  fs::create_directories(out_dir);

  auto restore_one = [&](const Tensorf& degraded, const std::string& stem) {
    auto guided =
        restorer::restore_with_classifier(*loaded.model, *loaded.classifier, degraded, override_type);
    const std::string out_path = (fs::path(out_dir) / (stem + "_restored.png")).string();
    img::write_png(out_path, guided.restored);
    if (grids)
      img::write_png((fs::path(out_dir) / (stem + "_grid.png")).string(),
                     side_by_side(degraded, guided.restored));
    std::cout << out_path << " guided_by=" << synth::label_of(guided.type_used) << "\n";
  };

  if (!image_path.empty()) {
    restore_one(img::read_image(image_path), fs::path(image_path).stem().string());
  } else if (!manifest_path.empty()) {
    auto manifest = synth::load_dataset(manifest_path);
    for (size_t i = 0; i < manifest.entries.size(); ++i) {
      const Tensorf degraded = img::read_image(manifest.degraded_path(i));
      restore_one(degraded, fs::path(manifest.entries[i].degraded).stem().string() + "_" +
                                std::to_string(i));
    }
  } else {
    throw ParameterError("restore requires --image or --manifest");
  }
  write_provenance(out_dir, "restore", cfg, loaded.checkpoint_hash);
  return 0;
}

int cmd_train(const CommonArgs& common, const std::string& manifest_path,
              const std::string& test_manifest_path, const std::string& phase,
              const std::string& out_dir, const std::string& sc_checkpoint, bool allow_stub_sc) {
  Config cfg = common.make_config();
  auto manifest = synth::load_dataset(manifest_path);
  fs::create_directories(out_dir);

  std::shared_ptr<clf::SceneClassifier> classifier;
  if (phase == "sc" || phase == "all") {
    auto sc = harness::train_sc(cfg, manifest);
    classifier = sc.classifier;
    json j = {{"train_accuracy", sc.report.train_accuracy},
              {"holdout_accuracy", sc.report.holdout_accuracy},
              {"train_count", sc.report.train_count},
              {"holdout_count", sc.report.holdout_count},
              {"epochs", sc.report.epochs}};
    std::ofstream(fs::path(out_dir) / "sc_accuracy.json") << j.dump(2) << "\n";
    std::cout << "sc holdout accuracy: " << sc.report.holdout_accuracy * 100.0 << "%\n";
    // adapter checkpoint with a fresh (identity) restorer
    restorer::Restorer<float> fresh(cfg.restorer_config(),
                                    static_cast<uint64_t>(cfg.get_int("train.seed")));
    harness::CheckpointMeta meta;
    meta.seed = static_cast<uint64_t>(cfg.get_int("train.seed"));
    meta.config = cfg.effective();
    harness::save_checkpoint((fs::path(out_dir) / "sc_checkpoint.vlur").string(), fresh,
                             classifier.get(), nullptr, meta);
  }
  if (phase == "sr" || phase == "all") {
    if (!classifier) {
      classifier = harness::make_classifier(cfg);
      if (!sc_checkpoint.empty()) {
        auto ck = harness::load_checkpoint(sc_checkpoint);
        harness::apply_adapter(ck, *classifier);
      }
    }
    harness::TrainSrOptions opts;
    opts.allow_stub_sc = allow_stub_sc;
    opts.checkpoint_dir = out_dir;
    opts.log_path = (fs::path(out_dir) / "train_log.jsonl").string();
    auto result = harness::train_sr(cfg, manifest, *classifier, opts);
    std::cout << "trained " << result.steps_run << " steps; final checkpoint: "
              << result.final_checkpoint << "\n";
    if (!test_manifest_path.empty()) {
      auto test_manifest = synth::load_dataset(test_manifest_path);
      auto report = metrics::evaluate_report(*result.model, *classifier, test_manifest,
                                             metrics::Guidance::kOracle);
      std::ofstream(fs::path(out_dir) / "eval.json") << report.to_json().dump(2) << "\n";
      std::cout << report.to_table();
    }
  }
  if (phase != "sc" && phase != "sr" && phase != "all")
    throw ParameterError("unknown --phase " + phase + " (expected sc|sr|all)");
  write_provenance(out_dir, "train:" + phase, cfg, std::nullopt);
  return 0;
}

int cmd_evaluate(const CommonArgs& common, const std::string& checkpoint,
                 const std::string& manifest_path, const std::string& guidance, bool as_json,
                 const std::string& out_file) {
  Config cfg = common.make_config();
  auto manifest = synth::load_dataset(manifest_path);
  auto loaded = load_model(cfg, checkpoint);
  const auto mode = guidance == "oracle" ? metrics::Guidance::kOracle
                    : guidance == "predicted"
                        ? metrics::Guidance::kPredicted
                        : throw ParameterError("bad --guidance (expected predicted|oracle)");
  auto report = metrics::evaluate_report(*loaded.model, *loaded.classifier, manifest, mode,
                                         cfg.get_bool("eval.quantize"),
                                         cfg.get_bool("eval.per_type_mean"));
  const std::string payload = report.to_json().dump(2) + "\n";
  if (!out_file.empty()) std::ofstream(out_file) << payload;
  if (as_json)
    std::cout << payload;
  else
    std::cout << report.to_table();
  return 0;
}

int cmd_ablate(const CommonArgs& common, const std::string& manifest_path,
               const std::string& test_manifest_path, const std::string& grid,
               const std::string& out_dir, bool allow_stub_sc) {
  Config cfg = common.make_config();
  auto train_manifest = synth::load_dataset(manifest_path);
  auto test_manifest = synth::load_dataset(test_manifest_path);
  const bool loss_axis = grid.find("loss") != std::string::npos;
  const bool text_axis = grid.find("text") != std::string::npos;
  if (!loss_axis && !text_axis)
    throw ParameterError("--grid must name loss, text, or loss,text");
  auto classifier = harness::make_classifier(cfg);
  auto report = harness::run_ablation(cfg, train_manifest, test_manifest, *classifier,
                                      harness::ablation_grid(loss_axis, text_axis), allow_stub_sc);
  fs::create_directories(out_dir);
  std::ofstream(fs::path(out_dir) / "ablation.json") << report.to_json().dump(2) << "\n";
  write_provenance(out_dir, "ablate", cfg, std::nullopt);
  std::cout << report.to_table();
  return 0;
}

int cmd_benchmark(const CommonArgs& common, const std::string& checkpoint,
                  const std::string& resolution, int runs) {
  Config cfg = common.make_config();
  int64_t w = 1920, h = 1080;
  if (!resolution.empty() && std::sscanf(resolution.c_str(), "%ldx%ld", &w, &h) != 2)
    throw ParameterError("bad --resolution, expected WxH");
  auto loaded = load_model(cfg, checkpoint);
  auto rs = rng::stream(static_cast<uint64_t>(cfg.get_int("train.seed")), "benchmark");
  Tensorf image = Tensorf::rand_uniform(Shape{h, w, 3}, rs, 0.0f, 1.0f);
  Tensorf y_text(Shape{clf::kEmbeddingDim});
  y_text[0] = 1.0f;

  std::vector<double> ms;
  for (int i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)restorer::restore_image_padded(*loaded.model, image, y_text);
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  double mean = 0, mn = ms[0], mx = ms[0];
  for (double v : ms) {
    mean += v / static_cast<double>(ms.size());
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  json j = {{"resolution", std::to_string(w) + "x" + std::to_string(h)},
            {"runs", runs},
            {"mean_ms", mean},
            {"min_ms", mn},
            {"max_ms", mx},
            {"threads", thread_count()}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string(kVersion) +
               " - vision-language guided restoration of composite weather degradations"};
  app.require_subcommand(1);

  CommonArgs common;

  // synthesize
  auto* syn = app.add_subcommand("synthesize", "build a paired synthetic degradation dataset");
  std::string syn_clean, syn_out, syn_size = "64x64", syn_split = "train";
  int syn_per_type = 8, syn_generate = 0;
  add_common(syn, common);
  syn->add_option("--clean-dir", syn_clean, "directory of clean PNG/JPEG images");
  syn->add_option("--out", syn_out, "output dataset directory")->required();
  syn->add_option("--per-type", syn_per_type, "pairs per degradation type");
  syn->add_option("--generate-clean", syn_generate, "synthesize N procedural clean images first");
  syn->add_option("--size", syn_size, "WxH for generated clean images");
  syn->add_option("--split", syn_split, "split tag (train|test)");

  // classify
  auto* cls = app.add_subcommand("classify", "predict the degradation type of images");
  std::string cls_image, cls_manifest, cls_checkpoint, cls_backend;
  bool cls_json = false;
  add_common(cls, common);
  cls->add_option("--image", cls_image, "single image");
  cls->add_option("--manifest", cls_manifest, "dataset manifest or directory");
  cls->add_option("--checkpoint", cls_checkpoint, "checkpoint with a scene classifier adapter");
  cls->add_option("--backend", cls_backend, "encoder backend (stub|pretrained)");
  cls->add_flag("--json", cls_json, "machine-readable output");

  // restore
  auto* res = app.add_subcommand("restore", "restore degraded images");
  std::string res_image, res_manifest, res_checkpoint, res_type, res_out = "restored";
  bool res_auto = false, res_grid = false;
  add_common(res, common);
  res->add_option("--image", res_image, "single image");
  res->add_option("--manifest", res_manifest, "dataset manifest or directory");
  res->add_option("--checkpoint", res_checkpoint, "trained checkpoint");
  res->add_option("--type", res_type, "manual degradation type guidance");
  res->add_flag("--auto", res_auto, "use the scene classifier prediction");
  res->add_option("--out", res_out, "output directory");
  res->add_flag("--grid", res_grid, "also write input|restored grids");

  // train
  auto* trn = app.add_subcommand("train", "two-phase training (SC then SR)");
  std::string trn_manifest, trn_test_manifest, trn_phase = "all", trn_out = "runs/run",
              trn_sc_ckpt;
  bool trn_allow_stub = false;
  add_common(trn, common);
  trn->add_option("--manifest", trn_manifest, "training manifest")->required();
  trn->add_option("--test-manifest", trn_test_manifest, "optional eval split");
  trn->add_option("--phase", trn_phase, "sc|sr|all");
  trn->add_option("--out", trn_out, "output directory");
  trn->add_option("--sc-checkpoint", trn_sc_ckpt, "frozen SC checkpoint for --phase sr");
  trn->add_flag("--allow-stub-sc", trn_allow_stub,
                "permit SR training with an unfrozen zero-shot classifier");

  // evaluate
  auto* evl = app.add_subcommand("evaluate", "per-type PSNR/SSIM report");
  std::string evl_checkpoint, evl_manifest, evl_guidance = "oracle", evl_out;
  bool evl_json = false;
  add_common(evl, common);
  evl->add_option("--checkpoint", evl_checkpoint, "trained checkpoint");
  evl->add_option("--manifest", evl_manifest, "test manifest or directory")->required();
  evl->add_option("--guidance", evl_guidance, "predicted|oracle");
  evl->add_flag("--json", evl_json, "print the JSON report");
  evl->add_option("--out", evl_out, "also write the JSON report to a file");

  // ablate
  auto* abl = app.add_subcommand("ablate", "loss/text ablation grid");
  std::string abl_manifest, abl_test, abl_grid = "loss,text", abl_out = "runs/ablation";
  bool abl_allow_stub = false;
  add_common(abl, common);
  abl->add_option("--manifest", abl_manifest, "training manifest")->required();
  abl->add_option("--test-manifest", abl_test, "test manifest")->required();
  abl->add_option("--grid", abl_grid, "loss, text, or loss,text");
  abl->add_option("--out", abl_out, "output directory");
  abl->add_flag("--allow-stub-sc", abl_allow_stub, "permit an unfrozen zero-shot classifier");

  // benchmark
  auto* ben = app.add_subcommand("benchmark", "forward-pass latency (informational)");
  std::string ben_checkpoint, ben_resolution = "1920x1080";
  int ben_runs = 3;
  add_common(ben, common);
  ben->add_option("--checkpoint", ben_checkpoint, "checkpoint (fresh model when omitted)");
  ben->add_option("--resolution", ben_resolution, "WxH input size");
  ben->add_option("--runs", ben_runs, "number of timed runs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (syn->parsed())
      return cmd_synthesize(common, syn_clean, syn_out, syn_per_type, syn_generate, syn_size,
                            syn_split);
    if (cls->parsed())
      return cmd_classify(common, cls_image, cls_manifest, cls_checkpoint, cls_backend, cls_json);
    if (res->parsed())
      return cmd_restore(common, res_image, res_manifest, res_checkpoint, res_type, res_auto,
                         res_out, res_grid);
    if (trn->parsed())
      return cmd_train(common, trn_manifest, trn_test_manifest, trn_phase, trn_out, trn_sc_ckpt,
                       trn_allow_stub);
    if (evl->parsed())
      return cmd_evaluate(common, evl_checkpoint, evl_manifest, evl_guidance, evl_json, evl_out);
    if (abl->parsed())
      return cmd_ablate(common, abl_manifest, abl_test, abl_grid, abl_out, abl_allow_stub);
    if (ben->parsed()) return cmd_benchmark(common, ben_checkpoint, ben_resolution, ben_runs);
  } catch (const Error& e) {
    std::cerr << json{{"error", e.error_class()}, {"message", e.what()}}.dump() << "\n";
    return exit_code_for(e.error_class());
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
  return 1;
}
