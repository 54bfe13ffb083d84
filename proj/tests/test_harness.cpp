#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "testutil.hpp"
#include "vlur/harness/ablation.hpp"
#include "vlur/harness/checkpoint.hpp"
#include "vlur/harness/train.hpp"
#include "vlur/metrics/evaluate.hpp"
#include "vlur/synth/dataset.hpp"

using namespace vlur;
using namespace vlur::harness;

namespace {

// Small everything: 4-channel model, 16px crops, 11-pair dataset.
Config tiny_config() {
  Config cfg;
  cfg.set("restorer.base_channels", 4);
  cfg.set("restorer.blocks", nlohmann::json::array({1, 1, 1, 1}));
  cfg.set("restorer.heads", nlohmann::json::array({1, 1, 2, 2}));
  cfg.set("train.crop", 16);
  cfg.set("train.epochs", 2);
  cfg.set("train.batch_size", 2);
  cfg.set("train.checkpoint_every_epochs", 1);
  cfg.set("loss.msssim_scales", 1);
  cfg.set("loss.negatives", 1);
  cfg.set("loss.vgg_taps", nlohmann::json::array({2}));
  cfg.set("classifier.adapter_epochs", 3);
  return cfg;
}

const synth::DatasetManifest& tiny_dataset() {
  static testutil::TempDir tmp("harness_ds");
  static synth::DatasetManifest manifest = [] {
    synth::generate_clean_dir(tmp.file("clean"), 3, 5, 24, 24);
    return synth::build_synthetic_dataset(tmp.file("clean"), tmp.file("ds"), 1, 31, "train");
  }();
  return manifest;
}

bool bit_equal(const Tensorf& a, const Tensorf& b) {
  if (a.shape != b.shape) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("tensor archive round-trips bit-exactly and rejects tampering") {
  testutil::TempDir tmp("archive");
  auto rs = rng::stream(3, "a");
  io::Archive a;
  a.tensors["alpha"] = Tensorf::randn({3, 5}, rs);
  a.tensors["beta"] = Tensorf::randn({7}, rs);
  a.meta["note"] = "test";
  io::save_archive(tmp.file("t.vlur"), a);

  const io::Archive b = io::load_archive(tmp.file("t.vlur"));
  CHECK(b.meta["note"] == "test");
  CHECK(bit_equal(b.tensors.at("alpha"), a.tensors.at("alpha")));
  CHECK(bit_equal(b.tensors.at("beta"), a.tensors.at("beta")));
  CHECK(b.content_hash == io::tensors_hash(a.tensors));

  SUBCASE("bad magic is a migration error") {
    std::ofstream out(tmp.file("bad.vlur"), std::ios::binary);
    out << "NOTANARCHIVE____________";
    out.close();
    CHECK_THROWS_AS(io::load_archive(tmp.file("bad.vlur")), MigrationError);
  }
  SUBCASE("flipped blob byte is detected by the content hash") {
    std::fstream f(tmp.file("t.vlur"), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-1, std::ios::end);
    char c;
    f.seekg(-1, std::ios::end);
    f.get(c);
    f.seekp(-1, std::ios::end);
    c = static_cast<char>(c ^ 0x40);
    f.put(c);
    f.close();
    CHECK_THROWS_AS(io::load_archive(tmp.file("t.vlur")), DataError);
  }
}

TEST_CASE("checkpoint save/load reproduces forward outputs bit-exactly") {
  testutil::TempDir tmp("ckpt");
  Config cfg = tiny_config();
  auto model = restorer::Restorer<float>(cfg.restorer_config(), 11);
  auto rs = rng::stream(5, "c");
  // non-trivial weights so the forward is not the identity
  model.params().find("final.w").val_mut() = Tensorf::randn({3, 3, 4, 3}, rs, 0.1f);

  auto classifier = make_classifier(cfg);
  nn::Adam<float> adam(model.params());
  CheckpointMeta meta;
  meta.epoch = 3;
  meta.step = 17;
  meta.seed = 99;
  meta.config = cfg.effective();
  save_checkpoint(tmp.file("m.vlur"), model, classifier.get(), &adam, meta);

  auto ck = load_checkpoint(tmp.file("m.vlur"));
  CHECK(ck.meta.epoch == 3);
  CHECK(ck.meta.step == 17);
  CHECK(ck.meta.seed == 99);
  CHECK(ck.content_hash != 0);

  restorer::Restorer<float> reloaded(cfg.restorer_config(), 12345);  // different init seed
  apply_restorer(ck, reloaded);
  auto x = make_leaf(Tensorf::rand_uniform({1, 16, 16, 3}, rs, 0, 1), false);
  auto yt = make_leaf(Tensorf::randn({1, 512}, rs), false);
  CHECK(bit_equal(model.forward(x, yt, restorer::RunMode::kEval).val(),
                  reloaded.forward(x, yt, restorer::RunMode::kEval).val()));

  SUBCASE("optimizer state round-trips") {
    nn::Adam<float> restored(reloaded.params());
    apply_optimizer(ck, reloaded, restored);
    CHECK(restored.step_count() == adam.step_count());
  }
  SUBCASE("adapter section round-trips") {
    auto clf2 = make_classifier(cfg);
    apply_adapter(ck, *clf2);
    CHECK(clf2->checksum() == classifier->checksum());
  }
  SUBCASE("checkpoint version mismatch is an explicit migration error") {
    // rewrite with a bumped version field inside the manifest
    io::Archive raw = io::load_archive(tmp.file("m.vlur"));
    raw.meta["checkpoint_version"] = 999;
    io::save_archive(tmp.file("v999.vlur"), raw);
    CHECK_THROWS_AS(load_checkpoint(tmp.file("v999.vlur")), MigrationError);
  }
  SUBCASE("a non-checkpoint archive is rejected") {
    io::Archive other;
    other.tensors["x"] = Tensorf::zeros({2});
    io::save_archive(tmp.file("other.vlur"), other);
    CHECK_THROWS_AS(load_checkpoint(tmp.file("other.vlur")), MigrationError);
  }
}

TEST_CASE("scene classifier phase trains, freezes and reports accuracy") {
  Config cfg = tiny_config();
  auto result = train_sc(cfg, tiny_dataset());
  CHECK(result.classifier->frozen());
  CHECK(result.report.train_count > 0);
  CHECK(result.report.train_accuracy >= 0.0);
}

TEST_CASE("restorer training protocol") {
  Config cfg = tiny_config();

  SUBCASE("unfrozen classifier is refused without the stub flag") {
    auto classifier = make_classifier(cfg);
    CHECK_FALSE(classifier->frozen());
    CHECK_THROWS_AS(train_sr(cfg, tiny_dataset(), *classifier, {}), ProtocolError);
  }
  SUBCASE("0 epochs leaves parameters at init and still writes a checkpoint") {
    testutil::TempDir tmp("zero");
    Config zero = cfg;
    zero.set("train.epochs", 0);
    auto classifier = make_classifier(zero);
    TrainSrOptions opts;
    opts.allow_stub_sc = true;
    opts.checkpoint_dir = tmp.path();
    auto result = train_sr(zero, tiny_dataset(), *classifier, opts);
    CHECK(result.steps_run == 0);
    const restorer::Restorer<float> fresh(zero.restorer_config(),
                                          static_cast<uint64_t>(zero.get_int("train.seed")));
    CHECK(result.model->params().content_hash() == fresh.params().content_hash());
    CHECK_FALSE(result.final_checkpoint.empty());
    CHECK(std::ifstream(result.final_checkpoint).good());
  }
  SUBCASE("two identical-seed runs are bit-identical, including loss curves") {
    auto classifier = make_classifier(cfg);
    TrainSrOptions opts;
    opts.allow_stub_sc = true;
    auto a = train_sr(cfg, tiny_dataset(), *classifier, opts);
    auto b = train_sr(cfg, tiny_dataset(), *classifier, opts);
    CHECK(a.param_hash == b.param_hash);
    REQUIRE(a.log.size() == b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i) {
      CHECK(a.log[i].total == b.log[i].total);
      CHECK(a.log[i].lr == b.log[i].lr);
    }
  }
  SUBCASE("checkpoint resume reproduces straight-through training bit-exactly") {
    testutil::TempDir tmp("resume");
    auto classifier = make_classifier(cfg);
    TrainSrOptions opts;
    opts.allow_stub_sc = true;
    opts.checkpoint_dir = tmp.file("full");
    auto full = train_sr(cfg, tiny_dataset(), *classifier, opts);  // 2 epochs

    TrainSrOptions resume_opts;
    resume_opts.allow_stub_sc = true;
    resume_opts.checkpoint_dir = tmp.file("resumed");
    resume_opts.resume_from = tmp.file("full") + "/checkpoint_epoch_1.vlur";
    auto resumed = train_sr(cfg, tiny_dataset(), *classifier, resume_opts);
    CHECK(resumed.param_hash == full.param_hash);
  }
  SUBCASE("training writes a JSON-lines log with the loss breakdown") {
    testutil::TempDir tmp("log");
    auto classifier = make_classifier(cfg);
    TrainSrOptions opts;
    opts.allow_stub_sc = true;
    opts.log_path = tmp.file("log.jsonl");
    auto result = train_sr(cfg, tiny_dataset(), *classifier, opts);
    CHECK(result.steps_run > 0);
    std::ifstream in(tmp.file("log.jsonl"));
    std::string line;
    int64_t lines = 0;
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      for (const char* key : {"step", "l1", "msssim", "cdrl", "total", "lr"})
        CHECK(j.contains(key));
      ++lines;
    }
    CHECK(lines == result.steps_run);
  }
  SUBCASE("frozen classifier checksum survives a training run") {
    auto sc = train_sc(cfg, tiny_dataset());
    const uint64_t before = sc.classifier->checksum();
    auto result = train_sr(cfg, tiny_dataset(), *sc.classifier, {});
    CHECK(result.steps_run > 0);
    CHECK(sc.classifier->checksum() == before);
  }
}

TEST_CASE("evaluate_report covers both guidance modes") {
  Config cfg = tiny_config();
  auto classifier = make_classifier(cfg);
  restorer::Restorer<float> model(cfg.restorer_config(), 3);
  auto oracle = metrics::evaluate_report(model, *classifier, tiny_dataset(),
                                         metrics::Guidance::kOracle);
  CHECK(oracle.guidance == "oracle");
  CHECK(oracle.total_count == 11);
  CHECK(oracle.rows.size() == 11);
  // identity restorer: restored-vs-clean equals degraded-vs-clean
  auto predicted = metrics::evaluate_report(model, *classifier, tiny_dataset(),
                                            metrics::Guidance::kPredicted);
  CHECK(predicted.guidance == "predicted");
  CHECK(predicted.avg_psnr == doctest::Approx(oracle.avg_psnr));  // identity either way
}

TEST_CASE("ablation grid trains each variant on identical data") {
  Config cfg = tiny_config();
  cfg.set("train.epochs", 1);
  auto classifier = make_classifier(cfg);
  const auto variants = ablation_grid(true, true);
  REQUIRE(variants.size() == 4);
  auto report = run_ablation(cfg, tiny_dataset(), tiny_dataset(), *classifier,
                             {variants[0], variants[3]}, true);
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].name == "full");
  CHECK(report.rows[1].name == "full_no_text");
  for (const auto& row : report.rows) {
    CHECK(row.test_psnr > 0.0);
    CHECK(row.steps > 0);
  }
  const auto j = report.to_json();
  CHECK(j.size() == 2);
  CHECK(report.to_table().find("full_no_text") != std::string::npos);
}
