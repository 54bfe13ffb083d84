#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "testutil.hpp"
#include "vlur/image/image.hpp"
#include "vlur/synth/dataset.hpp"

using namespace vlur;
using nlohmann::json;

namespace {

std::string cli_path() {
  const char* env = std::getenv("VLUR_CLI");
  REQUIRE_MESSAGE(env != nullptr, "VLUR_CLI must point at the built binary");
  return env;
}

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const std::string& args) {
  testutil::TempDir tmp("cliout");
  const std::string err_file = tmp.file("stderr.txt");
  const std::string cmd = cli_path() + " " + args + " 2>" + err_file;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  char buf[4096];
  while (size_t n = fread(buf, 1, sizeof(buf), pipe)) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream ein(err_file);
  r.err.assign(std::istreambuf_iterator<char>(ein), std::istreambuf_iterator<char>());
  return r;
}

// tiny model flags shared by training-ish invocations
const char* kTinyModel =
    " --set restorer.base_channels=4 --set restorer.blocks=[1,1,1,1]"
    " --set restorer.heads=[1,1,2,2] --set train.crop=16 --set train.epochs=1"
    " --set train.batch_size=2 --set loss.msssim_scales=1 --set loss.negatives=1"
    " --set loss.vgg_taps=[2] --set classifier.adapter_epochs=2";

struct CliFixture {
  testutil::TempDir tmp{"cli"};
  std::string dataset_dir;
  std::string manifest;

  CliFixture() {
    dataset_dir = tmp.file("ds");
    auto r = run_cli("synthesize --out " + dataset_dir +
                     " --per-type 1 --generate-clean 2 --size 24x24 --seed 7");
    REQUIRE(r.exit_code == 0);
    manifest = dataset_dir + "/manifest.json";
    REQUIRE(std::ifstream(manifest).good());
  }
};

CliFixture& fixture() {
  static CliFixture f;
  return f;
}

}  // namespace

TEST_CASE("synthesize builds a loadable balanced dataset") {
  auto& f = fixture();
  auto manifest = synth::load_dataset(f.manifest);
  CHECK(manifest.entries.size() == 11);
  CHECK(std::ifstream(f.dataset_dir + "/provenance.json").good());
  const auto prov = json::parse(std::ifstream(f.dataset_dir + "/provenance.json"));
  CHECK(prov.contains("config"));
  CHECK(prov.contains("seed"));
  CHECK(prov.contains("version"));
  CHECK(prov["command"] == "synthesize");
}

TEST_CASE("classify emits probabilities that sum to one") {
  auto& f = fixture();
  auto manifest = synth::load_dataset(f.manifest);
  auto r = run_cli("classify --json --image " + manifest.degraded_path(0));
  REQUIRE(r.exit_code == 0);
  const auto j = json::parse(r.out);
  CHECK(j.contains("type"));
  CHECK(std::abs(j["prob_sum"].get<double>() - 1.0) < 1e-6);
  CHECK(j["probs"].size() == 11);
}

TEST_CASE("restore through a zero-initialized model returns the input bit-exactly") {
  auto& f = fixture();
  auto manifest = synth::load_dataset(f.manifest);
  const std::string clean_png = manifest.clean_path(0);
  const std::string out_dir = f.tmp.file("restored");

  SUBCASE("fresh model, manual type guidance") {
    auto r = run_cli("restore --image " + clean_png + " --type haze --out " + out_dir +
                     std::string(kTinyModel));
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("guided_by=haze") != std::string::npos);
    const std::string out_png = r.out.substr(0, r.out.find(' '));
    const Tensorf original = img::read_image(clean_png);
    const Tensorf restored = img::read_image(out_png);
    REQUIRE(original.shape == restored.shape);
    for (int64_t i = 0; i < original.numel(); ++i) CHECK(original[i] == restored[i]);
    CHECK(std::ifstream(out_dir + "/provenance.json").good());
  }
  SUBCASE("through a 0-epoch checkpoint") {
    const std::string run_dir = f.tmp.file("zerorun");
    auto t = run_cli("train --manifest " + f.manifest + " --phase sr --allow-stub-sc --out " +
                     run_dir + std::string(kTinyModel) + " --set train.epochs=0");
    REQUIRE(t.exit_code == 0);
    auto r = run_cli("restore --image " + clean_png + " --type haze --checkpoint " + run_dir +
                     "/checkpoint_final.vlur --out " + out_dir + "_ck" + std::string(kTinyModel));
    REQUIRE(r.exit_code == 0);
    const std::string out_png = r.out.substr(0, r.out.find(' '));
    const Tensorf original = img::read_image(clean_png);
    const Tensorf restored = img::read_image(out_png);
    for (int64_t i = 0; i < original.numel(); ++i) CHECK(original[i] == restored[i]);
  }
}

TEST_CASE("two-phase training via the CLI produces artifacts") {
  auto& f = fixture();
  const std::string run_dir = f.tmp.file("train_all");
  auto r = run_cli("train --manifest " + f.manifest + " --phase all --allow-stub-sc --out " +
                   run_dir + std::string(kTinyModel));
  REQUIRE(r.exit_code == 0);
  CHECK(std::ifstream(run_dir + "/sc_checkpoint.vlur").good());
  CHECK(std::ifstream(run_dir + "/sc_accuracy.json").good());
  CHECK(std::ifstream(run_dir + "/checkpoint_final.vlur").good());
  CHECK(std::ifstream(run_dir + "/train_log.jsonl").good());
  CHECK(std::ifstream(run_dir + "/provenance.json").good());

  SUBCASE("evaluate consumes the checkpoint and prints a report") {
    auto e = run_cli("evaluate --checkpoint " + run_dir + "/checkpoint_final.vlur --manifest " +
                     f.manifest + " --guidance oracle --json" + std::string(kTinyModel));
    REQUIRE(e.exit_code == 0);
    const auto j = json::parse(e.out);
    CHECK(j["rows"].size() == 11);
    CHECK(j["config"]["guidance"] == "oracle");
  }
}

TEST_CASE("errors are single-line machine-parsable with mapped exit codes") {
  auto r = run_cli("restore --image nope.png --out /tmp/x");
  CHECK(r.exit_code == 2);  // parameter error: neither --type nor --auto
  const auto j = json::parse(r.err);
  CHECK(j["error"] == "parameter_error");
  CHECK(j.contains("message"));

  auto r2 = run_cli("evaluate --manifest /definitely/missing --guidance oracle");
  CHECK(r2.exit_code == 5);  // ingestion error
  CHECK(json::parse(r2.err)["error"] == "ingestion_error");

  auto r3 = run_cli("classify --image x.png --set bogus.key=1");
  CHECK(r3.exit_code == 6);  // config error
  CHECK(json::parse(r3.err)["error"] == "config_error");
}

TEST_CASE("benchmark reports latency statistics") {
  auto r = run_cli(std::string("benchmark --resolution 64x48 --runs 1") + kTinyModel);
  REQUIRE(r.exit_code == 0);
  const auto j = json::parse(r.out);
  CHECK(j["runs"] == 1);
  CHECK(j["mean_ms"].get<double>() > 0.0);
  CHECK(j["resolution"] == "64x48");
}
