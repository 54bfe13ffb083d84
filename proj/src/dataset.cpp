#include "vlur/synth/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "vlur/core/rng.hpp"
#include "vlur/image/image.hpp"

namespace vlur::synth {

namespace fs = std::filesystem;
using nlohmann::json;

std::string DatasetManifest::clean_path(size_t i) const {
  return (fs::path(root) / entries[i].clean).string();
}

std::string DatasetManifest::degraded_path(size_t i) const {
  return (fs::path(root) / entries[i].degraded).string();
}

std::vector<size_t> DatasetManifest::indices_of_type(Degradation d) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < entries.size(); ++i)
    if (entries[i].type == d) out.push_back(i);
  return out;
}

void DatasetManifest::save(const std::string& path) const {
  json j;
  j["root"] = root;
  j["split"] = split;
  j["entries"] = json::array();
  for (const auto& e : entries) {
    j["entries"].push_back(
        {{"clean", e.clean}, {"degraded", e.degraded}, {"type", label_of(e.type)}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path);
  out << j.dump(2) << "\n";
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images_sorted(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::exists(dir) || !fs::is_directory(dir)) return files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

DatasetManifest manifest_from_json(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IngestionError("cannot open manifest " + manifest_path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IngestionError("invalid manifest JSON " + manifest_path.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.root = j.value("root", manifest_path.parent_path().string());
  if (fs::path(m.root).is_relative())
    m.root = (manifest_path.parent_path() / m.root).lexically_normal().string();
  m.split = j.value("split", "train");
  if (!j.contains("entries") || !j["entries"].is_array())
    throw IngestionError("manifest has no entries array: " + manifest_path.string());
  for (const auto& e : j["entries"]) {
    ManifestEntry me;
    me.clean = e.at("clean").get<std::string>();
    me.degraded = e.at("degraded").get<std::string>();
    me.type = degradation_from_label(e.at("type").get<std::string>());
    m.entries.push_back(std::move(me));
  }
  return m;
}

// CDD-11-style tree: <root>/<type-label>/xxx.png paired with
// <root>/clear/xxx.png (also accepts "clean" for the truth folder and
// underscores in type folder names).
DatasetManifest manifest_from_tree(const fs::path& root) {
  fs::path clear_dir;
  for (const char* name : {"clear", "clean", "gt"}) {
    if (fs::is_directory(root / name)) {
      clear_dir = root / name;
      break;
    }
  }
  if (clear_dir.empty())
    throw IngestionError("no manifest.json and no clear/ folder under " + root.string());
  DatasetManifest m;
  m.root = root.string();
  m.split = "test";
  for (const auto& e : fs::directory_iterator(root)) {
    if (!e.is_directory()) continue;
    const std::string dirname = e.path().filename().string();
    auto type = try_degradation_from_label(dirname);
    if (!type) continue;
    for (const auto& f : list_images_sorted(e.path())) {
      const fs::path truth = clear_dir / f.filename();
      fs::path truth_found = truth;
      if (!fs::exists(truth_found)) {
        // allow extension mismatch between degraded and truth
        bool ok = false;
        for (const char* ext : {".png", ".jpg", ".jpeg"}) {
          fs::path alt = truth;
          alt.replace_extension(ext);
          if (fs::exists(alt)) {
            truth_found = alt;
            ok = true;
            break;
          }
        }
        if (!ok)
          throw IngestionError("no ground truth for " + f.string() + " in " + clear_dir.string());
      }
      ManifestEntry me;
      me.clean = fs::relative(truth_found, root).string();
      me.degraded = fs::relative(f, root).string();
      me.type = *type;
      m.entries.push_back(std::move(me));
    }
  }
  if (m.entries.empty()) throw IngestionError("no paired images found under " + root.string());
  std::sort(m.entries.begin(), m.entries.end(), [](const ManifestEntry& a, const ManifestEntry& b) {
    return std::tie(a.degraded, a.clean) < std::tie(b.degraded, b.clean);
  });
  return m;
}

}  // namespace

DatasetManifest load_dataset(const std::string& path) {
  const fs::path p(path);
  if (fs::is_regular_file(p)) return manifest_from_json(p);
  if (fs::is_directory(p)) {
    if (fs::exists(p / "manifest.json")) return manifest_from_json(p / "manifest.json");
    return manifest_from_tree(p);
  }
  throw IngestionError("dataset path does not exist: " + path);
}

Pair load_pair(const DatasetManifest& m, size_t index) {
  if (index >= m.entries.size()) throw DataError("pair index out of range");
  Pair pr;
  pr.clean = img::read_image(m.clean_path(index));
  pr.degraded = img::read_image(m.degraded_path(index));
  pr.type = m.entries[index].type;
  if (pr.clean.shape != pr.degraded.shape)
    throw DataError("pair size mismatch between " + m.clean_path(index) + " " +
                    shape_str(pr.clean.shape) + " and " + m.degraded_path(index) + " " +
                    shape_str(pr.degraded.shape));
  return pr;
}

DatasetManifest build_synthetic_dataset(const std::string& clean_dir, const std::string& out_dir,
                                        int per_type_count, uint64_t seed,
                                        const std::string& split) {
  if (per_type_count <= 0) throw ParameterError("per_type_count must be positive");
  const auto clean_files = list_images_sorted(clean_dir);
  if (clean_files.empty())
    throw IngestionError("clean directory has no decodable images: " + clean_dir);

  std::vector<Tensorf> cleans;
  cleans.reserve(clean_files.size());
  for (const auto& f : clean_files) cleans.push_back(img::read_image(f.string()));

  fs::create_directories(fs::path(out_dir) / "clean");
  fs::create_directories(fs::path(out_dir) / "degraded");

  DatasetManifest m;
  m.root = fs::absolute(out_dir).string();
  m.split = split;

  json extra = json::array();
  for (int ti = 0; ti < kNumDegradations; ++ti) {
    const Degradation type = static_cast<Degradation>(ti);
    const std::string label = label_of(type);
    fs::create_directories(fs::path(out_dir) / "degraded" / label);
    for (int k = 0; k < per_type_count; ++k) {
      const uint64_t entry_seed =
          rng::mix(seed, rng::mix(static_cast<uint64_t>(ti), static_cast<uint64_t>(k)));
      const size_t ci = static_cast<size_t>(
          rng::stream(entry_seed, "clean-pick").uniform_int(static_cast<int64_t>(cleans.size())));
      const DegradationParams params = sample_params(entry_seed);
      const Tensorf degraded = compose_degradations(cleans[ci], type, params, entry_seed);

      char name[64];
      std::snprintf(name, sizeof(name), "%s_%04d.png", label.c_str(), k);
      const std::string clean_rel = (fs::path("clean") / name).string();
      const std::string degraded_rel = (fs::path("degraded") / label / name).string();
      img::write_png((fs::path(out_dir) / clean_rel).string(), cleans[ci]);
      img::write_png((fs::path(out_dir) / degraded_rel).string(), degraded);

      m.entries.push_back({clean_rel, degraded_rel, type});
      extra.push_back({{"seed", entry_seed},
                       {"haze_t", params.haze_t},
                       {"airlight", params.airlight},
                       {"lowlight_gamma", params.lowlight_gamma},
                       {"lowlight_gain", params.lowlight_gain},
                       {"rain_density", params.rain_density},
                       {"rain_angle_deg", params.rain_angle_deg},
                       {"rain_length", params.rain_length},
                       {"snow_density", params.snow_density},
                       {"snow_flake_size", params.snow_flake_size}});
    }
  }

  // manifest with generator parameters appended for reproducibility
  json j;
  j["root"] = m.root;
  j["split"] = m.split;
  j["entries"] = json::array();
  for (size_t i = 0; i < m.entries.size(); ++i) {
    json e = {{"clean", m.entries[i].clean},
              {"degraded", m.entries[i].degraded},
              {"type", label_of(m.entries[i].type)}};
    e["params"] = extra[i];
    j["entries"].push_back(e);
  }
  j["generator"] = {{"seed", seed}, {"per_type_count", per_type_count},
                    {"clean_dir", fs::absolute(clean_dir).string()}};
  std::ofstream out(fs::path(out_dir) / "manifest.json");
  if (!out) throw IoError("cannot write manifest under " + out_dir);
  out << j.dump(2) << "\n";
  return m;
}

std::vector<size_t> sample_negative_indices(const DatasetManifest& m, size_t index, int n,
                                            uint64_t seed) {
  if (n < 0) throw ParameterError("negative count must be >= 0");
  if (n == 0) return {};
  if (index >= m.entries.size()) throw DataError("entry index out of range");
  const Degradation mine = m.entries[index].type;
  std::vector<size_t> candidates;
  for (size_t i = 0; i < m.entries.size(); ++i)
    if (m.entries[i].type != mine) candidates.push_back(i);
  if (static_cast<int>(candidates.size()) < n)
    throw DataError("not enough negatives of other types: need " + std::to_string(n) + ", have " +
                    std::to_string(candidates.size()));
  auto rs = rng::stream(seed, "negatives", {static_cast<uint64_t>(index)});
  // partial Fisher-Yates over the candidate list
  std::vector<size_t> out;
  for (int k = 0; k < n; ++k) {
    const int64_t j = k + rs.uniform_int(static_cast<int64_t>(candidates.size()) - k);
    std::swap(candidates[static_cast<size_t>(k)], candidates[static_cast<size_t>(j)]);
    out.push_back(candidates[static_cast<size_t>(k)]);
  }
  return out;
}

std::vector<Tensorf> sample_negatives(const DatasetManifest& m, size_t index, int n,
                                      uint64_t seed) {
  std::vector<Tensorf> out;
  for (size_t i : sample_negative_indices(m, index, n, seed))
    out.push_back(img::read_image(m.degraded_path(i)));
  return out;
}

std::vector<std::string> generate_clean_dir(const std::string& dir, int count, uint64_t seed,
                                            int64_t h, int64_t w) {
  fs::create_directories(dir);
  std::vector<std::string> paths;
  for (int i = 0; i < count; ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "clean_%03d.png", i);
    const std::string path = (fs::path(dir) / name).string();
    img::write_png(path, generate_clean_image(rng::mix(seed, static_cast<uint64_t>(i)), h, w));
    paths.push_back(path);
  }
  return paths;
}

}  // namespace vlur::synth
