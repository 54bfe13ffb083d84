#pragma once

#include <string>
#include <vector>

#include "vlur/core/tensor.hpp"
#include "vlur/synth/degrade.hpp"

namespace vlur::synth {

struct ManifestEntry {
  std::string clean;     // path relative to root
  std::string degraded;  // path relative to root
  Degradation type = Degradation::kHaze;
};

struct DatasetManifest {
  std::string root;
  std::string split;  // "train" or "test"
  std::vector<ManifestEntry> entries;

  std::string clean_path(size_t i) const;
  std::string degraded_path(size_t i) const;

  std::vector<size_t> indices_of_type(Degradation d) const;
  void save(const std::string& path) const;
};

// Synthesizes `per_type_count` pairs for each of the 11 types from the clean
// images found in `clean_dir` (PNG/JPEG), writing everything plus
// manifest.json under `out_dir`. Per-entry seeds are disjoint, derived from
// `seed`, and the drawn parameters are recorded in the manifest.
DatasetManifest build_synthetic_dataset(const std::string& clean_dir, const std::string& out_dir,
                                        int per_type_count, uint64_t seed,
                                        const std::string& split = "train");

// Loads a manifest JSON file, a directory containing manifest.json, or a
// CDD-11-style directory tree (one subfolder per type label plus a
// `clear`/`clean` folder of ground truths paired by filename).
DatasetManifest load_dataset(const std::string& path);

// Loaded (clean, degraded) pair; both images are checked to have equal size.
struct Pair {
  Tensorf clean;
  Tensorf degraded;
  Degradation type;
};

Pair load_pair(const DatasetManifest& m, size_t index);

// n degraded images of types different from entries[index].type, drawn
// deterministically from `seed`.
std::vector<Tensorf> sample_negatives(const DatasetManifest& m, size_t index, int n,
                                      uint64_t seed);
std::vector<size_t> sample_negative_indices(const DatasetManifest& m, size_t index, int n,
                                            uint64_t seed);

// Writes `count` procedural clean images into dir (creating it); returns paths.
std::vector<std::string> generate_clean_dir(const std::string& dir, int count, uint64_t seed,
                                            int64_t h, int64_t w);

}  // namespace vlur::synth
