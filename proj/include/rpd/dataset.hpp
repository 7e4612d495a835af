#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rpd/geometry.hpp"
#include "rpd/image.hpp"

namespace rpd {

constexpr int kPatchSize = 224;
constexpr int kOverlapThreshold = 800;

// Attacked pixels of `mask` inside `rect`.
long long patch_overlap(const Rect& rect, const RegionMask& mask);

// 1 if overlap > th, else overlap / th. All-zero mask gives 0.
double label_patch(const Rect& rect, const RegionMask& mask, int th = kOverlapThreshold);

struct PatchSample {
  Tensor patch;  // kPatchSize x kPatchSize
  double label = 0.0;
  Rect source_rect;
  std::string source_id;
};

// Normal image (mask null): six of the nine cells uniformly without
// replacement, labels 0. Attack image: the six largest labels, ties broken
// by row-major cell index.
std::vector<PatchSample> select_patches(const Tensor& image, const PatchGrid& grid,
                                        const RegionMask* mask, Rng& rng,
                                        std::string_view source_id = "",
                                        int th = kOverlapThreshold);

struct DatasetSplit {
  std::vector<std::string> train, val, test;
};

// 7:1:2 by floor(0.7n) / floor(0.1n) / remainder, after a seeded shuffle.
DatasetSplit split_dataset(std::vector<std::string> ids, Rng& rng);

// One epoch: a seeded permutation of [0, n) chunked into batches; the final
// partial batch is kept so every sample appears exactly once.
std::vector<std::vector<int>> epoch_batches(size_t n, int batch_size, Rng& rng);

struct Batch {
  std::vector<const Tensor*> patches;
  std::vector<double> labels;
};

Batch gather_batch(const std::vector<PatchSample>& samples, const std::vector<int>& idx);

// One batch drawn without replacement from a fresh epoch permutation.
Batch build_training_batch(const std::vector<PatchSample>& samples, int batch_size, Rng& rng);

// Dataset manifest: one JSON record per line. Image and mask paths are
// relative to the manifest's directory.
struct AttackMeta {
  std::string mode;       // dodging | impersonation
  std::string mask_kind;  // hat | glasses | random
  std::string original_id;
  std::string target_id;         // empty for dodging
  double alpha = 0.0;
  double beta = 0.0;
  int steps = 0;
  uint64_t seed = 0;
  std::string defense_strategy;  // empty when generated white-box
  std::string defense_hash;      // empty when generated white-box
  double initial_similarity = 0.0;
  double final_similarity = 0.0;
};

struct ManifestEntry {
  std::string id;
  std::string image;     // relative path
  std::string identity;  // subject label
  std::string kind;      // normal | attack
  std::string mask;      // relative path, empty for normal images
  std::optional<AttackMeta> attack;
};

struct Manifest {
  std::string dir;  // directory the manifest was loaded from
  std::vector<ManifestEntry> entries;
};

Manifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

std::string manifest_entry_to_json(const ManifestEntry& e);
ManifestEntry manifest_entry_from_json(const std::string& line);

Tensor load_entry_image(const Manifest& m, const ManifestEntry& e);
RegionMask load_entry_mask(const Manifest& m, const ManifestEntry& e);

}  // namespace rpd
