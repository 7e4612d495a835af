#include "rpd/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace rpd {

long long patch_overlap(const Rect& rect, const RegionMask& mask) {
  require(rect.x0 >= 0 && rect.y0 >= 0 && rect.x1 <= mask.width && rect.y1 <= mask.height &&
              rect.x0 < rect.x1 && rect.y0 < rect.y1,
          "patch_overlap: rect out of mask bounds");
  long long n = 0;
  for (int y = rect.y0; y < rect.y1; ++y)
    for (int x = rect.x0; x < rect.x1; ++x) n += mask.at(y, x);
  return n;
}

double label_patch(const Rect& rect, const RegionMask& mask, int th) {
  require(th > 0, "label_patch: th must be positive");
  const long long overlap = patch_overlap(rect, mask);
  if (overlap > th) return 1.0;
  return double(overlap) / double(th);
}

std::vector<PatchSample> select_patches(const Tensor& image, const PatchGrid& grid,
                                        const RegionMask* mask, Rng& rng,
                                        std::string_view source_id, int th) {
  require(grid.width == image.w && grid.height == image.h,
          "select_patches: grid does not match image dimensions");
  const auto rects = grid_rects(grid);

  std::vector<int> chosen;
  std::vector<double> labels(9, 0.0);
  if (mask == nullptr) {
    chosen = rng.sample_without_replacement(9, 6);
  } else {
    require(mask->width == image.w && mask->height == image.h,
            "select_patches: mask does not match image dimensions");
    for (int i = 0; i < 9; ++i) labels[size_t(i)] = label_patch(rects[size_t(i)], *mask, th);
    chosen.resize(9);
    std::iota(chosen.begin(), chosen.end(), 0);
    std::stable_sort(chosen.begin(), chosen.end(),
                     [&](int a, int b) { return labels[size_t(a)] > labels[size_t(b)]; });
    chosen.resize(6);
  }

  std::vector<PatchSample> out;
  out.reserve(6);
  for (int i : chosen) {
    PatchSample s;
    s.patch = extract_and_resize(image, rects[size_t(i)], kPatchSize);
    s.label = labels[size_t(i)];
    s.source_rect = rects[size_t(i)];
    s.source_id = std::string(source_id);
    out.push_back(std::move(s));
  }
  return out;
}

DatasetSplit split_dataset(std::vector<std::string> ids, Rng& rng) {
  const size_t n = ids.size();
  require(n >= 10, "split_dataset: need at least 10 ids");
  rng.shuffle(ids);
  const size_t n_train = 7 * n / 10;
  const size_t n_val = n / 10;
  DatasetSplit s;
  s.train.assign(ids.begin(), ids.begin() + ptrdiff_t(n_train));
  s.val.assign(ids.begin() + ptrdiff_t(n_train), ids.begin() + ptrdiff_t(n_train + n_val));
  s.test.assign(ids.begin() + ptrdiff_t(n_train + n_val), ids.end());
  return s;
}

std::vector<std::vector<int>> epoch_batches(size_t n, int batch_size, Rng& rng) {
  require(batch_size >= 1, "epoch_batches: batch_size must be >= 1");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (size_t i = 0; i < n; i += size_t(batch_size)) {
    const size_t end = std::min(n, i + size_t(batch_size));
    batches.emplace_back(order.begin() + ptrdiff_t(i), order.begin() + ptrdiff_t(end));
  }
  return batches;
}

Batch gather_batch(const std::vector<PatchSample>& samples, const std::vector<int>& idx) {
  Batch b;
  b.patches.reserve(idx.size());
  b.labels.reserve(idx.size());
  for (int i : idx) {
    require(i >= 0 && size_t(i) < samples.size(), "gather_batch: index out of range");
    b.patches.push_back(&samples[size_t(i)].patch);
    b.labels.push_back(samples[size_t(i)].label);
  }
  return b;
}

Batch build_training_batch(const std::vector<PatchSample>& samples, int batch_size, Rng& rng) {
  require(batch_size >= 1, "build_training_batch: batch_size must be >= 1");
  std::vector<int> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  order.resize(std::min(order.size(), size_t(batch_size)));
  return gather_batch(samples, order);
}

namespace {

using nlohmann::json;

json attack_to_json(const AttackMeta& a) {
  json j;
  j["mode"] = a.mode;
  j["mask_kind"] = a.mask_kind;
  j["original_id"] = a.original_id;
  j["target_id"] = a.target_id;
  j["alpha"] = a.alpha;
  j["beta"] = a.beta;
  j["steps"] = a.steps;
  j["seed"] = a.seed;
  j["defense_strategy"] = a.defense_strategy;
  j["defense_hash"] = a.defense_hash;
  j["initial_similarity"] = a.initial_similarity;
  j["final_similarity"] = a.final_similarity;
  return j;
}

AttackMeta attack_from_json(const json& j) {
  AttackMeta a;
  a.mode = j.at("mode").get<std::string>();
  a.mask_kind = j.at("mask_kind").get<std::string>();
  a.original_id = j.at("original_id").get<std::string>();
  a.target_id = j.at("target_id").get<std::string>();
  a.alpha = j.at("alpha").get<double>();
  a.beta = j.at("beta").get<double>();
  a.steps = j.at("steps").get<int>();
  a.seed = j.at("seed").get<uint64_t>();
  a.defense_strategy = j.at("defense_strategy").get<std::string>();
  a.defense_hash = j.at("defense_hash").get<std::string>();
  a.initial_similarity = j.at("initial_similarity").get<double>();
  a.final_similarity = j.at("final_similarity").get<double>();
  return a;
}

}  // namespace

std::string manifest_entry_to_json(const ManifestEntry& e) {
  require(e.kind == "normal" || e.kind == "attack", "manifest entry: bad kind " + e.kind);
  require((e.kind == "attack") == e.attack.has_value(),
          "manifest entry: attack metadata must accompany attack kind exactly");
  json j;
  j["id"] = e.id;
  j["image"] = e.image;
  j["identity"] = e.identity;
  j["kind"] = e.kind;
  j["mask"] = e.mask;
  j["attack"] = e.attack ? attack_to_json(*e.attack) : json(nullptr);
  return j.dump();
}

ManifestEntry manifest_entry_from_json(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& ex) {
    fail(std::string("manifest entry: bad JSON: ") + ex.what());
  }
  ManifestEntry e;
  try {
    e.id = j.at("id").get<std::string>();
    e.image = j.at("image").get<std::string>();
    e.identity = j.at("identity").get<std::string>();
    e.kind = j.at("kind").get<std::string>();
    e.mask = j.at("mask").get<std::string>();
    if (!j.at("attack").is_null()) e.attack = attack_from_json(j.at("attack"));
  } catch (const json::exception& ex) {
    fail(std::string("manifest entry: missing field: ") + ex.what());
  }
  require(e.kind == "normal" || e.kind == "attack", "manifest entry: bad kind " + e.kind);
  require((e.kind == "attack") == e.attack.has_value(),
          "manifest entry: attack metadata must accompany attack kind exactly");
  return e;
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), path + ": cannot open manifest");
  Manifest m;
  m.dir = std::filesystem::path(path).parent_path().string();
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      m.entries.push_back(manifest_entry_from_json(line));
    } catch (const Error& ex) {
      fail(path + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  require(!m.entries.empty(), path + ": empty manifest");
  return m;
}

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  require(out.good(), path + ": cannot open for writing");
  for (const auto& e : entries) out << manifest_entry_to_json(e) << "\n";
  require(out.good(), path + ": write failed");
}

namespace {

std::string resolve(const Manifest& m, const std::string& rel) {
  if (rel.empty() || rel.front() == '/' || m.dir.empty()) return rel;
  return (std::filesystem::path(m.dir) / rel).string();
}

}  // namespace

Tensor load_entry_image(const Manifest& m, const ManifestEntry& e) {
  return to_tensor(read_ppm(resolve(m, e.image)));
}

RegionMask load_entry_mask(const Manifest& m, const ManifestEntry& e) {
  require(!e.mask.empty(), "entry " + e.id + " has no mask");
  return read_mask_pgm(resolve(m, e.mask));
}

}  // namespace rpd
