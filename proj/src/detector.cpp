#include "rpd/detector.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "rpd/model_io.hpp"
#include "rpd/zoo.hpp"

namespace rpd {

std::string strategy_kind_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::Whole: return "whole";
    case StrategyKind::EvenPatch: return "even";
    case StrategyKind::RandomPatch: return "random";
  }
  fail("unknown strategy kind");
}

StrategyKind strategy_kind_from_name(const std::string& name) {
  if (name == "whole") return StrategyKind::Whole;
  if (name == "even") return StrategyKind::EvenPatch;
  if (name == "random") return StrategyKind::RandomPatch;
  fail("unknown strategy '" + name + "' (expected whole, even, or random)");
}

void validate_strategy(const DefenseStrategy& s) {
  require(s.patch_prob_threshold > 0.0 && s.patch_prob_threshold < 1.0,
          "patch_prob_threshold must lie in (0, 1)");
  require(s.flag_threshold >= 1, "flag_threshold must be at least 1");
}

Decision make_decision(const std::vector<double>& patch_probs, std::optional<PatchGrid> grid,
                       double patch_prob_threshold, int flag_threshold) {
  require(!patch_probs.empty(), "decision needs at least one patch probability");
  require(patch_prob_threshold > 0.0 && patch_prob_threshold < 1.0,
          "patch_prob_threshold must lie in (0, 1)");
  require(flag_threshold >= 1, "flag_threshold must be at least 1");
  Decision d;
  d.patch_probs = patch_probs;
  d.grid = std::move(grid);
  for (double q1 : patch_probs)
    if (q1 > patch_prob_threshold) ++d.flagged_count;
  d.accepted = d.flagged_count < flag_threshold;
  return d;
}

std::vector<double> DetectorModel::forward_patch(const Tensor& patch) const {
  require(net != nullptr, "detector has no network");
  require(patch.c == 3 && patch.h == kInputSize && patch.w == kInputSize,
          "detector input must be 3x224x224");
  Tensor logits = net->forward(patch);
  require(logits.size() == 2, "detector head must emit two logits");
  return softmax({logits.v[0], logits.v[1]});
}

Tensor DetectorModel::backward(const std::vector<double>& dlogits) const {
  require(net != nullptr, "detector has no network");
  require(dlogits.size() == 2, "detector backward expects two logit gradients");
  Tensor dy(2, 1, 1);
  dy.v = dlogits;
  return net->backward(dy);
}

uint64_t DetectorModel::weights_hash_value() const {
  require(net != nullptr, "detector has no network");
  return weights_hash(*net);
}

namespace {

struct CachedEntry {
  const ManifestEntry* entry = nullptr;
  ImageU8 image;
  RegionMask mask;  // empty for normal entries
};

std::vector<CachedEntry> cache_entries(const Manifest& manifest,
                                       const std::vector<std::string>& ids,
                                       const std::set<std::string>& forbidden) {
  std::unordered_map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : manifest.entries) by_id[e.id] = &e;
  std::vector<CachedEntry> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    require(!forbidden.count(id), "refusing to load test-split entry '" + id + "' for training");
    auto it = by_id.find(id);
    require(it != by_id.end(), "split references unknown entry '" + id + "'");
    CachedEntry ce;
    ce.entry = it->second;
    Tensor img = load_entry_image(manifest, *it->second);
    ce.image = to_image_u8(img);
    if (it->second->kind == "attack") ce.mask = load_entry_mask(manifest, *it->second);
    out.push_back(std::move(ce));
  }
  return out;
}

std::vector<PatchSample> entry_patches(const CachedEntry& ce, StrategyKind strategy, Rng& rng,
                                       int overlap_th) {
  Tensor img = to_tensor(ce.image);
  const bool is_attack = ce.entry->kind == "attack";
  if (strategy == StrategyKind::Whole) {
    PatchSample s;
    s.patch = extract_and_resize(img, Rect{0, 0, img.w, img.h}, kPatchSize);
    s.label = is_attack ? 1.0 : 0.0;
    s.source_rect = Rect{0, 0, img.w, img.h};
    s.source_id = ce.entry->id;
    return {std::move(s)};
  }
  PatchGrid grid = strategy == StrategyKind::EvenPatch ? even_split(img.w, img.h)
                                                       : random_split(img.w, img.h, rng);
  return select_patches(img, grid, is_attack ? &ce.mask : nullptr, rng, ce.entry->id, overlap_th);
}

struct ValScore {
  double tpr = 0.0;
  double far = 1.0;
  double threshold = 0.5;
};

// Sweeps decision thresholds on validation images: prefers the lowest false
// accept rate, then the highest true accept rate, then the threshold nearest
// one half.
ValScore calibrate_threshold(const std::vector<std::vector<double>>& normal_probs,
                             const std::vector<std::vector<double>>& attack_probs,
                             int flag_threshold) {
  ValScore best;
  bool have = false;
  for (int i = 1; i <= 19; ++i) {
    const double th = i * 0.05;
    int normals_ok = 0, attacks_ok = 0;
    for (const auto& probs : normal_probs)
      if (make_decision(probs, std::nullopt, th, flag_threshold).accepted) ++normals_ok;
    for (const auto& probs : attack_probs)
      if (make_decision(probs, std::nullopt, th, flag_threshold).accepted) ++attacks_ok;
    ValScore s;
    s.threshold = th;
    s.tpr = normal_probs.empty() ? 0.0 : double(normals_ok) / double(normal_probs.size());
    s.far = attack_probs.empty() ? 1.0 : double(attacks_ok) / double(attack_probs.size());
    const bool better =
        !have || s.far < best.far - 1e-12 ||
        (std::abs(s.far - best.far) <= 1e-12 &&
         (s.tpr > best.tpr + 1e-12 ||
          (std::abs(s.tpr - best.tpr) <= 1e-12 &&
           std::abs(s.threshold - 0.5) < std::abs(best.threshold - 0.5) - 1e-12)));
    if (better) {
      best = s;
      have = true;
    }
  }
  return best;
}

}  // namespace

DetectorModel train_detector(const Manifest& manifest, const DatasetSplit& split,
                             StrategyKind strategy, const std::string& backbone_id,
                             const DetectorTrainConfig& cfg, Rng& rng, DetectorTrainStats* stats) {
  require(cfg.epochs >= 1 && cfg.batch_size >= 1, "detector config needs epochs and batch_size >= 1");
  bool any_attack = false;
  for (const auto& e : manifest.entries) any_attack |= e.kind == "attack";
  require(any_attack, "detector training data contains no attack images");
  require(!split.train.empty() && !split.val.empty(), "detector training needs train and val splits");

  const std::set<std::string> test_ids(split.test.begin(), split.test.end());
  std::vector<CachedEntry> train = cache_entries(manifest, split.train, test_ids);
  std::vector<CachedEntry> val = cache_entries(manifest, split.val, test_ids);
  bool train_attack = false;
  for (const auto& ce : train) train_attack |= ce.entry->kind == "attack";
  require(train_attack, "train split contains no attack images");

  DetectorModel model;
  model.backbone_id = backbone_id;
  Rng init_rng = rng.child("detector-init");
  model.net = make_backbone(backbone_id, init_rng);
  {
    std::string joined;
    for (const auto& e : manifest.entries) {
      joined += manifest_entry_to_json(e);
      joined += '\n';
    }
    model.train_manifest_hash = fnv1a64(joined);
  }

  auto params = collect_params(*model.net);
  SgdConfig sgd_cfg;
  sgd_cfg.lr = cfg.lr;
  sgd_cfg.momentum = cfg.momentum;
  sgd_cfg.lr_decay = cfg.lr_decay;
  sgd_cfg.decay_every = cfg.decay_every;
  Sgd opt(params, sgd_cfg);

  Rng epoch_rng = rng.child("detector-epochs");
  Rng val_rng = rng.child("detector-val");
  DetectorTrainStats local;
  DetectorTrainStats& st = stats ? *stats : local;
  st = DetectorTrainStats{};
  std::vector<double> best_params;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.start_epoch(epoch);
    double epoch_loss = 0.0;
    size_t n_samples = 0;
    for (const auto& batch_idx : epoch_batches(train.size(), cfg.batch_size, epoch_rng)) {
      zero_grads(params);
      std::vector<PatchSample> batch;
      for (int ei : batch_idx) {
        auto ps = entry_patches(train[size_t(ei)], strategy, epoch_rng, int(cfg.overlap_threshold));
        for (auto& p : ps) batch.push_back(std::move(p));
      }
      const double inv = 1.0 / double(batch.size());
      for (const auto& sample : batch) {
        auto q = model.forward_patch(sample.patch);
        const std::vector<double> p = {1.0 - sample.label, sample.label};
        epoch_loss += cross_entropy(q, p);
        model.backward({(q[0] - p[0]) * inv, (q[1] - p[1]) * inv});
      }
      n_samples += batch.size();
      opt.step();
    }
    st.epoch_loss.push_back(epoch_loss / double(std::max<size_t>(1, n_samples)));

    // Validation pass: deployment-style decisions per image plus raw patch
    // accuracy for monitoring.
    Rng er = val_rng.child(uint64_t(epoch));
    std::vector<std::vector<double>> normal_probs, attack_probs;
    size_t patch_hits = 0, patch_total = 0;
    for (const auto& ce : val) {
      auto ps = entry_patches(ce, strategy, er, int(cfg.overlap_threshold));
      std::vector<double> probs;
      for (const auto& sample : ps) {
        auto q = model.forward_patch(sample.patch);
        probs.push_back(q[1]);
        patch_hits += (q[1] > 0.5) == (sample.label > 0.5);
        ++patch_total;
      }
      (ce.entry->kind == "attack" ? attack_probs : normal_probs).push_back(std::move(probs));
    }
    st.epoch_val_accuracy.push_back(double(patch_hits) / double(std::max<size_t>(1, patch_total)));

    ValScore score = calibrate_threshold(normal_probs, attack_probs, 1);
    const bool better = st.best_epoch < 0 || score.tpr > st.best_val_tpr + 1e-12 ||
                        (std::abs(score.tpr - st.best_val_tpr) <= 1e-12 &&
                         score.far < st.best_val_far - 1e-12);
    if (better) {
      st.best_val_tpr = score.tpr;
      st.best_val_far = score.far;
      st.best_epoch = epoch;
      st.chosen_threshold = score.threshold;
      best_params = flatten_params(*model.net);
    }
  }

  require(!best_params.empty(), "detector training selected no checkpoint");
  load_flat_params(*model.net, best_params);
  model.val_threshold = st.chosen_threshold;
  return model;
}

Decision detect_image(const DetectorModel& model, const DefenseStrategy& strategy,
                      const Tensor& image, Rng& rng) {
  validate_strategy(strategy);
  require(image.c == 3 && image.h >= 12 && image.w >= 12, "image too small to analyze");
  std::vector<double> probs;
  std::optional<PatchGrid> grid;
  if (strategy.kind == StrategyKind::Whole) {
    Tensor whole = extract_and_resize(image, Rect{0, 0, image.w, image.h}, kPatchSize);
    probs.push_back(model.forward_patch(whole)[1]);
  } else {
    grid = strategy.kind == StrategyKind::EvenPatch ? even_split(image.w, image.h)
                                                    : random_split(image.w, image.h, rng);
    for (const Rect& r : grid_rects(*grid))
      probs.push_back(model.forward_patch(extract_and_resize(image, r, kPatchSize))[1]);
  }
  return make_decision(probs, grid, strategy.patch_prob_threshold, strategy.flag_threshold);
}

void save_detector(const std::string& path, const DetectorModel& model) {
  require(model.net != nullptr, "detector has no network");
  ModelFile f;
  f.kind = "detector";
  f.header["backbone"] = model.backbone_id;
  f.header["train_manifest_hash"] = hash_hex(model.train_manifest_hash);
  f.header["val_threshold"] = model.val_threshold;
  f.header["weights_hash"] = hash_hex(model.weights_hash_value());
  f.params = flatten_params(*model.net);
  save_model_file(path, f);
}

DetectorModel load_detector(const std::string& path) {
  ModelFile f = load_model_file(path);
  require(f.kind == "detector", "'" + path + "' is not a detector model");
  require(f.header.contains("backbone") && f.header.contains("train_manifest_hash") &&
              f.header.contains("val_threshold") && f.header.contains("weights_hash"),
          "detector header is missing required fields");
  DetectorModel model;
  model.backbone_id = f.header["backbone"].get<std::string>();
  Rng dummy(0);
  model.net = make_backbone(model.backbone_id, dummy);
  load_flat_params(*model.net, f.params);
  model.train_manifest_hash =
      std::stoull(f.header["train_manifest_hash"].get<std::string>(), nullptr, 16);
  model.val_threshold = f.header["val_threshold"].get<double>();
  require(hash_hex(model.weights_hash_value()) == f.header["weights_hash"].get<std::string>(),
          "detector weights hash mismatch in '" + path + "'");
  return model;
}

}  // namespace rpd
