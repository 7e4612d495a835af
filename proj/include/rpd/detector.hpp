#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rpd/dataset.hpp"
#include "rpd/geometry.hpp"
#include "rpd/nn.hpp"

namespace rpd {

enum class StrategyKind { Whole, EvenPatch, RandomPatch };

std::string strategy_kind_name(StrategyKind k);
StrategyKind strategy_kind_from_name(const std::string& name);

// How a detector is applied to an incoming image at decision time.
struct DefenseStrategy {
  StrategyKind kind = StrategyKind::RandomPatch;
  double patch_prob_threshold = 0.5;  // q1 above this flags a patch
  int flag_threshold = 1;             // TH: reject when flagged count >= TH
};

void validate_strategy(const DefenseStrategy& s);

// Outcome of running the defense on one image.
struct Decision {
  bool accepted = false;
  int flagged_count = 0;
  std::vector<double> patch_probs;  // q1 per analyzed region (1 or 9 entries)
  std::optional<PatchGrid> grid;    // absent for the whole-image strategy
};

// Pure decision rule, factored out so it can be tested exhaustively.
Decision make_decision(const std::vector<double>& patch_probs, std::optional<PatchGrid> grid,
                       double patch_prob_threshold, int flag_threshold);

struct DetectorModel {
  std::string backbone_id;
  std::unique_ptr<Sequential> net;  // 224x224x3 -> 2 logits
  uint64_t train_manifest_hash = 0;
  double val_threshold = 0.5;  // calibrated patch_prob_threshold

  // Returns {q0, q1}; also caches activations for backward().
  std::vector<double> forward_patch(const Tensor& patch) const;
  // dlogits -> gradient w.r.t. the input patch (parameter grads accumulate).
  Tensor backward(const std::vector<double>& dlogits) const;
  uint64_t weights_hash_value() const;
};

struct DetectorTrainConfig {
  int epochs = 16;
  int batch_size = 4;
  double lr = 0.05;
  double momentum = 0.9;
  double lr_decay = 0.5;
  int decay_every = 6;
  double overlap_threshold = kOverlapThreshold;
};

struct DetectorTrainStats {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_val_accuracy;
  double best_val_tpr = 0.0;
  double best_val_far = 1.0;
  int best_epoch = -1;
  double chosen_threshold = 0.5;
};

// Trains a patch classifier on the train split of `manifest` and calibrates
// the decision threshold on the validation split. Attack entries must exist.
DetectorModel train_detector(const Manifest& manifest, const DatasetSplit& split,
                             StrategyKind strategy, const std::string& backbone_id,
                             const DetectorTrainConfig& cfg, Rng& rng,
                             DetectorTrainStats* stats = nullptr);

// Applies the full defense pipeline to one image.
Decision detect_image(const DetectorModel& model, const DefenseStrategy& strategy,
                      const Tensor& image, Rng& rng);

void save_detector(const std::string& path, const DetectorModel& model);
DetectorModel load_detector(const std::string& path);

}  // namespace rpd
