#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rpd/attack.hpp"
#include "rpd/dataset.hpp"
#include "rpd/detector.hpp"
#include "rpd/embedding.hpp"

namespace rpd {

enum class ThreatModel { WhiteBox, StrategyLeaked, ModelLeaked };

std::string threat_model_name(ThreatModel tm);
ThreatModel threat_model_from_name(const std::string& name);

// Checks an attack entry's generation metadata against the evaluated detector:
// white-box entries carry no defense metadata, strategy-leaked entries name the
// same strategy but a different detector hash, model-leaked entries carry the
// evaluated detector's exact hash. Any mismatch is an error.
void validate_threat_tagging(const ManifestEntry& e, ThreatModel tm, const DetectorModel& det,
                             const DefenseStrategy& strategy);

struct DecisionRecord {
  std::string id;
  std::string kind;       // normal | attack
  std::string mask_kind;  // empty for normals
  bool accepted = false;
  int flagged_count = 0;
  std::vector<double> patch_probs;
  std::string grid;  // grid record, empty for the whole-image strategy
};

struct EvalReport {
  double tpr = 0.0;
  std::map<std::string, double> far_by_mask;       // mask kind -> FAR
  std::map<std::string, double> mean_similarity;   // mode -> mean final similarity
  std::vector<DecisionRecord> records;
  nlohmann::json manifest;  // config echo: hashes, seeds, counts, threat model
};

// Runs the defense over every normal and attack image and computes TPR and
// per-mask FAR. Normals come from `normals` (kind == "normal"); attacks from
// the tagged sets. Deterministic for a fixed seed.
EvalReport evaluate(const DetectorModel& det, const DefenseStrategy& strategy,
                    const Manifest& normals, const std::vector<const Manifest*>& attack_sets,
                    ThreatModel tm, uint64_t seed);

nlohmann::json eval_report_to_json(const EvalReport& r);
std::string decision_record_to_json(const DecisionRecord& r);
// Writes <path_base>.json and <path_base>.records.jsonl.
void write_eval_report(const std::string& path_base, const EvalReport& r);
// Recount oracle: recomputes (tpr, far_by_mask) from serialized records.
std::pair<double, std::map<std::string, double>> recount_records(
    const std::vector<DecisionRecord>& records);

struct StrengthRow {
  std::string mask, mode;
  double mean_similarity = 0.0;
  int count = 0;
};

// Mean cosine similarity per (mask, mode) cell, recomputed with the face
// model: dodging rows against the original, impersonation rows against the
// target. Rows sorted by (mask, mode).
std::vector<StrengthRow> attack_strength_report(const Manifest& attacks, const Manifest& base,
                                                EmbeddingModel& face);

// Shape of one generated attack set (Table-style: one attack per identity per
// mask per mode; impersonation targets are a seed-derived derangement).
struct AttackSetSpec {
  std::vector<MaskKind> masks;
  std::vector<AttackMode> modes;
  double alpha = 0.0;  // 0 -> white-box (no defense)
  double beta_lo = 6e-5, beta_hi = 1e-4;
  int steps = 300;
  const DetectorModel* detector = nullptr;  // adaptive defense, else null
  StrategyKind strategy = StrategyKind::RandomPatch;
};

// Generates attacks for the first normal image of each listed identity and
// writes images, supports, and a manifest under out_dir. Deterministic.
Manifest generate_attack_set(const Manifest& base, const std::vector<std::string>& identities,
                             EmbeddingModel& face, const AttackSetSpec& spec,
                             const std::string& out_dir, uint64_t seed);

// Identity-level 7:1:2 split over the distinct identities of a manifest.
DatasetSplit split_identities(const Manifest& m, Rng& rng);

// Entry rebasing/merging so training corpora can combine manifests that live
// in different directories.
ManifestEntry rebase_entry(const ManifestEntry& e, const std::string& from_dir,
                           const std::string& to_dir);
Manifest merge_manifests(const std::string& dir, const std::vector<const Manifest*>& parts);

// Entry-id split induced by an identity split.
DatasetSplit entry_split_by_identity(const Manifest& m, const DatasetSplit& identities);

struct RunConfig {
  uint64_t seed = 1;
  std::string out_dir;
  std::string dataset_manifest;                // empty -> synthesize
  int synth_identities = 12, synth_views = 2;  // used when synthesizing
  std::string face_model = "toy";              // "toy" -> train, else model path
  FaceTrainConfig face_train;
  std::string reference_backbone = "small-mobile";
  std::string surrogate_backbone = "small-vgg-like";
  DetectorTrainConfig detector_train;
  std::vector<StrategyKind> strategies;
  std::vector<MaskKind> train_masks;
  std::vector<AttackMode> train_modes;
  std::vector<MaskKind> eval_masks;
  std::vector<AttackMode> eval_modes;
  int attack_steps = 300;
  double alpha = 1e-3;
  double beta_lo = 6e-5, beta_hi = 1e-4;
  std::vector<ThreatModel> threat_models;
  int flag_threshold = 1;
};

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// Loads or trains the face model named by the config.
EmbeddingModel face_model_from_config(const RunConfig& cfg, const Manifest& data, Rng& rng,
                                      FaceTrainStats* stats = nullptr);

// Full pipeline: data, face model, white-box attack corpus, detectors,
// per-threat-model attack sets, evaluations, reports. Returns out_dir.
std::string run_experiment(const RunConfig& cfg);

struct AlphaSweepRow {
  double alpha = 0.0;
  double far_whole = 0.0, far_random = 0.0;
  std::map<std::string, double> far_whole_by_mask, far_random_by_mask;
};

// Strategy-leaked sweep: per alpha, regenerates attacks against surrogate
// whole/random detectors and reports the reference detectors' FAR.
std::vector<AlphaSweepRow> alpha_sweep(const RunConfig& cfg, const std::vector<double>& alphas);

// Trains on dataset A (normals + white-box attacks), evaluates on dataset B.
EvalReport cross_dataset_eval(const Manifest& train_data, const Manifest& test_data,
                              StrategyKind strategy, const RunConfig& cfg, EmbeddingModel& face);

// Builds a manifest of normal images from a directory tree. Each immediate
// subdirectory is an identity holding .ppm views; a flat directory treats
// every .ppm stem as its own identity. Every image must decode.
Manifest ingest_directory(const std::string& src, const std::string& out_manifest);

}  // namespace rpd
