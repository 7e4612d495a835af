#include "rpd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "rpd/model_io.hpp"
#include "rpd/synth.hpp"

namespace fs = std::filesystem;

namespace rpd {

std::string threat_model_name(ThreatModel tm) {
  switch (tm) {
    case ThreatModel::WhiteBox: return "white-box";
    case ThreatModel::StrategyLeaked: return "strategy-leaked";
    case ThreatModel::ModelLeaked: return "model-leaked";
  }
  throw std::invalid_argument("unknown threat model");
}

ThreatModel threat_model_from_name(const std::string& name) {
  if (name == "white-box") return ThreatModel::WhiteBox;
  if (name == "strategy-leaked") return ThreatModel::StrategyLeaked;
  if (name == "model-leaked") return ThreatModel::ModelLeaked;
  throw std::invalid_argument("unknown threat model '" + name + "'");
}

void validate_threat_tagging(const ManifestEntry& e, ThreatModel tm, const DetectorModel& det,
                             const DefenseStrategy& strategy) {
  require(e.attack.has_value(), "attack entry '" + e.id + "' has no generation metadata");
  const AttackMeta& m = *e.attack;
  const std::string det_hash = hash_hex(det.weights_hash_value());
  const std::string strat = strategy_kind_name(strategy.kind);
  switch (tm) {
    case ThreatModel::WhiteBox:
      require(m.defense_strategy.empty() && m.defense_hash.empty(),
              "entry '" + e.id + "' was generated against a defense; not a white-box attack");
      break;
    case ThreatModel::StrategyLeaked:
      require(!m.defense_hash.empty(),
              "entry '" + e.id + "' carries no defense metadata; not a strategy-leaked attack");
      require(m.defense_strategy == strat, "entry '" + e.id + "' attacked strategy '" +
                                               m.defense_strategy + "', evaluated strategy is '" +
                                               strat + "'");
      require(m.defense_hash != det_hash,
              "entry '" + e.id + "' attacked the evaluated detector itself; that is model-leaked, "
              "not strategy-leaked");
      break;
    case ThreatModel::ModelLeaked:
      require(m.defense_hash == det_hash, "entry '" + e.id +
                                              "' was not generated against the evaluated detector; "
                                              "not a model-leaked attack");
      require(m.defense_strategy == strat, "entry '" + e.id + "' attacked strategy '" +
                                               m.defense_strategy + "', evaluated strategy is '" +
                                               strat + "'");
      break;
  }
}

namespace {

DecisionRecord make_record(const ManifestEntry& e, const Decision& d) {
  DecisionRecord r;
  r.id = e.id;
  r.kind = e.kind;
  r.mask_kind = e.attack ? e.attack->mask_kind : "";
  r.accepted = d.accepted;
  r.flagged_count = d.flagged_count;
  r.patch_probs = d.patch_probs;
  r.grid = d.grid ? grid_to_record(*d.grid) : "";
  return r;
}

}  // namespace

EvalReport evaluate(const DetectorModel& det, const DefenseStrategy& strategy,
                    const Manifest& normals, const std::vector<const Manifest*>& attack_sets,
                    ThreatModel tm, uint64_t seed) {
  validate_strategy(strategy);
  std::vector<const ManifestEntry*> norm_entries;
  for (const auto& e : normals.entries)
    if (e.kind == "normal") norm_entries.push_back(&e);
  require(!norm_entries.empty(), "evaluate: no normal images");

  struct AtkRef {
    const Manifest* m;
    const ManifestEntry* e;
    size_t set_idx;
  };
  std::vector<AtkRef> atk;
  for (size_t si = 0; si < attack_sets.size(); ++si) {
    require(attack_sets[si] != nullptr, "evaluate: null attack set");
    for (const auto& e : attack_sets[si]->entries) {
      if (e.kind != "attack") continue;
      validate_threat_tagging(e, tm, det, strategy);
      atk.push_back({attack_sets[si], &e, si});
    }
  }
  require(!atk.empty(), "evaluate: no attack images");

  Rng root(seed);
  EvalReport r;
  int accepted_normals = 0;
  for (const ManifestEntry* e : norm_entries) {
    Tensor img = load_entry_image(normals, *e);
    Rng er = root.child("n/" + e->id);
    Decision d = detect_image(det, strategy, img, er);
    if (d.accepted) ++accepted_normals;
    r.records.push_back(make_record(*e, d));
  }
  r.tpr = double(accepted_normals) / double(norm_entries.size());

  std::map<std::string, std::pair<int, int>> mask_counts;  // mask -> (accepted, total)
  std::map<std::string, std::pair<double, int>> mode_sim;  // mode -> (sum, count)
  for (const AtkRef& a : atk) {
    Tensor img = load_entry_image(*a.m, *a.e);
    Rng er = root.child("a" + std::to_string(a.set_idx) + "/" + a.e->id);
    Decision d = detect_image(det, strategy, img, er);
    auto& mc = mask_counts[a.e->attack->mask_kind];
    if (d.accepted) ++mc.first;
    ++mc.second;
    auto& ms = mode_sim[a.e->attack->mode];
    ms.first += a.e->attack->final_similarity;
    ++ms.second;
    r.records.push_back(make_record(*a.e, d));
  }
  for (const auto& [mask, c] : mask_counts) r.far_by_mask[mask] = double(c.first) / double(c.second);
  for (const auto& [mode, s] : mode_sim) r.mean_similarity[mode] = s.first / double(s.second);

  nlohmann::json att_by_mask = nlohmann::json::object();
  for (const auto& [mask, c] : mask_counts) att_by_mask[mask] = c.second;
  r.manifest = {{"threat_model", threat_model_name(tm)},
                {"strategy", strategy_kind_name(strategy.kind)},
                {"patch_prob_threshold", strategy.patch_prob_threshold},
                {"flag_threshold", strategy.flag_threshold},
                {"detector_backbone", det.backbone_id},
                {"detector_hash", hash_hex(det.weights_hash_value())},
                {"train_manifest_hash", hash_hex(det.train_manifest_hash)},
                {"seed", seed},
                {"n_normals", norm_entries.size()},
                {"n_attacks", atk.size()},
                {"n_attacks_by_mask", att_by_mask}};
  return r;
}

std::string decision_record_to_json(const DecisionRecord& r) {
  nlohmann::json j = {{"id", r.id},
                      {"kind", r.kind},
                      {"mask", r.mask_kind},
                      {"accepted", r.accepted},
                      {"flagged", r.flagged_count},
                      {"probs", r.patch_probs},
                      {"grid", r.grid}};
  return j.dump();
}

nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json far = nlohmann::json::object();
  for (const auto& [mask, v] : r.far_by_mask) far["far_" + mask] = v;
  nlohmann::json sim = nlohmann::json::object();
  for (const auto& [mode, v] : r.mean_similarity) sim[mode] = v;
  return {{"tpr", r.tpr}, {"far", far}, {"mean_similarity", sim}, {"manifest", r.manifest}};
}

void write_eval_report(const std::string& path_base, const EvalReport& r) {
  fs::create_directories(fs::path(path_base).parent_path().empty()
                             ? fs::path(".")
                             : fs::path(path_base).parent_path());
  {
    std::ofstream out(path_base + ".json", std::ios::binary);
    require(bool(out), "cannot write '" + path_base + ".json'");
    out << eval_report_to_json(r).dump(2) << "\n";
  }
  std::ofstream out(path_base + ".records.jsonl", std::ios::binary);
  require(bool(out), "cannot write '" + path_base + ".records.jsonl'");
  for (const auto& rec : r.records) out << decision_record_to_json(rec) << "\n";
}

std::pair<double, std::map<std::string, double>> recount_records(
    const std::vector<DecisionRecord>& records) {
  int normals = 0, normals_ok = 0;
  std::map<std::string, std::pair<int, int>> mask_counts;
  for (const auto& r : records) {
    if (r.kind == "normal") {
      ++normals;
      if (r.accepted) ++normals_ok;
    } else {
      auto& mc = mask_counts[r.mask_kind];
      if (r.accepted) ++mc.first;
      ++mc.second;
    }
  }
  require(normals > 0, "recount: no normal records");
  std::map<std::string, double> far;
  for (const auto& [mask, c] : mask_counts) far[mask] = double(c.first) / double(c.second);
  return {double(normals_ok) / double(normals), far};
}

std::vector<StrengthRow> attack_strength_report(const Manifest& attacks, const Manifest& base,
                                                EmbeddingModel& face) {
  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : base.entries) by_id[e.id] = &e;
  std::map<std::string, std::vector<double>> ref_cache;
  auto ref_embed = [&](const std::string& id) -> const std::vector<double>& {
    auto it = ref_cache.find(id);
    if (it != ref_cache.end()) return it->second;
    auto bit = by_id.find(id);
    require(bit != by_id.end(), "reference image '" + id + "' not in base manifest");
    Tensor img = load_entry_image(base, *bit->second);
    return ref_cache.emplace(id, face.embed(img)).first->second;
  };

  std::map<std::pair<std::string, std::string>, std::pair<double, int>> cells;
  for (const auto& e : attacks.entries) {
    if (e.kind != "attack") continue;
    require(e.attack.has_value(), "attack entry '" + e.id + "' has no generation metadata");
    const AttackMeta& m = *e.attack;
    const std::string& ref_id = m.mode == "impersonation" ? m.target_id : m.original_id;
    require(!ref_id.empty(), "attack entry '" + e.id + "' names no reference image");
    Tensor img = load_entry_image(attacks, e);
    std::vector<double> ea = face.embed(img);
    double sim = cosine_sim(ea, ref_embed(ref_id));
    auto& cell = cells[{m.mask_kind, m.mode}];
    cell.first += sim;
    ++cell.second;
  }
  require(!cells.empty(), "attack_strength_report: empty attack set");
  std::vector<StrengthRow> rows;
  for (const auto& [key, acc] : cells)
    rows.push_back({key.first, key.second, acc.first / double(acc.second), acc.second});
  return rows;
}

Manifest generate_attack_set(const Manifest& base, const std::vector<std::string>& identities,
                             EmbeddingModel& face, const AttackSetSpec& spec,
                             const std::string& out_dir, uint64_t seed) {
  require(!identities.empty(), "generate_attack_set: no identities");
  require(!spec.masks.empty(), "generate_attack_set: no mask kinds");
  require(!spec.modes.empty(), "generate_attack_set: no attack modes");
  require((spec.alpha == 0.0) == (spec.detector == nullptr),
          "alpha must be zero exactly when no defense is attacked");
  require(spec.beta_lo <= spec.beta_hi && spec.beta_lo >= 0.0, "invalid beta range");

  std::map<std::string, const ManifestEntry*> first;
  for (const auto& e : base.entries)
    if (e.kind == "normal" && !first.count(e.identity)) first[e.identity] = &e;
  for (const auto& id : identities)
    require(first.count(id), "identity '" + id + "' has no normal image");

  const bool need_target = std::any_of(spec.modes.begin(), spec.modes.end(), [](AttackMode m) {
    return m == AttackMode::Impersonation;
  });
  std::map<std::string, std::string> target_of;
  if (need_target) {
    require(identities.size() >= 2, "impersonation needs at least two identities");
    std::vector<std::string> order = identities;
    Rng trng(derive_seed(seed, "targets"));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[size_t(trng.uniform_int(0, int(i) - 1))]);
    for (size_t i = 0; i < order.size(); ++i) target_of[order[i]] = order[(i + 1) % order.size()];
  }

  fs::create_directories(fs::path(out_dir) / "images");
  std::vector<ManifestEntry> entries;
  for (const auto& id : identities) {
    const ManifestEntry& oe = *first.at(id);
    Tensor orig = load_entry_image(base, oe);
    for (MaskKind mask : spec.masks) {
      for (AttackMode mode : spec.modes) {
        const std::string name = id + "-" + mask_kind_name(mask) + "-" + attack_mode_name(mode);
        const uint64_t aseed = derive_seed(seed, name);
        Rng ar(aseed);
        AttackSpec as;
        as.mode = mode;
        as.alpha = spec.alpha;
        as.beta = spec.beta_lo == spec.beta_hi ? spec.beta_lo : ar.uniform(spec.beta_lo, spec.beta_hi);
        as.steps = spec.steps;
        if (spec.detector) as.defense = AttackDefense{spec.detector, DefenseStrategy{spec.strategy}};
        as.mask = make_mask(mask, face.input_size, ar);

        const ManifestEntry* te = nullptr;
        Tensor target;
        if (mode == AttackMode::Impersonation) {
          te = first.at(target_of.at(id));
          target = load_entry_image(base, *te);
        }
        AttackResult res = generate_attack(orig, te ? &target : nullptr, face, as, ar);

        write_ppm((fs::path(out_dir) / "images" / (name + ".ppm")).string(),
                  to_image_u8(res.attacked_image));
        write_mask_pgm((fs::path(out_dir) / "images" / (name + ".pgm")).string(), res.support);

        ManifestEntry e;
        e.id = name;
        e.image = "images/" + name + ".ppm";
        e.identity = id;
        e.kind = "attack";
        e.mask = "images/" + name + ".pgm";
        AttackMeta meta;
        meta.mode = attack_mode_name(mode);
        meta.mask_kind = mask_kind_name(mask);
        meta.original_id = oe.id;
        meta.target_id = te ? te->id : "";
        meta.alpha = spec.alpha;
        meta.beta = as.beta;
        meta.steps = spec.steps;
        meta.seed = aseed;
        if (spec.detector) {
          meta.defense_strategy = strategy_kind_name(spec.strategy);
          meta.defense_hash = hash_hex(spec.detector->weights_hash_value());
        }
        meta.initial_similarity = res.initial_similarity;
        meta.final_similarity = res.final_similarity;
        e.attack = meta;
        entries.push_back(std::move(e));
      }
    }
  }
  const std::string mpath = (fs::path(out_dir) / "manifest.jsonl").string();
  save_manifest(mpath, entries);
  return load_manifest(mpath);
}

DatasetSplit split_identities(const Manifest& m, Rng& rng) {
  std::set<std::string> ids;
  for (const auto& e : m.entries)
    if (e.kind == "normal") ids.insert(e.identity);
  require(!ids.empty(), "manifest has no normal images");
  return split_dataset(std::vector<std::string>(ids.begin(), ids.end()), rng);
}

ManifestEntry rebase_entry(const ManifestEntry& e, const std::string& from_dir,
                           const std::string& to_dir) {
  auto rebase = [&](const std::string& rel) {
    if (rel.empty()) return rel;
    fs::path p = (fs::path(from_dir) / rel).lexically_normal();
    fs::path r = p.lexically_relative(fs::path(to_dir).lexically_normal());
    require(!r.empty(), "cannot express '" + p.string() + "' relative to '" + to_dir + "'");
    return r.generic_string();
  };
  ManifestEntry out = e;
  out.image = rebase(e.image);
  out.mask = rebase(e.mask);
  return out;
}

Manifest merge_manifests(const std::string& dir, const std::vector<const Manifest*>& parts) {
  Manifest out;
  out.dir = dir;
  std::set<std::string> seen;
  for (const Manifest* part : parts) {
    require(part != nullptr, "merge_manifests: null part");
    for (const auto& e : part->entries) {
      require(seen.insert(e.id).second, "duplicate entry id '" + e.id + "' when merging manifests");
      out.entries.push_back(rebase_entry(e, part->dir, dir));
    }
  }
  return out;
}

DatasetSplit entry_split_by_identity(const Manifest& m, const DatasetSplit& identities) {
  std::map<std::string, int> bucket;
  for (const auto& id : identities.train) bucket[id] = 0;
  for (const auto& id : identities.val) bucket[id] = 1;
  for (const auto& id : identities.test) bucket[id] = 2;
  DatasetSplit out;
  for (const auto& e : m.entries) {
    auto it = bucket.find(e.identity);
    if (it == bucket.end()) continue;
    (it->second == 0 ? out.train : it->second == 1 ? out.val : out.test).push_back(e.id);
  }
  return out;
}

namespace {

std::vector<StrategyKind> parse_strategies(const nlohmann::json& arr) {
  std::vector<StrategyKind> out;
  for (const auto& v : arr) out.push_back(strategy_kind_from_name(v.get<std::string>()));
  require(!out.empty(), "empty strategy list");
  return out;
}

std::vector<MaskKind> parse_masks(const nlohmann::json& arr) {
  std::vector<MaskKind> out;
  for (const auto& v : arr) out.push_back(mask_kind_from_name(v.get<std::string>()));
  require(!out.empty(), "empty mask list");
  return out;
}

std::vector<AttackMode> parse_modes(const nlohmann::json& arr) {
  std::vector<AttackMode> out;
  for (const auto& v : arr) out.push_back(attack_mode_from_name(v.get<std::string>()));
  require(!out.empty(), "empty mode list");
  return out;
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    require(allowed.count(it.key()), "unknown key '" + it.key() + "' in " + where);
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  check_keys(j, {"seed", "out_dir", "dataset", "face_model", "face_train", "reference_backbone",
                 "surrogate_backbone", "detector_train", "strategies", "train_attacks",
                 "eval_attacks", "attack", "threat_models", "flag_threshold"},
             "run config");
  RunConfig c;
  c.strategies = {StrategyKind::Whole, StrategyKind::EvenPatch, StrategyKind::RandomPatch};
  c.train_masks = {MaskKind::Hat, MaskKind::Glasses};
  c.train_modes = {AttackMode::Dodging};
  c.eval_masks = {MaskKind::Hat, MaskKind::Glasses};
  c.eval_modes = {AttackMode::Dodging, AttackMode::Impersonation};
  c.threat_models = {ThreatModel::WhiteBox};

  c.seed = j.value("seed", uint64_t(1));
  require(j.contains("out_dir"), "run config missing out_dir");
  c.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    check_keys(d, {"manifest", "identities", "views"}, "dataset");
    require(!(d.contains("manifest") && (d.contains("identities") || d.contains("views"))),
            "dataset: give either a manifest path or a synthetic shape, not both");
    if (d.contains("manifest")) {
      c.dataset_manifest = d.at("manifest").get<std::string>();
    } else {
      c.synth_identities = d.value("identities", c.synth_identities);
      c.synth_views = d.value("views", c.synth_views);
      require(c.synth_identities >= 2 && c.synth_views >= 1, "invalid synthetic dataset shape");
    }
  }
  c.face_model = j.value("face_model", std::string("toy"));
  if (j.contains("face_train")) {
    const auto& f = j.at("face_train");
    check_keys(f, {"epochs", "batch_size", "lr", "momentum", "lr_decay", "decay_every",
                   "holdout_per_identity", "target_accuracy"},
               "face_train");
    c.face_train.epochs = f.value("epochs", c.face_train.epochs);
    c.face_train.batch_size = f.value("batch_size", c.face_train.batch_size);
    c.face_train.lr = f.value("lr", c.face_train.lr);
    c.face_train.momentum = f.value("momentum", c.face_train.momentum);
    c.face_train.lr_decay = f.value("lr_decay", c.face_train.lr_decay);
    c.face_train.decay_every = f.value("decay_every", c.face_train.decay_every);
    c.face_train.holdout_per_identity = f.value("holdout_per_identity", c.face_train.holdout_per_identity);
    c.face_train.target_accuracy = f.value("target_accuracy", c.face_train.target_accuracy);
  }
  c.reference_backbone = j.value("reference_backbone", c.reference_backbone);
  c.surrogate_backbone = j.value("surrogate_backbone", c.surrogate_backbone);
  if (j.contains("detector_train")) {
    const auto& d = j.at("detector_train");
    check_keys(d, {"epochs", "batch_size", "lr", "momentum", "lr_decay", "decay_every"},
               "detector_train");
    c.detector_train.epochs = d.value("epochs", c.detector_train.epochs);
    c.detector_train.batch_size = d.value("batch_size", c.detector_train.batch_size);
    c.detector_train.lr = d.value("lr", c.detector_train.lr);
    c.detector_train.momentum = d.value("momentum", c.detector_train.momentum);
    c.detector_train.lr_decay = d.value("lr_decay", c.detector_train.lr_decay);
    c.detector_train.decay_every = d.value("decay_every", c.detector_train.decay_every);
  }
  if (j.contains("strategies")) c.strategies = parse_strategies(j.at("strategies"));
  if (j.contains("train_attacks")) {
    const auto& t = j.at("train_attacks");
    check_keys(t, {"masks", "modes"}, "train_attacks");
    if (t.contains("masks")) c.train_masks = parse_masks(t.at("masks"));
    if (t.contains("modes")) c.train_modes = parse_modes(t.at("modes"));
  }
  if (j.contains("eval_attacks")) {
    const auto& t = j.at("eval_attacks");
    check_keys(t, {"masks", "modes"}, "eval_attacks");
    if (t.contains("masks")) c.eval_masks = parse_masks(t.at("masks"));
    if (t.contains("modes")) c.eval_modes = parse_modes(t.at("modes"));
  }
  if (j.contains("attack")) {
    const auto& a = j.at("attack");
    check_keys(a, {"steps", "alpha", "beta"}, "attack");
    c.attack_steps = a.value("steps", c.attack_steps);
    c.alpha = a.value("alpha", c.alpha);
    if (a.contains("beta")) {
      const auto& b = a.at("beta");
      if (b.is_array()) {
        require(b.size() == 2, "beta range must have two endpoints");
        c.beta_lo = b[0].get<double>();
        c.beta_hi = b[1].get<double>();
      } else {
        c.beta_lo = c.beta_hi = b.get<double>();
      }
    }
  }
  if (j.contains("threat_models")) {
    c.threat_models.clear();
    for (const auto& v : j.at("threat_models"))
      c.threat_models.push_back(threat_model_from_name(v.get<std::string>()));
    require(!c.threat_models.empty(), "empty threat model list");
  }
  c.flag_threshold = j.value("flag_threshold", c.flag_threshold);

  require(c.attack_steps >= 0, "attack steps must be nonnegative");
  require(c.alpha > 0.0 && c.alpha <= 1.0, "alpha must lie in (0, 1]");
  require(c.beta_lo >= 0.0 && c.beta_lo <= c.beta_hi, "invalid beta range");
  require(c.flag_threshold >= 1, "flag threshold must be at least 1");
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), "cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& ex) {
    throw std::runtime_error("config '" + path + "' is not valid JSON: " + ex.what());
  }
  return run_config_from_json(j);
}

namespace {

nlohmann::json run_config_to_json(const RunConfig& c) {
  auto strat_names = [&] {
    nlohmann::json a = nlohmann::json::array();
    for (auto s : c.strategies) a.push_back(strategy_kind_name(s));
    return a;
  }();
  auto mask_names = [](const std::vector<MaskKind>& ms) {
    nlohmann::json a = nlohmann::json::array();
    for (auto m : ms) a.push_back(mask_kind_name(m));
    return a;
  };
  auto mode_names = [](const std::vector<AttackMode>& ms) {
    nlohmann::json a = nlohmann::json::array();
    for (auto m : ms) a.push_back(attack_mode_name(m));
    return a;
  };
  nlohmann::json tms = nlohmann::json::array();
  for (auto tm : c.threat_models) tms.push_back(threat_model_name(tm));
  nlohmann::json dataset = c.dataset_manifest.empty()
                               ? nlohmann::json{{"identities", c.synth_identities},
                                                {"views", c.synth_views}}
                               : nlohmann::json{{"manifest", c.dataset_manifest}};
  return {{"seed", c.seed},
          {"out_dir", c.out_dir},
          {"dataset", dataset},
          {"face_model", c.face_model},
          {"face_train",
           {{"epochs", c.face_train.epochs},
            {"batch_size", c.face_train.batch_size},
            {"lr", c.face_train.lr},
            {"momentum", c.face_train.momentum},
            {"lr_decay", c.face_train.lr_decay},
            {"decay_every", c.face_train.decay_every},
            {"holdout_per_identity", c.face_train.holdout_per_identity},
            {"target_accuracy", c.face_train.target_accuracy}}},
          {"reference_backbone", c.reference_backbone},
          {"surrogate_backbone", c.surrogate_backbone},
          {"detector_train",
           {{"epochs", c.detector_train.epochs},
            {"batch_size", c.detector_train.batch_size},
            {"lr", c.detector_train.lr},
            {"momentum", c.detector_train.momentum},
            {"lr_decay", c.detector_train.lr_decay},
            {"decay_every", c.detector_train.decay_every}}},
          {"strategies", strat_names},
          {"train_attacks", {{"masks", mask_names(c.train_masks)}, {"modes", mode_names(c.train_modes)}}},
          {"eval_attacks", {{"masks", mask_names(c.eval_masks)}, {"modes", mode_names(c.eval_modes)}}},
          {"attack",
           {{"steps", c.attack_steps}, {"alpha", c.alpha}, {"beta", {c.beta_lo, c.beta_hi}}}},
          {"threat_models", tms},
          {"flag_threshold", c.flag_threshold}};
}

}  // namespace

EmbeddingModel face_model_from_config(const RunConfig& cfg, const Manifest& data, Rng& rng,
                                      FaceTrainStats* stats) {
  if (cfg.face_model != "toy") return load_external_model(cfg.face_model);
  std::map<std::string, std::vector<const ManifestEntry*>> groups;
  for (const auto& e : data.entries)
    if (e.kind == "normal") groups[e.identity].push_back(&e);
  require(!groups.empty(), "no normal images to train the face model on");
  size_t views = groups.begin()->second.size();
  for (auto& [id, es] : groups) {
    std::sort(es.begin(), es.end(),
              [](const ManifestEntry* a, const ManifestEntry* b) { return a->id < b->id; });
    require(es.size() == views, "identity '" + id + "' has a different view count");
  }
  require(views >= 2, "face training needs at least two views per identity");
  std::vector<const std::vector<const ManifestEntry*>*> by_index;
  for (const auto& [id, es] : groups) by_index.push_back(&es);
  ImageProvider provider = [&](int identity, int view) {
    return load_entry_image(data, *(*by_index[size_t(identity)])[size_t(view)]);
  };
  Rng frng = rng.child("face");
  return train_toy_face_model(provider, int(groups.size()), int(views), cfg.face_train, frng, stats);
}

namespace {

// Shared pipeline state for run_experiment, alpha_sweep, and cross-dataset
// evaluation: data, identity split, face model, detector training corpus.
struct Pipeline {
  Manifest data;
  DatasetSplit ids;
  EmbeddingModel face;
  Manifest train_attacks;
  Manifest corpus;
  DatasetSplit corpus_split;
};

Manifest test_normals_view(const Manifest& data, const DatasetSplit& ids) {
  std::set<std::string> test_ids(ids.test.begin(), ids.test.end());
  Manifest v;
  v.dir = data.dir;
  for (const auto& e : data.entries)
    if (e.kind == "normal" && test_ids.count(e.identity)) v.entries.push_back(e);
  return v;
}

Pipeline build_pipeline(const RunConfig& cfg, std::vector<std::string>* log) {
  auto stage = [&](const std::string& name, auto&& fn) {
    try {
      fn();
      if (log) log->push_back(name + ": ok");
    } catch (const std::exception& ex) {
      if (log) log->push_back(name + ": error: " + ex.what());
      throw;
    }
  };

  Pipeline p;
  stage("data", [&] {
    if (cfg.dataset_manifest.empty()) {
      SynthConfig sc;
      sc.n_identities = cfg.synth_identities;
      sc.views_per_identity = cfg.synth_views;
      const std::string mpath = synth_dataset((fs::path(cfg.out_dir) / "data").string(), sc,
                                              derive_seed(cfg.seed, "data"));
      p.data = load_manifest(mpath);
    } else {
      p.data = load_manifest(cfg.dataset_manifest);
    }
  });
  stage("split", [&] {
    Rng srng(derive_seed(cfg.seed, "split"));
    p.ids = split_identities(p.data, srng);
    require(!p.ids.train.empty() && !p.ids.val.empty() && !p.ids.test.empty(),
            "dataset too small for a train/val/test identity split");
  });
  stage("face", [&] {
    Rng frng(derive_seed(cfg.seed, "face"));
    p.face = face_model_from_config(cfg, p.data, frng);
    if (cfg.face_model == "toy") {
      fs::create_directories(fs::path(cfg.out_dir) / "models");
      save_embedding_model((fs::path(cfg.out_dir) / "models" / "face.bin").string(), p.face);
    }
  });
  stage("train-attacks", [&] {
    std::vector<std::string> ids = p.ids.train;
    ids.insert(ids.end(), p.ids.val.begin(), p.ids.val.end());
    AttackSetSpec spec;
    spec.masks = cfg.train_masks;
    spec.modes = cfg.train_modes;
    spec.alpha = 0.0;
    spec.beta_lo = cfg.beta_lo;
    spec.beta_hi = cfg.beta_hi;
    spec.steps = cfg.attack_steps;
    p.train_attacks = generate_attack_set(p.data, ids, p.face, spec,
                                          (fs::path(cfg.out_dir) / "attacks" / "train").string(),
                                          derive_seed(cfg.seed, "train-attacks"));
  });
  stage("corpus", [&] {
    p.corpus = merge_manifests(cfg.out_dir, {&p.data, &p.train_attacks});
    DatasetSplit ids_no_test = p.ids;
    ids_no_test.test.clear();
    p.corpus_split = entry_split_by_identity(p.corpus, ids_no_test);
  });
  return p;
}

DetectorModel train_pipeline_detector(const Pipeline& p, const RunConfig& cfg, StrategyKind kind,
                                      const std::string& backbone, const std::string& seed_tag,
                                      DetectorTrainStats* stats = nullptr) {
  Rng drng(derive_seed(cfg.seed, seed_tag));
  return train_detector(p.corpus, p.corpus_split, kind, backbone, cfg.detector_train, drng, stats);
}

DefenseStrategy deployed_strategy(const DetectorModel& det, StrategyKind kind, int flag_threshold) {
  DefenseStrategy s;
  s.kind = kind;
  s.patch_prob_threshold = det.val_threshold;
  s.flag_threshold = flag_threshold;
  return s;
}

std::string format_row(const std::string& tm, const std::string& strat, const EvalReport& r) {
  auto far_of = [&](const std::string& mask) {
    auto it = r.far_by_mask.find(mask);
    return it == r.far_by_mask.end() ? std::string("     -") : [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%6.4f", it->second);
      return std::string(buf);
    }();
  };
  char head[128];
  std::snprintf(head, sizeof head, "%-16s %-7s tpr=%6.4f", tm.c_str(), strat.c_str(), r.tpr);
  std::string row(head);
  for (const char* mask : {"hat", "glasses", "random"})
    row += std::string(" far_") + mask + "=" + far_of(mask);
  return row;
}

}  // namespace

std::string run_experiment(const RunConfig& cfg) {
  require(!cfg.out_dir.empty(), "run config missing out_dir");
  fs::create_directories(cfg.out_dir);
  std::vector<std::string> log;
  auto flush_log = [&] {
    std::ofstream out((fs::path(cfg.out_dir) / "run.log").string(), std::ios::binary);
    for (const auto& line : log) out << line << "\n";
  };
  {
    std::ofstream out((fs::path(cfg.out_dir) / "config.json").string(), std::ios::binary);
    require(bool(out), "cannot write config echo");
    out << run_config_to_json(cfg).dump(2) << "\n";
  }

  auto stage = [&](const std::string& name, auto&& fn) {
    try {
      fn();
      log.push_back(name + ": ok");
    } catch (const std::exception& ex) {
      log.push_back(name + ": error: " + ex.what());
      flush_log();
      throw;
    }
  };

  Pipeline p;
  try {
    p = build_pipeline(cfg, &log);
  } catch (...) {
    flush_log();
    throw;
  }

  const bool want_strategy_leaked =
      std::count(cfg.threat_models.begin(), cfg.threat_models.end(), ThreatModel::StrategyLeaked) > 0;
  const bool want_model_leaked =
      std::count(cfg.threat_models.begin(), cfg.threat_models.end(), ThreatModel::ModelLeaked) > 0;

  std::map<std::string, DetectorModel> reference, surrogate;
  stage("detectors", [&] {
    fs::create_directories(fs::path(cfg.out_dir) / "models");
    for (StrategyKind kind : cfg.strategies) {
      const std::string name = strategy_kind_name(kind);
      DetectorModel det =
          train_pipeline_detector(p, cfg, kind, cfg.reference_backbone, "detector/" + name);
      save_detector((fs::path(cfg.out_dir) / "models" / ("det-" + name + ".bin")).string(), det);
      reference.emplace(name, std::move(det));
      if (want_strategy_leaked) {
        DetectorModel sur =
            train_pipeline_detector(p, cfg, kind, cfg.surrogate_backbone, "surrogate/" + name);
        save_detector((fs::path(cfg.out_dir) / "models" / ("sur-" + name + ".bin")).string(), sur);
        surrogate.emplace(name, std::move(sur));
      }
    }
  });

  // attack sets keyed by threat model then strategy (white-box is shared)
  std::map<std::string, std::map<std::string, Manifest>> sets;
  stage("eval-attacks", [&] {
    AttackSetSpec base;
    base.masks = cfg.eval_masks;
    base.modes = cfg.eval_modes;
    base.beta_lo = cfg.beta_lo;
    base.beta_hi = cfg.beta_hi;
    base.steps = cfg.attack_steps;
    for (ThreatModel tm : cfg.threat_models) {
      const std::string tm_name = threat_model_name(tm);
      if (tm == ThreatModel::WhiteBox) {
        AttackSetSpec spec = base;
        spec.alpha = 0.0;
        Manifest set = generate_attack_set(
            p.data, p.ids.test, p.face, spec,
            (fs::path(cfg.out_dir) / "attacks" / tm_name).string(),
            derive_seed(cfg.seed, "attacks/" + tm_name));
        for (StrategyKind kind : cfg.strategies)
          sets[tm_name][strategy_kind_name(kind)] = set;
      } else {
        for (StrategyKind kind : cfg.strategies) {
          const std::string name = strategy_kind_name(kind);
          AttackSetSpec spec = base;
          spec.alpha = cfg.alpha;
          spec.strategy = kind;
          spec.detector =
              tm == ThreatModel::ModelLeaked ? &reference.at(name) : &surrogate.at(name);
          sets[tm_name][name] = generate_attack_set(
              p.data, p.ids.test, p.face, spec,
              (fs::path(cfg.out_dir) / "attacks" / (tm_name + "-" + name)).string(),
              derive_seed(cfg.seed, "attacks/" + tm_name + "/" + name));
        }
      }
    }
    (void)want_model_leaked;
  });

  std::vector<std::string> table;
  stage("evaluate", [&] {
    Manifest normals = test_normals_view(p.data, p.ids);
    for (ThreatModel tm : cfg.threat_models) {
      const std::string tm_name = threat_model_name(tm);
      for (StrategyKind kind : cfg.strategies) {
        const std::string name = strategy_kind_name(kind);
        const DetectorModel& det = reference.at(name);
        const Manifest& atk = sets.at(tm_name).at(name);
        EvalReport r = evaluate(det, deployed_strategy(det, kind, cfg.flag_threshold), normals,
                                {&atk}, tm, derive_seed(cfg.seed, "eval/" + tm_name + "/" + name));
        r.manifest["config"] = run_config_to_json(cfg);
        write_eval_report((fs::path(cfg.out_dir) / "reports" / (tm_name + "-" + name)).string(), r);
        table.push_back(format_row(tm_name, name, r));
      }
    }
  });

  stage("summary", [&] {
    fs::create_directories(fs::path(cfg.out_dir) / "reports");
    std::ofstream out((fs::path(cfg.out_dir) / "reports" / "summary.txt").string(),
                      std::ios::binary);
    require(bool(out), "cannot write summary");
    for (const auto& row : table) out << row << "\n";
  });

  flush_log();
  return cfg.out_dir;
}

std::vector<AlphaSweepRow> alpha_sweep(const RunConfig& cfg, const std::vector<double>& alphas) {
  require(!alphas.empty(), "alpha sweep needs at least one alpha");
  for (double a : alphas)
    require(a > 0.0 && a <= 1.0, "alpha sweep values must lie in (0, 1]; got " + std::to_string(a));
  require(!cfg.out_dir.empty(), "run config missing out_dir");
  fs::create_directories(cfg.out_dir);

  Pipeline p = build_pipeline(cfg, nullptr);
  const StrategyKind kinds[2] = {StrategyKind::Whole, StrategyKind::RandomPatch};
  std::map<std::string, DetectorModel> reference, surrogate;
  for (StrategyKind kind : kinds) {
    const std::string name = strategy_kind_name(kind);
    reference.emplace(name,
                      train_pipeline_detector(p, cfg, kind, cfg.reference_backbone, "detector/" + name));
    surrogate.emplace(name,
                      train_pipeline_detector(p, cfg, kind, cfg.surrogate_backbone, "surrogate/" + name));
  }

  Manifest normals = test_normals_view(p.data, p.ids);
  std::vector<AlphaSweepRow> rows;
  for (double a : alphas) {
    AlphaSweepRow row;
    row.alpha = a;
    for (StrategyKind kind : kinds) {
      const std::string name = strategy_kind_name(kind);
      AttackSetSpec spec;
      spec.masks = cfg.eval_masks;
      spec.modes = cfg.eval_modes;
      spec.alpha = a;
      spec.beta_lo = cfg.beta_lo;
      spec.beta_hi = cfg.beta_hi;
      spec.steps = cfg.attack_steps;
      spec.strategy = kind;
      spec.detector = &surrogate.at(name);
      char tag[64];
      std::snprintf(tag, sizeof tag, "alpha-%.6g-%s", a, name.c_str());
      Manifest set = generate_attack_set(p.data, p.ids.test, p.face, spec,
                                         (fs::path(cfg.out_dir) / "alpha-sweep" / tag).string(),
                                         derive_seed(cfg.seed, std::string("alpha-sweep/") + tag));
      const DetectorModel& det = reference.at(name);
      EvalReport r =
          evaluate(det, deployed_strategy(det, kind, cfg.flag_threshold), normals, {&set},
                   ThreatModel::StrategyLeaked,
                   derive_seed(cfg.seed, std::string("alpha-sweep/eval/") + tag));
      int accepted = 0, total = 0;
      for (const auto& rec : r.records) {
        if (rec.kind != "attack") continue;
        ++total;
        if (rec.accepted) ++accepted;
      }
      const double far = total > 0 ? double(accepted) / double(total) : 0.0;
      if (kind == StrategyKind::Whole) {
        row.far_whole = far;
        row.far_whole_by_mask = r.far_by_mask;
      } else {
        row.far_random = far;
        row.far_random_by_mask = r.far_by_mask;
      }
      write_eval_report((fs::path(cfg.out_dir) / "alpha-sweep" / (std::string(tag) + "-report")).string(),
                        r);
    }
    rows.push_back(std::move(row));
  }

  std::ofstream out((fs::path(cfg.out_dir) / "alpha-sweep" / "table.txt").string(),
                    std::ios::binary);
  require(bool(out), "cannot write alpha sweep table");
  for (const auto& row : rows) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "alpha=%g far_whole=%6.4f far_random=%6.4f", row.alpha,
                  row.far_whole, row.far_random);
    out << buf << "\n";
  }
  return rows;
}

EvalReport cross_dataset_eval(const Manifest& train_data, const Manifest& test_data,
                              StrategyKind strategy, const RunConfig& cfg, EmbeddingModel& face) {
  auto sorted_ids = [](const Manifest& m) {
    std::vector<std::string> ids;
    for (const auto& e : m.entries) ids.push_back(e.id);
    std::sort(ids.begin(), ids.end());
    return ids;
  };
  require(sorted_ids(train_data) != sorted_ids(test_data),
          "cross-dataset evaluation requires two different datasets");
  std::set<std::string> train_ids;
  for (const auto& e : train_data.entries) train_ids.insert(e.identity);
  for (const auto& e : test_data.entries)
    require(!train_ids.count(e.identity), "datasets share identity '" + e.identity + "'");

  require(!cfg.out_dir.empty(), "run config missing out_dir");
  const fs::path root = fs::path(cfg.out_dir) / "cross";
  fs::create_directories(root);

  Rng srng(derive_seed(cfg.seed, "cross/split"));
  DatasetSplit a_ids = split_identities(train_data, srng);
  std::vector<std::string> trainable = a_ids.train;
  trainable.insert(trainable.end(), a_ids.val.begin(), a_ids.val.end());

  AttackSetSpec train_spec;
  train_spec.masks = cfg.train_masks;
  train_spec.modes = cfg.train_modes;
  train_spec.alpha = 0.0;
  train_spec.beta_lo = cfg.beta_lo;
  train_spec.beta_hi = cfg.beta_hi;
  train_spec.steps = cfg.attack_steps;
  Manifest train_atk = generate_attack_set(train_data, trainable, face, train_spec,
                                           (root / "train-attacks").string(),
                                           derive_seed(cfg.seed, "cross/train-attacks"));

  Manifest corpus = merge_manifests(root.string(), {&train_data, &train_atk});
  DatasetSplit ids_no_test = a_ids;
  ids_no_test.test.clear();
  DatasetSplit corpus_split = entry_split_by_identity(corpus, ids_no_test);

  Rng drng(derive_seed(cfg.seed, "cross/detector"));
  DetectorModel det = train_detector(corpus, corpus_split, strategy, cfg.reference_backbone,
                                     cfg.detector_train, drng);
  save_detector((root / "detector.bin").string(), det);

  std::set<std::string> b_idset;
  for (const auto& e : test_data.entries)
    if (e.kind == "normal") b_idset.insert(e.identity);
  require(!b_idset.empty(), "test dataset has no normal images");
  AttackSetSpec eval_spec = train_spec;
  eval_spec.masks = cfg.eval_masks;
  eval_spec.modes = cfg.eval_modes;
  Manifest test_atk = generate_attack_set(
      test_data, std::vector<std::string>(b_idset.begin(), b_idset.end()), face, eval_spec,
      (root / "test-attacks").string(), derive_seed(cfg.seed, "cross/test-attacks"));

  EvalReport r = evaluate(det, deployed_strategy(det, strategy, cfg.flag_threshold), test_data,
                          {&test_atk}, ThreatModel::WhiteBox, derive_seed(cfg.seed, "cross/eval"));
  r.manifest["cross_dataset"] = true;
  write_eval_report((root / "report").string(), r);
  return r;
}

Manifest ingest_directory(const std::string& src, const std::string& out_manifest) {
  require(fs::is_directory(src), "'" + src + "' is not a directory");
  const fs::path out_dir = fs::path(out_manifest).parent_path();
  if (!out_dir.empty()) fs::create_directories(out_dir);

  auto sorted_ppms = [](const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& de : fs::directory_iterator(dir))
      if (de.is_regular_file() && de.path().extension() == ".ppm") files.push_back(de.path());
    std::sort(files.begin(), files.end());
    return files;
  };
  std::vector<fs::path> subdirs;
  for (const auto& de : fs::directory_iterator(src))
    if (de.is_directory()) subdirs.push_back(de.path());
  std::sort(subdirs.begin(), subdirs.end());

  const fs::path base = out_dir.empty() ? fs::path(".") : out_dir;
  std::vector<ManifestEntry> entries;
  auto add = [&](const std::string& identity, const std::string& id, const fs::path& file) {
    read_ppm(file.string());  // must decode
    ManifestEntry e;
    e.id = id;
    e.identity = identity;
    e.kind = "normal";
    fs::path rel = file.lexically_normal().lexically_relative(base.lexically_normal());
    e.image = rel.empty() ? file.generic_string() : rel.generic_string();
    entries.push_back(std::move(e));
  };
  if (subdirs.empty()) {
    for (const fs::path& f : sorted_ppms(src)) add(f.stem().string(), f.stem().string(), f);
  } else {
    for (const fs::path& d : subdirs) {
      const std::string identity = d.filename().string();
      for (const fs::path& f : sorted_ppms(d)) add(identity, identity + "-" + f.stem().string(), f);
    }
  }
  require(!entries.empty(), "no .ppm images under '" + src + "'");
  save_manifest(out_manifest, entries);
  return load_manifest(out_manifest);
}

}  // namespace rpd
