// Command line front end: dataset synthesis and ingest, face and detector
// training, attack generation, and the evaluation pipelines.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rpd/eval.hpp"
#include "rpd/synth.hpp"

using namespace rpd;

namespace {

std::pair<double, double> parse_beta(const std::string& s) {
  const auto pos = s.find(':');
  if (pos == std::string::npos) {
    const double v = std::stod(s);
    return {v, v};
  }
  return {std::stod(s.substr(0, pos)), std::stod(s.substr(pos + 1))};
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<std::string> all_identities(const Manifest& m) {
  std::vector<std::string> ids;
  for (const auto& e : m.entries)
    if (e.kind == "normal" &&
        (ids.empty() || std::find(ids.begin(), ids.end(), e.identity) == ids.end()))
      ids.push_back(e.identity);
  return ids;
}

EmbeddingModel open_face_model(const std::string& name, const Manifest& data, uint64_t seed) {
  RunConfig rc;
  rc.out_dir = ".";
  rc.face_model = name;
  Rng rng(derive_seed(seed, "face"));
  return face_model_from_config(rc, data, rng);
}

void print_report(const EvalReport& r) {
  std::printf("tpr=%.4f", r.tpr);
  for (const auto& [mask, far] : r.far_by_mask) std::printf(" far_%s=%.4f", mask.c_str(), far);
  for (const auto& [mode, sim] : r.mean_similarity)
    std::printf(" sim_%s=%.4f", mode.c_str(), sim);
  std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"random-patch defense against physical adversarial face attacks"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate a synthetic face dataset");
  std::string synth_out;
  int synth_ids = 50, synth_views = 1;
  uint64_t synth_seed = 1;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--identities", synth_ids, "number of identities");
  synth->add_option("--views", synth_views, "views per identity");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->callback([&] {
    SynthConfig sc;
    sc.n_identities = synth_ids;
    sc.views_per_identity = synth_views;
    const std::string path = synth_dataset(synth_out, sc, synth_seed);
    std::printf("wrote %d images -> %s\n", synth_ids * synth_views, path.c_str());
  });

  // ingest
  auto* ingest = app.add_subcommand("ingest", "build a manifest from a directory of images");
  std::string ingest_src, ingest_out;
  ingest->add_option("--src", ingest_src, "source directory")->required();
  ingest->add_option("--out", ingest_out, "output manifest path")->required();
  ingest->callback([&] {
    Manifest m = ingest_directory(ingest_src, ingest_out);
    std::printf("ingested %zu images -> %s\n", m.entries.size(), ingest_out.c_str());
  });

  // train-face
  auto* tface = app.add_subcommand("train-face", "train the toy face embedding model");
  std::string tface_data, tface_out;
  uint64_t tface_seed = 1;
  FaceTrainConfig tface_cfg;
  tface->add_option("--data", tface_data, "dataset manifest")->required();
  tface->add_option("--out", tface_out, "output model path")->required();
  tface->add_option("--seed", tface_seed, "training seed");
  tface->add_option("--epochs", tface_cfg.epochs, "training epochs");
  tface->add_option("--batch-size", tface_cfg.batch_size, "batch size");
  tface->add_option("--lr", tface_cfg.lr, "learning rate");
  tface->add_option("--holdout", tface_cfg.holdout_per_identity, "held-out views per identity");
  tface->add_option("--target-accuracy", tface_cfg.target_accuracy, "holdout accuracy gate");
  tface->callback([&] {
    Manifest data = load_manifest(tface_data);
    RunConfig rc;
    rc.out_dir = ".";
    rc.face_train = tface_cfg;
    Rng rng(derive_seed(tface_seed, "face"));
    FaceTrainStats stats;
    EmbeddingModel model = face_model_from_config(rc, data, rng, &stats);
    save_embedding_model(tface_out, model);
    std::printf("holdout accuracy %.4f (epoch %d) -> %s\n", stats.best_holdout_accuracy,
                stats.best_epoch, tface_out.c_str());
  });

  // train-detector
  auto* tdet = app.add_subcommand("train-detector", "train a patch classifier detector");
  std::string tdet_strategy, tdet_backbone = "small-mobile", tdet_data, tdet_out;
  uint64_t tdet_seed = 1;
  DetectorTrainConfig tdet_cfg;
  tdet->add_option("--strategy", tdet_strategy, "whole|even|random")->required();
  tdet->add_option("--backbone", tdet_backbone, "backbone id");
  tdet->add_option("--data", tdet_data, "manifest with normal and attack images")->required();
  tdet->add_option("--seed", tdet_seed, "training seed");
  tdet->add_option("--out", tdet_out, "output model path")->required();
  tdet->add_option("--epochs", tdet_cfg.epochs, "training epochs");
  tdet->add_option("--batch-size", tdet_cfg.batch_size, "batch size");
  tdet->add_option("--lr", tdet_cfg.lr, "learning rate");
  tdet->callback([&] {
    Manifest data = load_manifest(tdet_data);
    Rng srng(derive_seed(tdet_seed, "split"));
    DatasetSplit ids = split_identities(data, srng);
    DatasetSplit split = entry_split_by_identity(data, ids);
    Rng drng(derive_seed(tdet_seed, "detector"));
    DetectorTrainStats stats;
    DetectorModel det = train_detector(data, split, strategy_kind_from_name(tdet_strategy),
                                       tdet_backbone, tdet_cfg, drng, &stats);
    save_detector(tdet_out, det);
    std::printf("val tpr %.4f far %.4f threshold %.2f (epoch %d) -> %s\n", stats.best_val_tpr,
                stats.best_val_far, stats.chosen_threshold, stats.best_epoch, tdet_out.c_str());
  });

  // gen-attack
  auto* gen = app.add_subcommand("gen-attack", "generate an attack set");
  std::string gen_mode, gen_mask, gen_face, gen_data, gen_ids_csv, gen_defense = "none";
  std::string gen_strategy = "random", gen_beta = "6e-5:1e-4", gen_out;
  double gen_alpha = 0.0;
  int gen_steps = 300;
  uint64_t gen_seed = 1;
  gen->add_option("--mode", gen_mode, "dodging|impersonation")->required();
  gen->add_option("--mask", gen_mask, "hat|glasses|random")->required();
  gen->add_option("--face-model", gen_face, "embedding model path, or 'toy' to train one")
      ->required();
  gen->add_option("--data", gen_data, "source manifest of normal images")->required();
  gen->add_option("--identities", gen_ids_csv, "comma list of identities (default: all)");
  gen->add_option("--defense", gen_defense, "detector model path, or 'none'");
  gen->add_option("--strategy", gen_strategy, "defense strategy when --defense is a model");
  gen->add_option("--alpha", gen_alpha, "classifier loss weight");
  gen->add_option("--beta", gen_beta, "tv loss weight, value or lo:hi range");
  gen->add_option("--steps", gen_steps, "optimization steps");
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->callback([&] {
    Manifest data = load_manifest(gen_data);
    EmbeddingModel face = open_face_model(gen_face, data, gen_seed);
    std::vector<std::string> ids =
        gen_ids_csv.empty() ? all_identities(data) : split_csv(gen_ids_csv);
    DetectorModel det;
    AttackSetSpec spec;
    spec.masks = {mask_kind_from_name(gen_mask)};
    spec.modes = {attack_mode_from_name(gen_mode)};
    spec.alpha = gen_alpha;
    std::tie(spec.beta_lo, spec.beta_hi) = parse_beta(gen_beta);
    spec.steps = gen_steps;
    if (gen_defense != "none") {
      det = load_detector(gen_defense);
      spec.detector = &det;
      spec.strategy = strategy_kind_from_name(gen_strategy);
    }
    Manifest set = generate_attack_set(data, ids, face, spec, gen_out, gen_seed);
    double mean_final = 0.0;
    for (const auto& e : set.entries) mean_final += e.attack->final_similarity;
    std::printf("%zu attacks, mean final similarity %.4f -> %s/manifest.jsonl\n",
                set.entries.size(), mean_final / double(set.entries.size()), gen_out.c_str());
  });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "evaluate a detector on normals and attack sets");
  std::string ev_det, ev_strategy, ev_normals, ev_tm = "white-box", ev_out;
  std::vector<std::string> ev_attacks;
  double ev_threshold = -1.0;
  int ev_flag = 1;
  uint64_t ev_seed = 1;
  ev->add_option("--detector", ev_det, "detector model path")->required();
  ev->add_option("--strategy", ev_strategy, "whole|even|random")->required();
  ev->add_option("--normals", ev_normals, "manifest of normal images")->required();
  ev->add_option("--attacks", ev_attacks, "attack set manifest (repeatable)")->required();
  ev->add_option("--threat-model", ev_tm, "white-box|strategy-leaked|model-leaked");
  ev->add_option("--patch-prob-threshold", ev_threshold,
                 "patch probability threshold (default: calibrated)");
  ev->add_option("--flag-threshold", ev_flag, "flagged patches needed to reject");
  ev->add_option("--seed", ev_seed, "evaluation seed");
  ev->add_option("--out", ev_out, "report path base")->required();
  ev->callback([&] {
    DetectorModel det = load_detector(ev_det);
    DefenseStrategy strategy;
    strategy.kind = strategy_kind_from_name(ev_strategy);
    strategy.patch_prob_threshold = ev_threshold < 0 ? det.val_threshold : ev_threshold;
    strategy.flag_threshold = ev_flag;
    Manifest normals = load_manifest(ev_normals);
    std::vector<Manifest> sets;
    sets.reserve(ev_attacks.size());
    for (const auto& path : ev_attacks) sets.push_back(load_manifest(path));
    std::vector<const Manifest*> set_ptrs;
    for (const auto& s : sets) set_ptrs.push_back(&s);
    EvalReport r = evaluate(det, strategy, normals, set_ptrs, threat_model_from_name(ev_tm),
                            ev_seed);
    write_eval_report(ev_out, r);
    print_report(r);
    std::printf("report -> %s.json\n", ev_out.c_str());
  });

  // strength
  auto* st = app.add_subcommand("strength", "mean similarity of an attack set per mask and mode");
  std::string st_attacks, st_base, st_face;
  uint64_t st_seed = 1;
  st->add_option("--attacks", st_attacks, "attack set manifest")->required();
  st->add_option("--base", st_base, "manifest holding originals and targets")->required();
  st->add_option("--face-model", st_face, "embedding model path, or 'toy' to train one")
      ->required();
  st->add_option("--seed", st_seed, "seed for toy training");
  st->callback([&] {
    Manifest attacks = load_manifest(st_attacks);
    Manifest base = load_manifest(st_base);
    EmbeddingModel face = open_face_model(st_face, base, st_seed);
    for (const auto& row : attack_strength_report(attacks, base, face))
      std::printf("%-8s %-14s mean similarity %+.4f over %d attacks\n", row.mask.c_str(),
                  row.mode.c_str(), row.mean_similarity, row.count);
  });

  // run-experiment
  auto* run = app.add_subcommand("run-experiment", "run the full configured pipeline");
  std::string run_cfg_path;
  run->add_option("--config", run_cfg_path, "run config JSON")->required();
  run->callback([&] {
    RunConfig cfg = load_run_config(run_cfg_path);
    const std::string out = run_experiment(cfg);
    std::printf("experiment -> %s\n", out.c_str());
    std::ifstream table(out + "/reports/summary.txt");
    std::string line;
    while (std::getline(table, line)) std::printf("%s\n", line.c_str());
  });

  // alpha-sweep
  auto* sweep = app.add_subcommand("alpha-sweep", "strategy-leaked FAR across alpha values");
  std::string sweep_cfg_path, sweep_alphas = "0.001,0.01,0.1";
  sweep->add_option("--config", sweep_cfg_path, "run config JSON")->required();
  sweep->add_option("--alphas", sweep_alphas, "comma list of alpha values");
  sweep->callback([&] {
    RunConfig cfg = load_run_config(sweep_cfg_path);
    std::vector<double> alphas;
    for (const auto& s : split_csv(sweep_alphas)) alphas.push_back(std::stod(s));
    for (const auto& row : alpha_sweep(cfg, alphas))
      std::printf("alpha=%g far_whole=%.4f far_random=%.4f\n", row.alpha, row.far_whole,
                  row.far_random);
  });

  // cross-eval
  auto* cross = app.add_subcommand("cross-eval", "train on one dataset, evaluate on another");
  std::string cross_cfg_path, cross_train, cross_test, cross_strategy = "random";
  std::string cross_face = "toy";
  cross->add_option("--config", cross_cfg_path, "run config JSON")->required();
  cross->add_option("--train", cross_train, "training dataset manifest")->required();
  cross->add_option("--test", cross_test, "evaluation dataset manifest")->required();
  cross->add_option("--strategy", cross_strategy, "whole|even|random");
  cross->add_option("--face-model", cross_face, "embedding model path, or 'toy' to train one");
  cross->callback([&] {
    RunConfig cfg = load_run_config(cross_cfg_path);
    Manifest train = load_manifest(cross_train);
    Manifest test = load_manifest(cross_test);
    EmbeddingModel face = open_face_model(cross_face, train, cfg.seed);
    EvalReport r = cross_dataset_eval(train, test, strategy_kind_from_name(cross_strategy), cfg,
                                      face);
    print_report(r);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
  return 0;
}
