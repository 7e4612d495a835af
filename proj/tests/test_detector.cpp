#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rpd/detector.hpp"
#include "rpd/model_io.hpp"
#include "rpd/synth.hpp"
#include "rpd/zoo.hpp"

using namespace rpd;
namespace fs = std::filesystem;

TEST_CASE("strategy names round-trip") {
  for (auto k : {StrategyKind::Whole, StrategyKind::EvenPatch, StrategyKind::RandomPatch})
    CHECK(strategy_kind_from_name(strategy_kind_name(k)) == k);
  CHECK(strategy_kind_name(StrategyKind::Whole) == "whole");
  CHECK(strategy_kind_name(StrategyKind::EvenPatch) == "even");
  CHECK(strategy_kind_name(StrategyKind::RandomPatch) == "random");
  CHECK_THROWS_AS(strategy_kind_from_name("uneven"), Error);
}

TEST_CASE("validate_strategy rejects out-of-range parameters") {
  DefenseStrategy ok;
  validate_strategy(ok);
  DefenseStrategy bad = ok;
  bad.patch_prob_threshold = 0.0;
  CHECK_THROWS_AS(validate_strategy(bad), Error);
  bad.patch_prob_threshold = 1.0;
  CHECK_THROWS_AS(validate_strategy(bad), Error);
  bad = ok;
  bad.flag_threshold = 0;
  CHECK_THROWS_AS(validate_strategy(bad), Error);
}

TEST_CASE("make_decision counts strict exceedances against the flag threshold") {
  auto d = make_decision({0.6}, std::nullopt, 0.5, 1);
  CHECK(d.flagged_count == 1);
  CHECK_FALSE(d.accepted);
  d = make_decision({0.4}, std::nullopt, 0.5, 1);
  CHECK(d.flagged_count == 0);
  CHECK(d.accepted);
  d = make_decision({0.5}, std::nullopt, 0.5, 1);  // equality does not flag
  CHECK(d.flagged_count == 0);
  CHECK(d.accepted);

  const std::vector<double> probs = {0.9, 0.1, 0.8, 0.2, 0.7, 0.3, 0.6, 0.4, 0.55};  // 5 above 0.5
  for (int th = 1; th <= 9; ++th) {
    auto dd = make_decision(probs, std::nullopt, 0.5, th);
    CHECK(dd.flagged_count == 5);
    CHECK(dd.accepted == (5 < th));
  }

  CHECK_THROWS_AS(make_decision({}, std::nullopt, 0.5, 1), Error);
  CHECK_THROWS_AS(make_decision({0.5}, std::nullopt, 1.0, 1), Error);
  CHECK_THROWS_AS(make_decision({0.5}, std::nullopt, 0.5, 0), Error);
}

TEST_CASE("untrained detector emits an uncommitted distribution") {
  Rng rng(5);
  DetectorModel m;
  m.backbone_id = "small-mobile";
  m.net = make_backbone(m.backbone_id, rng);
  Tensor img = synth_face(1, 0, 0);
  auto q = m.forward_patch(img);
  CHECK(q[0] > 0.05);
  CHECK(q[0] < 0.95);
  CHECK(q[0] + q[1] == doctest::Approx(1.0).epsilon(1e-12));
  Tensor small(3, 64, 64, 0.2);
  CHECK_THROWS_AS(m.forward_patch(small), Error);
}

TEST_CASE("detector input gradient of q1 matches finite differences") {
  Rng rng(6);
  DetectorModel m;
  m.backbone_id = "small-mobile";
  m.net = make_backbone(m.backbone_id, rng);
  // Nudge the zero-initialized head so q1 depends on the input.
  auto params = collect_params(*m.net);
  Rng wrng(7);
  for (Param* p : params)
    for (double& w : p->v) w += wrng.uniform(-0.01, 0.01);

  Tensor img = synth_face(2, 1, 0);
  auto q = m.forward_patch(img);
  zero_grads(params);
  Tensor dx = m.backward({-q[0] * q[1], q[1] * (1.0 - q[1])});  // dq1/dlogits
  const double h = 1e-6;
  for (size_t i : {size_t(5000), size_t(70000), size_t(140000)}) {
    Tensor p = img, mi = img;
    p.v[i] += h;
    mi.v[i] -= h;
    const double fd = (m.forward_patch(p)[1] - m.forward_patch(mi)[1]) / (2 * h);
    const double rel = std::abs(dx.v[i] - fd) / std::max(1e-9, std::abs(fd));
    CHECK(rel < 1e-4);
  }
}

namespace {

// Tiny labeled corpus: clean synthetic faces vs. faces with a vivid square
// sticker, the sticker region recorded as the attack mask.
struct MiniData {
  std::string manifest_path;
  Manifest manifest;
  DatasetSplit split;
};

MiniData build_mini_dataset(const std::string& dir, uint64_t seed) {
  fs::remove_all(dir);
  fs::create_directories(dir + "/images");
  Rng rng(seed);
  std::vector<ManifestEntry> entries;
  auto add = [&](const std::string& id, const Tensor& img, const RegionMask* mask) {
    ManifestEntry e;
    e.id = id;
    e.image = "images/" + id + ".ppm";
    e.identity = id.substr(0, id.find('-'));
    e.kind = mask ? "attack" : "normal";
    write_ppm(dir + "/" + e.image, to_image_u8(img));
    if (mask) {
      e.mask = "images/" + id + "-mask.pgm";
      write_mask_pgm(dir + "/" + e.mask, *mask);
      AttackMeta a;
      a.mode = "dodging";
      a.mask_kind = "random";
      a.original_id = id;
      a.steps = 0;
      a.seed = seed;
      e.attack = a;
    }
    entries.push_back(e);
  };

  for (int i = 0; i < 12; ++i) add("n" + std::to_string(i), synth_face(seed, i, 0), nullptr);
  for (int i = 0; i < 12; ++i) {
    Tensor img = synth_face(seed, i, 1);
    RegionMask mask;
    mask.width = img.w;
    mask.height = img.h;
    mask.v.assign(size_t(img.w) * size_t(img.h), 0);
    const int x0 = 50 + rng.uniform_int(0, 40), y0 = 50 + rng.uniform_int(0, 40);
    for (int y = y0; y < y0 + 80; ++y)
      for (int x = x0; x < x0 + 80; ++x) {
        img.at(0, y, x) = 1.0;
        img.at(1, y, x) = 0.05;
        img.at(2, y, x) = 0.9;
        mask.at(y, x) = 1;
      }
    add("a" + std::to_string(i), img, &mask);
  }

  MiniData d;
  d.manifest_path = dir + "/manifest.jsonl";
  save_manifest(d.manifest_path, entries);
  d.manifest = load_manifest(d.manifest_path);
  for (int i = 0; i < 8; ++i) {
    d.split.train.push_back("n" + std::to_string(i));
    d.split.train.push_back("a" + std::to_string(i));
  }
  for (int i = 8; i < 10; ++i) {
    d.split.val.push_back("n" + std::to_string(i));
    d.split.val.push_back("a" + std::to_string(i));
  }
  for (int i = 10; i < 12; ++i) {
    d.split.test.push_back("n" + std::to_string(i));
    d.split.test.push_back("a" + std::to_string(i));
  }
  return d;
}

}  // namespace

TEST_CASE("train_detector learns the mini corpus and survives a disk round-trip") {
  MiniData d = build_mini_dataset("/tmp/rpd_det_data", 97);

  DetectorTrainConfig cfg;
  cfg.epochs = 12;
  DetectorTrainStats stats;
  Rng rng(41);
  DetectorModel model = train_detector(d.manifest, d.split, StrategyKind::EvenPatch,
                                       "small-mobile", cfg, rng, &stats);
  CHECK(stats.best_epoch >= 0);
  CHECK(stats.best_val_tpr == doctest::Approx(1.0));
  CHECK(stats.best_val_far == doctest::Approx(0.0));
  CHECK(stats.epoch_loss.size() == 12);
  CHECK(stats.epoch_loss.back() < stats.epoch_loss.front());
  CHECK(model.val_threshold > 0.0);
  CHECK(model.val_threshold < 1.0);

  DefenseStrategy strat;
  strat.kind = StrategyKind::EvenPatch;
  strat.patch_prob_threshold = model.val_threshold;
  Rng drng(3);
  int normals_ok = 0, attacks_rejected = 0;
  for (const auto& id : d.split.test) {
    const ManifestEntry* e = nullptr;
    for (const auto& me : d.manifest.entries)
      if (me.id == id) e = &me;
    REQUIRE(e != nullptr);
    Decision dec = detect_image(model, strat, load_entry_image(d.manifest, *e), drng);
    CHECK(dec.patch_probs.size() == 9);
    REQUIRE(dec.grid.has_value());
    CHECK(dec.grid->kind == GridKind::Even);
    if (e->kind == "normal")
      normals_ok += dec.accepted;
    else
      attacks_rejected += !dec.accepted;
  }
  CHECK(normals_ok == 2);
  CHECK(attacks_rejected == 2);

  // The whole-image strategy runs a single pass over the full frame.
  strat.kind = StrategyKind::Whole;
  Tensor probe = load_entry_image(d.manifest, d.manifest.entries.front());
  Decision whole_dec = detect_image(model, strat, probe, drng);
  CHECK(whole_dec.patch_probs.size() == 1);
  CHECK_FALSE(whole_dec.grid.has_value());

  strat.kind = StrategyKind::RandomPatch;
  Rng r1(77), r2(77);
  Decision rd1 = detect_image(model, strat, probe, r1);
  Decision rd2 = detect_image(model, strat, probe, r2);
  REQUIRE(rd1.grid.has_value());
  CHECK(rd1.grid->kind == GridKind::Random);
  CHECK(*rd1.grid == *rd2.grid);
  CHECK(rd1.patch_probs == rd2.patch_probs);
  CHECK(rd1.accepted == rd2.accepted);

  const std::string path = "/tmp/rpd_det_model.bin";
  save_detector(path, model);
  DetectorModel loaded = load_detector(path);
  CHECK(loaded.backbone_id == model.backbone_id);
  CHECK(loaded.val_threshold == model.val_threshold);
  CHECK(loaded.train_manifest_hash == model.train_manifest_hash);
  CHECK(loaded.forward_patch(probe) == model.forward_patch(probe));
  std::remove(path.c_str());
  fs::remove_all("/tmp/rpd_det_data");
}

TEST_CASE("whole-image training separates the validation set") {
  MiniData d = build_mini_dataset("/tmp/rpd_det_data_w", 99);
  DetectorTrainConfig cfg;
  cfg.epochs = 24;
  cfg.batch_size = 2;
  cfg.decay_every = 8;
  DetectorTrainStats stats;
  Rng rng(43);
  DetectorModel model =
      train_detector(d.manifest, d.split, StrategyKind::Whole, "small-mobile", cfg, rng, &stats);
  CHECK(stats.best_val_tpr == doctest::Approx(1.0));
  CHECK(stats.best_val_far == doctest::Approx(0.0));
  CHECK(model.val_threshold > 0.0);
  CHECK(model.val_threshold < 1.0);
  fs::remove_all("/tmp/rpd_det_data_w");
}

TEST_CASE("train_detector validates its inputs") {
  MiniData d = build_mini_dataset("/tmp/rpd_det_data2", 98);
  DetectorTrainConfig cfg;
  cfg.epochs = 1;
  Rng rng(1);

  // Train split must never touch test-split entries.
  DatasetSplit leaky = d.split;
  leaky.train.push_back(d.split.test.front());
  CHECK_THROWS_WITH_AS(
      train_detector(d.manifest, leaky, StrategyKind::Whole, "small-mobile", cfg, rng),
      doctest::Contains("test-split"), Error);

  CHECK_THROWS_AS(
      train_detector(d.manifest, d.split, StrategyKind::Whole, "small-resnet-18", cfg, rng),
      Error);

  // A manifest with no attack images cannot train a detector.
  Manifest normals_only = d.manifest;
  normals_only.entries.erase(
      std::remove_if(normals_only.entries.begin(), normals_only.entries.end(),
                     [](const ManifestEntry& e) { return e.kind == "attack"; }),
      normals_only.entries.end());
  DatasetSplit ns;
  for (int i = 0; i < 8; ++i) ns.train.push_back("n" + std::to_string(i));
  for (int i = 8; i < 10; ++i) ns.val.push_back("n" + std::to_string(i));
  CHECK_THROWS_WITH_AS(
      train_detector(normals_only, ns, StrategyKind::Whole, "small-mobile", cfg, rng),
      doctest::Contains("no attack"), Error);
  fs::remove_all("/tmp/rpd_det_data2");
}

TEST_CASE("load_detector rejects foreign and damaged files") {
  CHECK_THROWS_AS(load_detector("/nonexistent/detector.bin"), Error);

  ModelFile f;
  f.kind = "embedding";
  f.header["arch"] = "toy-cnn-v1";
  f.params = {1.0, 2.0};
  const std::string wrong = "/tmp/rpd_wrong_kind.bin";
  save_model_file(wrong, f);
  CHECK_THROWS_WITH_AS(load_detector(wrong), doctest::Contains("not a detector"), Error);
  std::remove(wrong.c_str());

  // Truncation must surface as an error, not a garbage model.
  Rng rng(9);
  DetectorModel m;
  m.backbone_id = "small-mobile";
  m.net = make_backbone(m.backbone_id, rng);
  const std::string path = "/tmp/rpd_trunc_detector.bin";
  save_detector(path, m);
  const auto full = fs::file_size(path);
  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes(static_cast<size_t>(full));
  in.read(bytes.data(), std::streamsize(full));
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), std::streamsize(full / 2));
  out.close();
  CHECK_THROWS_AS(load_detector(path), Error);
  std::remove(path.c_str());
}
