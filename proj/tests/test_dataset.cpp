#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include "rpd/dataset.hpp"

using namespace rpd;

TEST_CASE("patch_overlap counts attacked pixels inside the rect") {
  RegionMask empty(64, 64);
  CHECK(patch_overlap(Rect{0, 0, 64, 64}, empty) == 0);

  RegionMask mask(64, 64);
  for (int y = 10; y < 30; ++y)
    for (int x = 5; x < 45; ++x) mask.at(y, x) = 1;
  CHECK(patch_overlap(Rect{5, 10, 45, 30}, mask) == 800);

  Rng rng(40);
  RegionMask rnd(64, 64);
  for (auto& b : rnd.v) b = uint8_t(rng.uniform() < 0.3);
  const Rect r{7, 13, 51, 40};
  long long want = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1 && rnd.at(y, x)) ++want;
  CHECK(patch_overlap(r, rnd) == want);

  CHECK_THROWS_AS(patch_overlap(Rect{0, 0, 65, 10}, mask), Error);
  CHECK_THROWS_AS(patch_overlap(Rect{-1, 0, 5, 5}, mask), Error);
}

TEST_CASE("label_patch applies the threshold-or-ratio rule") {
  RegionMask mask(100, 100);
  const Rect r{0, 0, 100, 100};
  CHECK(label_patch(r, mask) == 0.0);

  auto with_count = [](int n) {
    RegionMask m(100, 100);
    for (int i = 0; i < n; ++i) m.v[size_t(i)] = 1;
    return m;
  };
  CHECK(label_patch(r, with_count(400)) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(label_patch(r, with_count(1600)) == 1.0);
  CHECK(label_patch(r, with_count(800)) == 1.0);
  CHECK(label_patch(r, with_count(801)) == 1.0);
  CHECK(label_patch(r, with_count(1)) == doctest::Approx(1.0 / 800).epsilon(1e-15));

  double prev = -1.0;
  for (int n : {0, 100, 400, 799, 800, 900, 5000}) {
    const double l = label_patch(r, with_count(n));
    CHECK(l >= prev);
    CHECK(l >= 0.0);
    CHECK(l <= 1.0);
    prev = l;
  }

  CHECK_THROWS_AS(label_patch(r, mask, 0), Error);
}

TEST_CASE("select_patches on a normal image draws six distinct cells with zero labels") {
  Tensor img(3, 224, 224, 0.3);
  auto grid = even_split(224, 224);
  Rng a(55), b(55);
  auto s1 = select_patches(img, grid, nullptr, a, "img0");
  auto s2 = select_patches(img, grid, nullptr, b, "img0");
  REQUIRE(s1.size() == 6);
  std::set<std::pair<int, int>> rects;
  for (size_t i = 0; i < 6; ++i) {
    CHECK(s1[i].label == 0.0);
    CHECK(s1[i].patch.c == 3);
    CHECK(s1[i].patch.h == kPatchSize);
    CHECK(s1[i].patch.w == kPatchSize);
    CHECK(s1[i].source_rect == s2[i].source_rect);
    CHECK(s1[i].source_id == "img0");
    rects.insert({s1[i].source_rect.x0, s1[i].source_rect.y0});
  }
  CHECK(rects.size() == 6);
}

TEST_CASE("select_patches on an attack image keeps the top six labels") {
  Tensor img(3, 224, 224, 0.5);
  auto grid = even_split(224, 224);
  auto rects = grid_rects(grid);

  SUBCASE("mask confined to the top-left cell") {
    RegionMask mask(224, 224);
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 30; ++x) mask.at(y, x) = 1;  // 600 px, inside cell 0
    Rng rng(1);
    auto s = select_patches(img, grid, &mask, rng);
    REQUIRE(s.size() == 6);
    CHECK(s[0].source_rect == rects[0]);
    CHECK(s[0].label == doctest::Approx(600.0 / 800).epsilon(1e-15));
    for (size_t i = 1; i < 6; ++i) CHECK(s[i].label == 0.0);
  }

  SUBCASE("overlaps 900/500/100 give labels 1.0, 0.625, 0.125, 0, 0, 0") {
    RegionMask mask(224, 224);
    auto fill = [&](const Rect& r, int count) {
      int left = count;
      for (int y = r.y0; y < r.y1 && left > 0; ++y)
        for (int x = r.x0; x < r.x1 && left > 0; ++x, --left) mask.at(y, x) = 1;
    };
    fill(rects[4], 900);
    fill(rects[2], 500);
    fill(rects[7], 100);
    Rng rng(2);
    auto s = select_patches(img, grid, &mask, rng);
    std::vector<double> labels;
    for (const auto& p : s) labels.push_back(p.label);
    CHECK(labels == std::vector<double>{1.0, 0.625, 0.125, 0.0, 0.0, 0.0});
    CHECK(s[0].source_rect == rects[4]);
    CHECK(s[1].source_rect == rects[2]);
    CHECK(s[2].source_rect == rects[7]);
  }

  SUBCASE("all-equal labels break ties by row-major index") {
    RegionMask mask(224, 224, 1);
    Rng rng(3);
    auto s = select_patches(img, grid, &mask, rng);
    for (size_t i = 0; i < 6; ++i) {
      CHECK(s[i].label == 1.0);
      CHECK(s[i].source_rect == rects[i]);
    }
  }
}

TEST_CASE("select_patches validates dimensions") {
  Tensor img(3, 100, 100, 0.5);
  auto grid = even_split(224, 224);
  Rng rng(4);
  CHECK_THROWS_AS(select_patches(img, grid, nullptr, rng), Error);
  Tensor ok(3, 224, 224, 0.5);
  RegionMask small(100, 100);
  CHECK_THROWS_AS(select_patches(ok, grid, &small, rng), Error);
}

TEST_CASE("split_dataset uses floor(0.7n), floor(0.1n), remainder") {
  std::vector<std::string> ids;
  for (int i = 0; i < 2622; ++i) ids.push_back("id" + std::to_string(i));
  Rng rng(7);
  auto s = split_dataset(ids, rng);
  CHECK(s.train.size() == 1835);
  CHECK(s.val.size() == 262);
  CHECK(s.test.size() == 525);

  auto all = s.train;
  all.insert(all.end(), s.val.begin(), s.val.end());
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  auto sorted_ids = ids;
  std::sort(sorted_ids.begin(), sorted_ids.end());
  CHECK(all == sorted_ids);
}

TEST_CASE("split_dataset handles 10 ids and is deterministic") {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back(std::to_string(i));
  Rng a(9), b(9);
  auto s1 = split_dataset(ids, a);
  auto s2 = split_dataset(ids, b);
  CHECK(s1.train.size() == 7);
  CHECK(s1.val.size() == 1);
  CHECK(s1.test.size() == 2);
  CHECK(s1.train == s2.train);
  CHECK(s1.val == s2.val);
  CHECK(s1.test == s2.test);

  std::vector<std::string> few(9, "x");
  Rng c(1);
  CHECK_THROWS_AS(split_dataset(few, c), Error);
}

TEST_CASE("epoch_batches covers every sample exactly once") {
  Rng rng(11);
  auto batches = epoch_batches(23, 5, rng);
  CHECK(batches.size() == 5);
  CHECK(batches.back().size() == 3);
  std::set<int> seen;
  for (const auto& b : batches)
    for (int i : b) seen.insert(i);
  CHECK(seen.size() == 23);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 22);

  Rng a(12), b2(12);
  CHECK(epoch_batches(40, 7, a) == epoch_batches(40, 7, b2));
}

TEST_CASE("build_training_batch with full batch size is a permutation") {
  std::vector<PatchSample> samples(8);
  for (size_t i = 0; i < samples.size(); ++i) {
    samples[i].patch = Tensor(1, 2, 2, double(i));
    samples[i].label = double(i) / 10;
  }
  Rng rng(13);
  auto b = build_training_batch(samples, 8, rng);
  REQUIRE(b.labels.size() == 8);
  std::multiset<double> got(b.labels.begin(), b.labels.end());
  std::multiset<double> want;
  for (const auto& s : samples) want.insert(s.label);
  CHECK(got == want);

  Rng r2(14);
  auto small = build_training_batch(samples, 3, r2);
  CHECK(small.labels.size() == 3);
  CHECK(small.patches.size() == 3);
  CHECK_THROWS_AS(build_training_batch(samples, 0, r2), Error);
}

TEST_CASE("epoch label histogram matches the sample list") {
  std::vector<PatchSample> samples(30);
  Rng init(15);
  for (auto& s : samples) s.label = init.uniform_int(0, 3) / 4.0;
  Rng rng(16);
  std::map<double, int> want, got;
  for (const auto& s : samples) ++want[s.label];
  for (const auto& idx : epoch_batches(samples.size(), 7, rng)) {
    auto b = gather_batch(samples, idx);
    for (double l : b.labels) ++got[l];
  }
  CHECK(got == want);
}

TEST_CASE("manifest entries round-trip through JSON lines") {
  ManifestEntry normal;
  normal.id = "n0";
  normal.image = "images/n0.ppm";
  normal.identity = "id07";
  normal.kind = "normal";
  auto back = manifest_entry_from_json(manifest_entry_to_json(normal));
  CHECK(back.id == "n0");
  CHECK(back.identity == "id07");
  CHECK(!back.attack.has_value());

  ManifestEntry atk;
  atk.id = "a0";
  atk.image = "attacks/a0.ppm";
  atk.identity = "id07";
  atk.kind = "attack";
  atk.mask = "attacks/a0_mask.pgm";
  AttackMeta meta;
  meta.mode = "dodging";
  meta.mask_kind = "hat";
  meta.original_id = "n0";
  meta.alpha = 1e-3;
  meta.beta = 8e-5;
  meta.steps = 300;
  meta.seed = 42;
  meta.defense_strategy = "random";
  meta.defense_hash = "00ff00ff00ff00ff";
  meta.initial_similarity = 0.99;
  meta.final_similarity = -0.05;
  atk.attack = meta;
  auto back2 = manifest_entry_from_json(manifest_entry_to_json(atk));
  REQUIRE(back2.attack.has_value());
  CHECK(back2.attack->mode == "dodging");
  CHECK(back2.attack->seed == 42);
  CHECK(back2.attack->defense_hash == "00ff00ff00ff00ff");
  CHECK(back2.attack->final_similarity == doctest::Approx(-0.05));
  CHECK(back2.mask == "attacks/a0_mask.pgm");
}

TEST_CASE("manifest rejects inconsistent records") {
  ManifestEntry bad;
  bad.id = "x";
  bad.image = "x.ppm";
  bad.kind = "attack";  // no metadata
  CHECK_THROWS_AS(manifest_entry_to_json(bad), Error);
  bad.kind = "holiday";
  CHECK_THROWS_AS(manifest_entry_to_json(bad), Error);

  CHECK_THROWS_AS(manifest_entry_from_json("{not json"), Error);
  CHECK_THROWS_AS(manifest_entry_from_json(R"({"id":"x"})"), Error);
  CHECK_THROWS_AS(
      manifest_entry_from_json(
          R"({"id":"x","image":"x.ppm","identity":"a","kind":"attack","mask":"","attack":null})"),
      Error);
}

TEST_CASE("manifest files round-trip and resolve relative paths") {
  const std::string dir = "/tmp/rpd_manifest_test";
  std::filesystem::create_directories(dir + "/images");
  ImageU8 img(3, 16, 16, 77);
  write_ppm(dir + "/images/n0.ppm", img);
  RegionMask mask(16, 16);
  mask.at(2, 2) = 1;
  write_mask_pgm(dir + "/images/n0_mask.pgm", mask);

  ManifestEntry e;
  e.id = "n0";
  e.image = "images/n0.ppm";
  e.identity = "id00";
  e.kind = "attack";
  e.mask = "images/n0_mask.pgm";
  AttackMeta meta;
  meta.mode = "impersonation";
  meta.mask_kind = "glasses";
  meta.original_id = "n0";
  meta.target_id = "n1";
  e.attack = meta;
  save_manifest(dir + "/manifest.jsonl", {e});

  auto m = load_manifest(dir + "/manifest.jsonl");
  REQUIRE(m.entries.size() == 1);
  auto t = load_entry_image(m, m.entries[0]);
  CHECK(t.h == 16);
  CHECK(t.v[0] == doctest::Approx(77.0 / 255));
  auto mk = load_entry_mask(m, m.entries[0]);
  CHECK(mk.count() == 1);

  CHECK_THROWS_AS(load_manifest(dir + "/missing.jsonl"), Error);
  std::filesystem::remove_all(dir);
}
