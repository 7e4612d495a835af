#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rpd/attack.hpp"
#include "rpd/synth.hpp"
#include "rpd/zoo.hpp"

using namespace rpd;

TEST_CASE("mask and mode names round-trip") {
  for (auto k : {MaskKind::Hat, MaskKind::Glasses, MaskKind::RandomPolygon})
    CHECK(mask_kind_from_name(mask_kind_name(k)) == k);
  CHECK(mask_kind_name(MaskKind::RandomPolygon) == "random");
  CHECK_THROWS_AS(mask_kind_from_name("beard"), Error);
  for (auto m : {AttackMode::Dodging, AttackMode::Impersonation})
    CHECK(attack_mode_from_name(attack_mode_name(m)) == m);
  CHECK_THROWS_AS(attack_mode_from_name("evade"), Error);
}

TEST_CASE("make_mask produces the canonical geometries") {
  Rng rng(1);
  MaskSpec hat = make_mask(MaskKind::Hat, 224, rng);
  CHECK(hat.pattern_width == 391);
  CHECK(hat.pattern_height == 221);
  CHECK(hat.support.count() == 160 * 64);

  MaskSpec gl = make_mask(MaskKind::Glasses, 224, rng);
  CHECK(gl.pattern_width == 300);
  CHECK(gl.pattern_height == 100);
  CHECK(gl.support.count() == 144 * 44);

  // The bands do not overlap: hat sits above the glasses.
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x) {
      const bool both = hat.support.at(y, x) != 0 && gl.support.at(y, x) != 0;
      CHECK_FALSE(both);
    }

  CHECK_THROWS_AS(make_mask(MaskKind::Hat, 112, rng), Error);
}

TEST_CASE("random polygon masks are deterministic with bounded area") {
  for (uint64_t seed = 0; seed < 8; ++seed) {
    Rng a(seed), b(seed);
    MaskSpec ma = make_mask(MaskKind::RandomPolygon, 224, a);
    MaskSpec mb = make_mask(MaskKind::RandomPolygon, 224, b);
    CHECK(ma.support.v == mb.support.v);
    CHECK(ma.pattern_width == 224);
    CHECK(ma.pattern_height == 224);
    const long long area = ma.support.count();
    CHECK(area >= 224 * 224 * 2 / 100);
    CHECK(area <= 224 * 224 * 20 / 100);
  }
}

TEST_CASE("project_pattern respects support and the identity warp") {
  Rng rng(2);
  MaskSpec hat = make_mask(MaskKind::Hat, 224, rng);
  Tensor flat(3, hat.pattern_height, hat.pattern_width, 0.37);
  Tensor overlay = project_pattern(flat, hat, 224);
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x)
      for (int c = 0; c < 3; ++c) {
        if (hat.support.at(y, x))
          CHECK(overlay.at(c, y, x) == doctest::Approx(0.37).epsilon(1e-12));
        else
          CHECK(overlay.at(c, y, x) == 0.0);
      }

  MaskSpec poly = make_mask(MaskKind::RandomPolygon, 224, rng);
  Tensor pat(3, 224, 224);
  Rng prng(3);
  for (double& v : pat.v) v = prng.uniform(0, 1);
  Tensor po = project_pattern(pat, poly, 224);
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x)
      for (int c = 0; c < 3; ++c) {
        if (poly.support.at(y, x))
          CHECK(po.at(c, y, x) == doctest::Approx(pat.at(c, y, x)).epsilon(1e-12));
        else
          CHECK(po.at(c, y, x) == 0.0);
      }

  Tensor wrong(3, 10, 10, 0.5);
  CHECK_THROWS_AS(project_pattern(wrong, hat, 224), Error);
}

TEST_CASE("project_pattern gradient matches finite differences") {
  // Small hand-built band: 8x8 pattern stretched onto a 16x10 region.
  MaskSpec m;
  m.kind = MaskKind::Hat;
  m.pattern_width = 8;
  m.pattern_height = 8;
  m.support.width = 24;
  m.support.height = 24;
  m.support.v.assign(24 * 24, 0);
  for (int y = 4; y < 14; ++y)
    for (int x = 5; x < 21; ++x) m.support.at(y, x) = 1;
  const double sx = 8.0 / 16.0, sy = 8.0 / 10.0;
  m.affine = {sx, 0.0, (0.5 - 5) * sx - 0.5, 0.0, sy, (0.5 - 4) * sy - 0.5};

  Tensor pat(3, 8, 8);
  Rng rng(4);
  for (double& v : pat.v) v = rng.uniform(0.1, 0.9);
  Tensor r(3, 24, 24);
  for (double& v : r.v) v = rng.uniform(-1, 1);

  auto scalar = [&](const Tensor& p) {
    Tensor o = project_pattern(p, m, 24);
    double s = 0.0;
    for (size_t i = 0; i < o.size(); ++i) s += r.v[i] * o.v[i];
    return s;
  };
  Tensor g = project_pattern_backward(r, m);
  const double h = 1e-6;
  for (size_t i = 0; i < pat.size(); i += 17) {
    Tensor p = pat, q = pat;
    p.v[i] += h;
    q.v[i] -= h;
    const double fd = (scalar(p) - scalar(q)) / (2 * h);
    CHECK(g.v[i] == doctest::Approx(fd).epsilon(1e-4));
  }
}

TEST_CASE("composite overlays exactly on support") {
  Tensor orig(3, 6, 6);
  Rng rng(5);
  for (double& v : orig.v) v = rng.uniform(0, 1);
  RegionMask sup;
  sup.width = 6;
  sup.height = 6;
  sup.v.assign(36, 0);

  Tensor overlay(3, 6, 6, 0.9);
  Tensor out = composite(orig, overlay, sup);  // empty support
  CHECK(out.v == orig.v);

  for (int y = 1; y < 4; ++y)
    for (int x = 2; x < 5; ++x) sup.at(y, x) = 1;
  out = composite(orig, overlay, sup);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        if (sup.at(y, x))
          CHECK(out.at(c, y, x) == 0.9);
        else
          CHECK(out.at(c, y, x) == orig.at(c, y, x));  // bit-identical
      }

  out = composite(orig, orig, sup);  // overlay equal to the original
  CHECK(out.v == orig.v);

  Tensor bad(3, 5, 6, 0.1);
  CHECK_THROWS_AS(composite(orig, bad, sup), Error);
}

TEST_CASE("pattern_tv_loss analytic cases and brute-force oracle") {
  Tensor flat(3, 7, 9, 0.42);
  CHECK(pattern_tv_loss(flat) == 0.0);

  Tensor zig(1, 1, 4);
  zig.v = {0, 1, 0, 1};
  CHECK(pattern_tv_loss(zig) == doctest::Approx(1.0).epsilon(1e-12));

  Tensor rnd(3, 5, 4);
  Rng rng(6);
  for (double& v : rnd.v) v = rng.uniform(0, 1);
  double sum = 0.0;
  long long n = 0;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x + 1 < 4; ++x) {
        sum += std::abs(rnd.at(c, y, x + 1) - rnd.at(c, y, x));
        ++n;
      }
    for (int y = 0; y + 1 < 5; ++y)
      for (int x = 0; x < 4; ++x) {
        sum += std::abs(rnd.at(c, y + 1, x) - rnd.at(c, y, x));
        ++n;
      }
  }
  CHECK(pattern_tv_loss(rnd) == doctest::Approx(sum / double(n)).epsilon(1e-9));
}

TEST_CASE("sim_loss is the mode-signed cosine of embeddings") {
  Rng rng(7);
  EmbeddingModel face;
  face.trunk = make_embed_trunk(rng);
  Tensor a = synth_face(31, 0, 0), b = synth_face(31, 4, 0);

  CHECK(sim_loss(AttackMode::Dodging, a, a, nullptr, face) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sim_loss(AttackMode::Impersonation, b, a, &b, face) ==
        doctest::Approx(-1.0).epsilon(1e-9));

  const double composed = cosine_sim(face.embed(a), face.embed(b));
  CHECK(sim_loss(AttackMode::Dodging, a, b, nullptr, face) ==
        doctest::Approx(composed).epsilon(1e-9));
  CHECK(sim_loss(AttackMode::Impersonation, a, b, &b, face) ==
        doctest::Approx(-composed).epsilon(1e-9));

  CHECK_THROWS_AS(sim_loss(AttackMode::Impersonation, a, b, nullptr, face), Error);
}

TEST_CASE("cls_loss follows the flipped cross entropy") {
  CHECK(cls_loss({{0.5, 0.5}}, {{0.0, 1.0}}) == doctest::Approx(0.6931471805599453).epsilon(1e-6));

  // A perfectly fooled detector drives the loss to zero from above.
  const double tiny = cls_loss({{1.0 - 1e-9, 1e-9}}, {{0.0, 1.0}});
  CHECK(tiny > 0.0);
  CHECK(tiny < 1e-8);

  std::vector<std::array<double, 2>> q = {{0.3, 0.7}, {0.8, 0.2}};
  std::vector<std::array<double, 2>> p = {{1.0, 0.0}, {0.25, 0.75}};
  const double direct = -0.5 * (1.0 * std::log(0.7) + 0.0 * std::log(0.3) +
                                0.25 * std::log(0.2) + 0.75 * std::log(0.8));
  CHECK(cls_loss(q, p) == doctest::Approx(direct).epsilon(1e-9));

  CHECK_THROWS_AS(cls_loss({{0.5, 0.5}}, {}), Error);
  CHECK_THROWS_AS(cls_loss({}, {}), Error);
}

TEST_CASE("combine_loss arithmetic") {
  CHECK(combine_loss(0.3, 0.7, 10.0, 1e-3, 1e-4) == doctest::Approx(0.3017).epsilon(1e-9));
  CHECK(combine_loss(0.3, 0.7, 10.0, 0.0, 0.0) == 0.3);  // exact
}

TEST_CASE("total_loss reduces to sim_loss without a defense") {
  Rng rng(8);
  EmbeddingModel face;
  face.trunk = make_embed_trunk(rng);
  MaskSpec hat = make_mask(MaskKind::Hat, 224, rng);
  Tensor orig = synth_face(32, 0, 0);
  Tensor pat(3, hat.pattern_height, hat.pattern_width, 0.5);
  Tensor attacked = composite(orig, project_pattern(pat, hat, 224), hat.support);

  AttackSpec spec;
  spec.mode = AttackMode::Dodging;
  spec.mask = hat;
  spec.alpha = 0.0;
  spec.beta = 0.0;
  LossPoint lp = total_loss(spec, pat, attacked, orig, nullptr, face, nullptr);
  CHECK(lp.total == lp.sim);  // exact equality with alpha = beta = 0
  CHECK(lp.cls == 0.0);
  CHECK(lp.sim == doctest::Approx(sim_loss(AttackMode::Dodging, attacked, orig, nullptr, face))
                      .epsilon(1e-12));

  spec.alpha = 0.1;
  AttackDefense def;
  DetectorModel dm;
  dm.backbone_id = "small-mobile";
  Rng drng(9);
  dm.net = make_backbone(dm.backbone_id, drng);
  def.detector = &dm;
  spec.defense = def;
  CHECK_THROWS_AS(total_loss(spec, pat, attacked, orig, nullptr, face, nullptr), Error);
}

TEST_CASE("attack gradient matches finite differences on a toy band") {
  // 8x8 pattern placed on a 224 image so every loss term participates.
  Rng rng(10);
  EmbeddingModel face;
  face.trunk = make_embed_trunk(rng);

  MaskSpec m;
  m.kind = MaskKind::Hat;
  m.pattern_width = 8;
  m.pattern_height = 8;
  m.support.width = 224;
  m.support.height = 224;
  m.support.v.assign(224 * 224, 0);
  for (int y = 100; y < 120; ++y)
    for (int x = 90; x < 130; ++x) m.support.at(y, x) = 1;
  const double sx = 8.0 / 40.0, sy = 8.0 / 20.0;
  m.affine = {sx, 0.0, (0.5 - 90) * sx - 0.5, 0.0, sy, (0.5 - 100) * sy - 0.5};

  DetectorModel dm;
  dm.backbone_id = "small-mobile";
  Rng drng(11);
  dm.net = make_backbone(dm.backbone_id, drng);
  auto params = collect_params(*dm.net);
  Rng wrng(12);
  for (Param* p : params)
    for (double& w : p->v) w += wrng.uniform(-0.01, 0.01);

  AttackSpec spec;
  spec.mode = AttackMode::Dodging;
  spec.mask = m;
  spec.alpha = 0.5;
  spec.beta = 0.01;
  AttackDefense def;
  def.detector = &dm;
  def.strategy.kind = StrategyKind::EvenPatch;
  spec.defense = def;

  Tensor orig = synth_face(33, 2, 0);
  auto e_ref = face.embed(orig);
  Tensor pat(3, 8, 8);
  Rng prng(13);
  for (double& v : pat.v) v = prng.uniform(0.2, 0.8);

  Rng gr(14);
  Tensor grad;
  attack_loss_and_grad(spec, pat, orig, e_ref, face, gr, &grad);

  const double h = 1e-5;
  for (size_t i = 3; i < pat.size(); i += 31) {
    Tensor p = pat, q = pat;
    p.v[i] += h;
    q.v[i] -= h;
    Rng r1(14), r2(14);
    const double fp = attack_loss_and_grad(spec, p, orig, e_ref, face, r1, nullptr).total;
    const double fm = attack_loss_and_grad(spec, q, orig, e_ref, face, r2, nullptr).total;
    const double fd = (fp - fm) / (2 * h);
    const double rel = std::abs(grad.v[i] - fd) / std::max(1e-6, std::abs(fd));
    CHECK(rel < 1e-3);
  }
}

namespace {

EmbeddingModel trained_face() {
  auto provider = [](int identity, int view) { return synth_face(21, identity, view); };
  FaceTrainConfig cfg;
  cfg.epochs = 12;
  cfg.batch_size = 8;
  cfg.target_accuracy = 0.8;
  Rng rng(31);
  return train_toy_face_model(provider, 5, 6, cfg, rng);
}

}  // namespace

TEST_CASE("generate_attack end to end") {
  EmbeddingModel face = trained_face();
  Tensor orig = synth_face(21, 1, 5);
  Tensor target = synth_face(21, 3, 5);

  AttackSpec spec;
  spec.mode = AttackMode::Dodging;
  Rng mrng(15);
  spec.mask = make_mask(MaskKind::Hat, 224, mrng);
  spec.steps = 40;

  SUBCASE("steps=0 composites the initial pattern") {
    spec.steps = 0;
    Rng r1(16), r2(16);
    AttackResult res = generate_attack(orig, nullptr, face, spec, r1);
    CHECK(res.loss_trace.empty());
    CHECK(res.best_step == -1);
    Tensor expect_pat(3, spec.mask.pattern_height, spec.mask.pattern_width);
    for (double& v : expect_pat.v) v = 0.5 + r2.uniform(-0.02, 0.02);
    Tensor expected =
        composite(orig, project_pattern(expect_pat, spec.mask, 224), spec.mask.support);
    CHECK(res.attacked_image.v == expected.v);
  }

  SUBCASE("dodging drives similarity down, deterministically, support-exactly") {
    Rng r1(17), r2(17);
    AttackResult a = generate_attack(orig, nullptr, face, spec, r1);
    AttackResult b = generate_attack(orig, nullptr, face, spec, r2);
    CHECK(a.attacked_image.v == b.attacked_image.v);  // bit-for-bit determinism
    CHECK(a.loss_trace.size() == 40);
    CHECK(a.initial_similarity <= 1.0 + 1e-9);
    CHECK(a.final_similarity < a.initial_similarity);

    double best = a.loss_trace.front().total;
    for (const auto& lp : a.loss_trace) best = std::min(best, lp.total);
    CHECK(a.loss_trace[size_t(a.best_step)].total == best);

    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 224; ++y)
        for (int x = 0; x < 224; ++x)
          if (!a.support.at(y, x)) CHECK(a.attacked_image.at(c, y, x) == orig.at(c, y, x));
    for (double v : a.pattern.v) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }

  SUBCASE("impersonation raises similarity to the target") {
    spec.mode = AttackMode::Impersonation;
    Rng orng(18);
    spec.mask = make_mask(MaskKind::Glasses, 224, orng);
    Rng r(19);
    AttackResult res = generate_attack(orig, &target, face, spec, r);
    CHECK(res.final_similarity > res.initial_similarity);
    CHECK_THROWS_AS(generate_attack(orig, nullptr, face, spec, r), Error);
  }

  SUBCASE("spec validation enforces the alpha-defense pairing") {
    AttackSpec bad = spec;
    bad.alpha = 0.01;  // alpha set but no defense
    Rng r(20);
    CHECK_THROWS_AS(generate_attack(orig, nullptr, face, bad, r), Error);

    DetectorModel dm;
    dm.backbone_id = "small-mobile";
    Rng drng(21);
    dm.net = make_backbone(dm.backbone_id, drng);
    AttackDefense def;
    def.detector = &dm;
    bad = spec;
    bad.alpha = 0.0;
    bad.defense = def;  // defense set but alpha zero
    CHECK_THROWS_AS(generate_attack(orig, nullptr, face, bad, r), Error);
  }

  SUBCASE("adaptive attack against a random-split defense consumes the rng deterministically") {
    DetectorModel dm;
    dm.backbone_id = "small-mobile";
    Rng drng(22);
    dm.net = make_backbone(dm.backbone_id, drng);
    auto params = collect_params(*dm.net);
    Rng wrng(23);
    for (Param* p : params)
      for (double& w : p->v) w += wrng.uniform(-0.01, 0.01);

    AttackSpec adaptive = spec;
    adaptive.steps = 6;
    adaptive.alpha = 1e-3;
    AttackDefense def;
    def.detector = &dm;
    def.strategy.kind = StrategyKind::RandomPatch;
    adaptive.defense = def;
    Rng r1(24), r2(24);
    AttackResult a = generate_attack(orig, nullptr, face, adaptive, r1);
    AttackResult b = generate_attack(orig, nullptr, face, adaptive, r2);
    CHECK(a.attacked_image.v == b.attacked_image.v);
    CHECK(a.loss_trace.size() == 6);
    for (const auto& lp : a.loss_trace) CHECK(lp.cls > 0.0);
  }
}
