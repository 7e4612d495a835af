#include "rpd/attack.hpp"

#include <algorithm>
#include <cmath>

#include "rpd/dataset.hpp"
#include "rpd/geometry.hpp"
#include "rpd/kernels.hpp"

namespace rpd {

std::string mask_kind_name(MaskKind k) {
  switch (k) {
    case MaskKind::Hat: return "hat";
    case MaskKind::Glasses: return "glasses";
    case MaskKind::RandomPolygon: return "random";
  }
  fail("unknown mask kind");
}

MaskKind mask_kind_from_name(const std::string& name) {
  if (name == "hat") return MaskKind::Hat;
  if (name == "glasses") return MaskKind::Glasses;
  if (name == "random") return MaskKind::RandomPolygon;
  fail("unknown mask '" + name + "' (expected hat, glasses, or random)");
}

std::string attack_mode_name(AttackMode m) {
  switch (m) {
    case AttackMode::Dodging: return "dodging";
    case AttackMode::Impersonation: return "impersonation";
  }
  fail("unknown attack mode");
}

AttackMode attack_mode_from_name(const std::string& name) {
  if (name == "dodging") return AttackMode::Dodging;
  if (name == "impersonation") return AttackMode::Impersonation;
  fail("unknown mode '" + name + "' (expected dodging or impersonation)");
}

namespace {

// Image rect <- pattern mapping: u = (x + 0.5 - rx0) * pw / rw - 0.5.
void band_affine(MaskSpec& m, int rx0, int ry0, int rw, int rh) {
  const double sx = double(m.pattern_width) / double(rw);
  const double sy = double(m.pattern_height) / double(rh);
  m.affine = {sx, 0.0, (0.5 - rx0) * sx - 0.5, 0.0, sy, (0.5 - ry0) * sy - 0.5};
}

void fill_rect_support(RegionMask& s, int x0, int y0, int x1, int y1) {
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) s.at(y, x) = 1;
}

void draw_polygon_support(RegionMask& s, Rng& rng) {
  const int W = s.width, H = s.height;
  const long long total = (long long)W * H;
  const long long lo = total * 2 / 100, hi = total * 20 / 100;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::fill(s.v.begin(), s.v.end(), uint8_t(0));
    const int n_shapes = rng.uniform_int(2, 5);
    for (int k = 0; k < n_shapes; ++k) {
      const int shape = rng.uniform_int(0, 2);
      if (shape == 0) {  // axis-aligned rectangle
        const int w = rng.uniform_int(20, 70), h = rng.uniform_int(20, 70);
        const int x0 = rng.uniform_int(0, W - w), y0 = rng.uniform_int(0, H - h);
        fill_rect_support(s, x0, y0, x0 + w, y0 + h);
      } else if (shape == 1) {  // circle
        const int r = rng.uniform_int(12, 36);
        const int cx = rng.uniform_int(r, W - 1 - r), cy = rng.uniform_int(r, H - 1 - r);
        for (int y = cy - r; y <= cy + r; ++y)
          for (int x = cx - r; x <= cx + r; ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) s.at(y, x) = 1;
      } else {  // triangle
        const int bw = rng.uniform_int(30, 80), bh = rng.uniform_int(30, 80);
        const int bx = rng.uniform_int(0, W - bw), by = rng.uniform_int(0, H - bh);
        double px[3], py[3];
        for (int i = 0; i < 3; ++i) {
          px[i] = bx + rng.uniform(0, bw);
          py[i] = by + rng.uniform(0, bh);
        }
        auto edge = [](double ax, double ay, double bx2, double by2, double cx2, double cy2) {
          return (bx2 - ax) * (cy2 - ay) - (by2 - ay) * (cx2 - ax);
        };
        for (int y = by; y < by + bh; ++y)
          for (int x = bx; x < bx + bw; ++x) {
            const double d0 = edge(px[0], py[0], px[1], py[1], x + 0.5, y + 0.5);
            const double d1 = edge(px[1], py[1], px[2], py[2], x + 0.5, y + 0.5);
            const double d2 = edge(px[2], py[2], px[0], py[0], x + 0.5, y + 0.5);
            const bool neg = d0 < 0 || d1 < 0 || d2 < 0, pos = d0 > 0 || d1 > 0 || d2 > 0;
            if (!(neg && pos)) s.at(y, x) = 1;
          }
      }
    }
    const long long area = s.count();
    if (area >= lo && area <= hi) return;
  }
  fail("could not draw a random polygon support within the area bounds");
}

}  // namespace

MaskSpec make_mask(MaskKind kind, int image_size, Rng& rng) {
  require(image_size == 224, "masks are defined for 224x224 images");
  MaskSpec m;
  m.kind = kind;
  m.support.width = image_size;
  m.support.height = image_size;
  m.support.v.assign(size_t(image_size) * size_t(image_size), 0);
  switch (kind) {
    case MaskKind::Hat:
      m.pattern_width = 391;
      m.pattern_height = 221;
      band_affine(m, 32, 12, 160, 64);
      fill_rect_support(m.support, 32, 12, 192, 76);
      break;
    case MaskKind::Glasses:
      m.pattern_width = 300;
      m.pattern_height = 100;
      band_affine(m, 40, 82, 144, 44);
      fill_rect_support(m.support, 40, 82, 184, 126);
      break;
    case MaskKind::RandomPolygon:
      m.pattern_width = image_size;
      m.pattern_height = image_size;
      m.affine = {1, 0, 0, 0, 1, 0};
      draw_polygon_support(m.support, rng);
      break;
  }
  require(m.support.any(), "mask support is empty");
  require(m.support.count() < (long long)image_size * image_size, "mask support covers the image");
  return m;
}

Tensor project_pattern(const Tensor& pattern, const MaskSpec& mask, int image_size) {
  require(pattern.c == 3 && pattern.h == mask.pattern_height && pattern.w == mask.pattern_width,
          "pattern dimensions do not match the mask");
  require(mask.support.width == image_size && mask.support.height == image_size,
          "mask support does not match the image size");
  Tensor overlay(3, image_size, image_size);
  kern::affine_warp_fwd(pattern.data(), 3, pattern.h, pattern.w, mask.affine.data(),
                        mask.support.v.data(), overlay.data(), image_size, image_size);
  return overlay;
}

Tensor project_pattern_backward(const Tensor& doverlay, const MaskSpec& mask) {
  require(doverlay.c == 3 && doverlay.h == mask.support.height && doverlay.w == mask.support.width,
          "overlay gradient does not match the mask");
  Tensor dpat(3, mask.pattern_height, mask.pattern_width);
  kern::affine_warp_bwd(doverlay.data(), 3, doverlay.h, doverlay.w, mask.affine.data(),
                        mask.support.v.data(), dpat.data(), dpat.h, dpat.w);
  return dpat;
}

Tensor composite(const Tensor& original, const Tensor& overlay, const RegionMask& support) {
  require(original.same_shape(overlay), "composite inputs differ in shape");
  require(original.h == support.height && original.w == support.width,
          "support does not match the image");
  Tensor out = original;
  for (int ci = 0; ci < out.c; ++ci)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        if (support.at(y, x)) out.at(ci, y, x) = overlay.at(ci, y, x);
  return out;
}

double pattern_tv_loss(const Tensor& pattern) {
  return kern::tv_loss(pattern.data(), pattern.c, pattern.h, pattern.w);
}

double sim_loss(AttackMode mode, const Tensor& attacked, const Tensor& original,
                const Tensor* target, EmbeddingModel& face) {
  if (mode == AttackMode::Impersonation)
    require(target != nullptr, "impersonation needs a target image");
  auto ea = face.embed(attacked);
  if (mode == AttackMode::Dodging) return cosine_sim(ea, face.embed(original));
  return -cosine_sim(ea, face.embed(*target));
}

double cls_loss(const std::vector<std::array<double, 2>>& patch_probs,
                const std::vector<std::array<double, 2>>& patch_labels) {
  require(patch_probs.size() == patch_labels.size(), "probs and labels differ in length");
  require(!patch_probs.empty(), "cls_loss needs at least one patch");
  double sum = 0.0;
  for (size_t i = 0; i < patch_probs.size(); ++i) {
    const auto& q = patch_probs[i];
    const auto& p = patch_labels[i];
    sum += p[0] * std::log(std::max(q[1], kLogFloor)) + p[1] * std::log(std::max(q[0], kLogFloor));
  }
  return -sum / double(patch_probs.size());
}

double combine_loss(double sim, double cls, double tv, double alpha, double beta) {
  return sim + alpha * cls + beta * tv;
}

void validate_attack_spec(const AttackSpec& spec) {
  require(spec.alpha >= 0.0 && spec.beta >= 0.0, "alpha and beta must be nonnegative");
  require((spec.alpha == 0.0) == !spec.defense.has_value(),
          "alpha must be zero exactly when no defense model is attacked");
  if (spec.defense) {
    require(spec.defense->detector != nullptr && spec.defense->detector->net != nullptr,
            "defense has no detector model");
    validate_strategy(spec.defense->strategy);
  }
  require(spec.steps >= 0, "steps must be nonnegative");
  require(spec.step_size > 0.0, "step_size must be positive");
  require(spec.momentum >= 0.0 && spec.momentum < 1.0, "momentum must lie in [0, 1)");
  require(spec.mask.pattern_width > 0 && spec.mask.pattern_height > 0, "mask has no pattern");
  require(spec.mask.support.any(), "mask support is empty");
}

namespace {

// Analyzed regions for one defense application against the current composite.
std::vector<Rect> defense_rects(const DefenseStrategy& strategy, int w, int h, Rng& rng) {
  if (strategy.kind == StrategyKind::Whole) return {Rect{0, 0, w, h}};
  PatchGrid g = strategy.kind == StrategyKind::EvenPatch ? even_split(w, h) : random_split(w, h, rng);
  auto rects = grid_rects(g);
  return std::vector<Rect>(rects.begin(), rects.end());
}

}  // namespace

LossPoint total_loss(const AttackSpec& spec, const Tensor& pattern, const Tensor& attacked,
                     const Tensor& original, const Tensor* target, EmbeddingModel& face,
                     const DetectorState* det) {
  LossPoint p;
  p.sim = sim_loss(spec.mode, attacked, original, target, face);
  if (spec.defense) {
    require(det != nullptr, "defense present but no detector state supplied");
    p.cls = cls_loss(det->probs, det->labels);
  }
  p.tv = pattern_tv_loss(pattern);
  p.total = combine_loss(p.sim, p.cls, p.tv, spec.alpha, spec.beta);
  return p;
}

LossPoint attack_loss_and_grad(const AttackSpec& spec, const Tensor& pattern,
                               const Tensor& original, const std::vector<double>& e_ref,
                               EmbeddingModel& face, Rng& rng, Tensor* dpattern) {
  Tensor overlay = project_pattern(pattern, spec.mask, original.w);
  Tensor attacked = composite(original, overlay, spec.mask.support);

  Tensor dattacked(attacked.c, attacked.h, attacked.w);
  LossPoint lp;
  lp.tv = pattern_tv_loss(pattern);

  // Similarity term and its gradient.
  auto e_att = face.embed(attacked);
  const double sign = spec.mode == AttackMode::Impersonation ? -1.0 : 1.0;
  lp.sim = sign * cosine_sim(e_att, e_ref);
  if (dpattern) {
    auto g = cosine_sim_grad_a(e_att, e_ref);
    for (double& v : g) v *= sign;
    Tensor ds = face.embed_backward(g);
    for (size_t i = 0; i < dattacked.size(); ++i) dattacked.v[i] += ds.v[i];
  }

  // Detector term: forward and backprop each analyzed region in place.
  if (spec.defense) {
    const auto& def = *spec.defense;
    std::vector<Rect> rects = defense_rects(def.strategy, attacked.w, attacked.h, rng);
    const double inv_n = 1.0 / double(rects.size());
    DetectorState det;
    for (const Rect& r : rects) {
      const double label = label_patch(r, spec.mask.support);
      const std::array<double, 2> p = {1.0 - label, label};
      Tensor patch = extract_and_resize(attacked, r, kPatchSize);
      auto qv = def.detector->forward_patch(patch);
      const std::array<double, 2> q = {qv[0], qv[1]};
      det.probs.push_back(q);
      det.labels.push_back(p);
      if (dpattern) {
        const double dz0 = spec.alpha * inv_n * (p[0] * q[0] - p[1] * q[1]);
        Tensor dpatch = def.detector->backward({dz0, -dz0});
        extract_and_resize_backward(dpatch, r, dattacked);
      }
    }
    lp.cls = cls_loss(det.probs, det.labels);
  }

  lp.total = combine_loss(lp.sim, lp.cls, lp.tv, spec.alpha, spec.beta);

  if (dpattern) {
    // Support-masked composite adjoint, then the warp adjoint, plus the TV
    // term taken directly on the pattern.
    for (int ci = 0; ci < dattacked.c; ++ci)
      for (int y = 0; y < dattacked.h; ++y)
        for (int x = 0; x < dattacked.w; ++x)
          if (!spec.mask.support.at(y, x)) dattacked.at(ci, y, x) = 0.0;
    *dpattern = project_pattern_backward(dattacked, spec.mask);
    kern::tv_grad(pattern.data(), pattern.c, pattern.h, pattern.w, spec.beta, dpattern->data());
  }
  return lp;
}

AttackResult generate_attack(const Tensor& original, const Tensor* target, EmbeddingModel& face,
                             const AttackSpec& spec, Rng& rng) {
  validate_attack_spec(spec);
  require(original.c == 3 && original.h == face.input_size && original.w == face.input_size,
          "original image must match the face model input");
  require(spec.mask.support.width == original.w && spec.mask.support.height == original.h,
          "mask was built for a different image size");
  if (spec.mode == AttackMode::Impersonation) {
    require(target != nullptr, "impersonation needs a target image");
    require(target->same_shape(original), "target image must match the original's shape");
  }

  AttackResult res;
  res.support = spec.mask.support;
  res.pattern = Tensor(3, spec.mask.pattern_height, spec.mask.pattern_width);
  for (double& v : res.pattern.v) v = 0.5 + rng.uniform(-0.02, 0.02);

  const std::vector<double> e_ref = spec.mode == AttackMode::Dodging
                                        ? face.embed(original)
                                        : face.embed(*target);
  if (spec.mode == AttackMode::Dodging) {
    Tensor init = composite(original, project_pattern(res.pattern, spec.mask, original.w),
                            spec.mask.support);
    res.initial_similarity = cosine_sim(face.embed(init), e_ref);
  } else {
    res.initial_similarity = cosine_sim(face.embed(original), e_ref);
  }

  Tensor velocity(res.pattern.c, res.pattern.h, res.pattern.w);
  Tensor best_pattern = res.pattern;
  double best_loss = 0.0;
  res.best_step = -1;

  for (int step = 0; step < spec.steps; ++step) {
    Tensor dpattern;
    LossPoint lp = attack_loss_and_grad(spec, res.pattern, original, e_ref, face, rng, &dpattern);
    res.loss_trace.push_back(lp);
    if (!std::isfinite(lp.total)) {
      std::string tail;
      const size_t n = res.loss_trace.size();
      for (size_t i = n > 5 ? n - 5 : 0; i < n; ++i) {
        tail += " ";
        tail += std::to_string(res.loss_trace[i].total);
      }
      fail("attack diverged at step " + std::to_string(step) + "; recent losses:" + tail);
    }
    if (res.best_step < 0 || lp.total < best_loss) {
      best_loss = lp.total;
      best_pattern = res.pattern;
      res.best_step = step;
    }

    // Momentum update on the normalized gradient, signed fixed-size step.
    double mean_abs = 0.0;
    for (double v : dpattern.v) mean_abs += std::abs(v);
    mean_abs /= double(dpattern.size());
    for (size_t i = 0; i < velocity.size(); ++i) {
      velocity.v[i] = spec.momentum * velocity.v[i] + dpattern.v[i] / (mean_abs + 1e-12);
      const double s = velocity.v[i] > 0.0 ? 1.0 : (velocity.v[i] < 0.0 ? -1.0 : 0.0);
      res.pattern.v[i] -= spec.step_size * s;
    }
    res.pattern.clamp01();
  }

  if (spec.steps > 0) res.pattern = best_pattern;
  res.attacked_image =
      composite(original, project_pattern(res.pattern, spec.mask, original.w), spec.mask.support);
  res.final_similarity = cosine_sim(face.embed(res.attacked_image), e_ref);
  return res;
}

}  // namespace rpd
