#include "rpd/synth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "rpd/common.hpp"
#include "rpd/dataset.hpp"
#include "rpd/image.hpp"

namespace rpd {

namespace {

struct Rgb {
  double r, g, b;
};

// Identity-level appearance parameters, in 224-scale coordinates.
struct FaceParams {
  Rgb bg_top, bg_bottom, skin, hair, iris, mouth, brow;
  double cx, cy, ax, ay;        // face ellipse
  double hairline;              // y above which the face is hair
  double eye_dx, eye_y, eye_r;  // eye geometry
  double brow_w, brow_h, brow_dy;
  double nose_w, nose_len;
  double mouth_y, mouth_w, mouth_h;
  double tex_amp, tex_fx, tex_fy, tex_phase;
};

Rgb random_color(Rng& rng, double lo, double hi) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

FaceParams identity_params(uint64_t seed, int identity) {
  Rng rng(derive_seed(seed, "synth-identity", uint64_t(identity)));
  FaceParams p;
  p.bg_top = random_color(rng, 0.10, 0.45);
  p.bg_bottom = random_color(rng, 0.10, 0.45);
  const double tone = rng.uniform(0.55, 0.85);
  p.skin = {tone, tone * rng.uniform(0.78, 0.90), tone * rng.uniform(0.60, 0.78)};
  p.hair = random_color(rng, 0.05, 0.35);
  p.iris = random_color(rng, 0.05, 0.45);
  p.mouth = {rng.uniform(0.45, 0.75), rng.uniform(0.15, 0.35), rng.uniform(0.15, 0.35)};
  p.brow = {p.hair.r * 0.8, p.hair.g * 0.8, p.hair.b * 0.8};
  p.cx = 112 + rng.uniform(-6, 6);
  p.cy = 118 + rng.uniform(-6, 6);
  p.ax = rng.uniform(52, 66);
  p.ay = rng.uniform(68, 84);
  p.hairline = p.cy - p.ay * rng.uniform(0.55, 0.75);
  p.eye_dx = rng.uniform(24, 34);
  p.eye_y = 104 + rng.uniform(-4, 4);
  p.eye_r = rng.uniform(4.5, 7.0);
  p.brow_w = rng.uniform(16, 24);
  p.brow_h = rng.uniform(2.5, 4.5);
  p.brow_dy = rng.uniform(11, 16);
  p.nose_w = rng.uniform(3, 6);
  p.nose_len = rng.uniform(14, 22);
  p.mouth_y = 150 + rng.uniform(-6, 6);
  p.mouth_w = rng.uniform(13, 20);  // half-width
  p.mouth_h = rng.uniform(3.5, 6.0);
  p.tex_amp = rng.uniform(0.010, 0.030);
  p.tex_fx = rng.uniform(0.05, 0.35);
  p.tex_fy = rng.uniform(0.05, 0.35);
  p.tex_phase = rng.uniform(0.0, 2.0 * M_PI);
  return p;
}

Rgb shade(const FaceParams& p, double x, double y) {
  // y gradient background
  const double t = y / 224.0;
  Rgb c{p.bg_top.r + (p.bg_bottom.r - p.bg_top.r) * t,
        p.bg_top.g + (p.bg_bottom.g - p.bg_top.g) * t,
        p.bg_top.b + (p.bg_bottom.b - p.bg_top.b) * t};

  const double ex = (x - p.cx) / p.ax, ey = (y - p.cy) / p.ay;
  const double d = ex * ex + ey * ey;
  if (d <= 1.0) {
    c = p.skin;
    if (y < p.hairline) c = p.hair;

    // brows
    for (int s = -1; s <= 1; s += 2) {
      const double bx = p.cx + s * p.eye_dx;
      if (std::abs(x - bx) <= p.brow_w / 2 && std::abs(y - (p.eye_y - p.brow_dy)) <= p.brow_h)
        c = p.brow;
    }
    // eyes: sclera disc, iris, pupil
    for (int s = -1; s <= 1; s += 2) {
      const double exc = p.cx + s * p.eye_dx;
      const double dx = x - exc, dy = y - p.eye_y;
      const double r2 = dx * dx + dy * dy;
      if (r2 <= p.eye_r * p.eye_r) c = {0.92, 0.92, 0.90};
      if (r2 <= p.eye_r * p.eye_r * 0.45) c = p.iris;
      if (r2 <= p.eye_r * p.eye_r * 0.12) c = {0.03, 0.03, 0.03};
    }
    // nose
    if (std::abs(x - p.cx) <= p.nose_w / 2 && y >= p.cy - 4 && y <= p.cy - 4 + p.nose_len)
      c = {p.skin.r * 0.85, p.skin.g * 0.85, p.skin.b * 0.85};
    // mouth
    const double mx = (x - p.cx) / p.mouth_w, my = (y - p.mouth_y) / p.mouth_h;
    if (mx * mx + my * my <= 1.0) c = p.mouth;
  } else if (d <= 1.18 && y < p.hairline + 10) {
    c = p.hair;  // hair fringe outside the face ellipse
  }

  const double tex = std::sin(p.tex_fx * x + p.tex_phase) * std::sin(p.tex_fy * y);
  c.r += p.tex_amp * tex;
  c.g += p.tex_amp * tex;
  c.b += p.tex_amp * tex;
  return c;
}

}  // namespace

Tensor synth_face(uint64_t seed, int identity, int view, int size) {
  require(size >= 32, "synth_face: size too small");
  const FaceParams p = identity_params(seed, identity);

  Rng vrng(derive_seed(seed, "synth-view", uint64_t(identity) * 10007ull + uint64_t(view)));
  const double brightness = vrng.uniform(0.90, 1.10);
  const Rgb gain{vrng.uniform(0.97, 1.03), vrng.uniform(0.97, 1.03), vrng.uniform(0.97, 1.03)};
  const double tx = vrng.uniform(-3, 3), ty = vrng.uniform(-3, 3);
  const double noise_sigma = 0.015;

  const double scale = 224.0 / size;
  Tensor img(3, size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const Rgb c = shade(p, x * scale - tx, y * scale - ty);
      img.at(0, y, x) = c.r * brightness * gain.r + vrng.normal(0.0, noise_sigma);
      img.at(1, y, x) = c.g * brightness * gain.g + vrng.normal(0.0, noise_sigma);
      img.at(2, y, x) = c.b * brightness * gain.b + vrng.normal(0.0, noise_sigma);
    }
  }
  img.clamp01();
  return img;
}

std::string synth_dataset(const std::string& dir, const SynthConfig& cfg, uint64_t seed) {
  require(cfg.n_identities >= 1 && cfg.views_per_identity >= 1, "synth_dataset: empty config");
  std::filesystem::create_directories(std::filesystem::path(dir) / "images");
  std::vector<ManifestEntry> entries;
  char idbuf[32], imgbuf[64];
  for (int id = 0; id < cfg.n_identities; ++id) {
    std::snprintf(idbuf, sizeof(idbuf), "id%03d", id);
    for (int v = 0; v < cfg.views_per_identity; ++v) {
      std::snprintf(imgbuf, sizeof(imgbuf), "id%03d-v%02d", id, v);
      const std::string rel = std::string("images/") + imgbuf + ".ppm";
      write_ppm((std::filesystem::path(dir) / rel).string(),
                to_image_u8(synth_face(seed, id, v, cfg.size)));
      ManifestEntry e;
      e.id = imgbuf;
      e.image = rel;
      e.identity = idbuf;
      e.kind = "normal";
      entries.push_back(std::move(e));
    }
  }
  const std::string manifest = (std::filesystem::path(dir) / "manifest.jsonl").string();
  save_manifest(manifest, entries);
  return manifest;
}

}  // namespace rpd
