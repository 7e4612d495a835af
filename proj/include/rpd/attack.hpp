#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "rpd/detector.hpp"
#include "rpd/embedding.hpp"
#include "rpd/image.hpp"
#include "rpd/tensor.hpp"

namespace rpd {

enum class MaskKind { Hat, Glasses, RandomPolygon };

std::string mask_kind_name(MaskKind k);
MaskKind mask_kind_from_name(const std::string& name);

// Physical placement of an attack pattern: the printable pattern's dimensions,
// the image-to-pattern sampling transform, and the image-space footprint.
struct MaskSpec {
  MaskKind kind = MaskKind::Hat;
  int pattern_width = 0, pattern_height = 0;
  std::array<double, 6> affine{};  // (x, y) -> (u, v) = (a0 x + a1 y + a2, a3 x + a4 y + a5)
  RegionMask support;
};

// Hat and glasses use fixed bands; RandomPolygon stacks 2-5 random shapes
// covering 2-20% of the image and draws the pattern in image coordinates.
MaskSpec make_mask(MaskKind kind, int image_size, Rng& rng);

// Warps the pattern into image space; zero outside the support.
Tensor project_pattern(const Tensor& pattern, const MaskSpec& mask, int image_size);
// Adjoint of project_pattern; returns d(loss)/d(pattern).
Tensor project_pattern_backward(const Tensor& doverlay, const MaskSpec& mask);

// Overlay on support pixels, original elsewhere.
Tensor composite(const Tensor& original, const Tensor& overlay, const RegionMask& support);

double pattern_tv_loss(const Tensor& pattern);

enum class AttackMode { Dodging, Impersonation };

std::string attack_mode_name(AttackMode m);
AttackMode attack_mode_from_name(const std::string& name);

// Mode-signed cosine similarity of embeddings: +Sim(attacked, original) for
// dodging, -Sim(attacked, target) for impersonation.
double sim_loss(AttackMode mode, const Tensor& attacked, const Tensor& original,
                const Tensor* target, EmbeddingModel& face);

// -(1/N) sum_i (p0_i log q1_i + p1_i log q0_i): drives attacked patches toward
// the detector's "normal" side.
double cls_loss(const std::vector<std::array<double, 2>>& patch_probs,
                const std::vector<std::array<double, 2>>& patch_labels);

struct AttackDefense {
  const DetectorModel* detector = nullptr;
  DefenseStrategy strategy;
};

struct AttackSpec {
  AttackMode mode = AttackMode::Dodging;
  MaskSpec mask;
  double alpha = 0.0;
  double beta = 0.0;
  int steps = 300;
  double step_size = 1.0 / 255.0;
  double momentum = 0.9;
  std::optional<AttackDefense> defense;  // present iff alpha > 0
};

void validate_attack_spec(const AttackSpec& spec);

struct LossPoint {
  double total = 0.0, sim = 0.0, cls = 0.0, tv = 0.0;
};

double combine_loss(double sim, double cls, double tv, double alpha, double beta);

// Detector outputs and overlap labels for the current composite.
struct DetectorState {
  std::vector<std::array<double, 2>> probs;
  std::vector<std::array<double, 2>> labels;
};

LossPoint total_loss(const AttackSpec& spec, const Tensor& pattern, const Tensor& attacked,
                     const Tensor& original, const Tensor* target, EmbeddingModel& face,
                     const DetectorState* det);

// One optimization-step evaluation: projects and composites `pattern`, applies
// the defense split (rng drives random grids), and returns the loss terms.
// When dpattern is non-null it receives d(total)/d(pattern). e_ref is the
// mode's reference embedding (original for dodging, target for impersonation).
LossPoint attack_loss_and_grad(const AttackSpec& spec, const Tensor& pattern,
                               const Tensor& original, const std::vector<double>& e_ref,
                               EmbeddingModel& face, Rng& rng, Tensor* dpattern);

struct AttackResult {
  Tensor attacked_image;
  Tensor pattern;
  RegionMask support;
  std::vector<LossPoint> loss_trace;
  double initial_similarity = 0.0;  // dodging: Sim(init composite, original);
                                    // impersonation: Sim(original, target)
  double final_similarity = 0.0;    // cosine against the mode's reference
  int best_step = -1;
};

AttackResult generate_attack(const Tensor& original, const Tensor* target,
                             EmbeddingModel& face, const AttackSpec& spec, Rng& rng);

}  // namespace rpd
