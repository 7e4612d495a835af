#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rpd/zoo.hpp"

namespace rpd {

// Face feature extractor. Embeddings are unnormalized; cosine handles scale.
struct EmbeddingModel {
  std::unique_ptr<Sequential> trunk;
  int embed_dim = kEmbedDim;
  int input_size = kInputSize;
  std::string arch = "toy-cnn-v1";

  std::vector<double> embed(const Tensor& image);
  // d(loss)/d(image) given d(loss)/d(embedding); call right after embed().
  Tensor embed_backward(const std::vector<double>& dembed);
  uint64_t weights_hash_value();
};

double cosine_sim(const std::vector<double>& a, const std::vector<double>& b);
// d cosine_sim(a, b) / d a.
std::vector<double> cosine_sim_grad_a(const std::vector<double>& a, const std::vector<double>& b);

struct FaceTrainConfig {
  int epochs = 24;
  int batch_size = 16;
  double lr = 0.02;
  double momentum = 0.9;
  double lr_decay = 0.5;
  int decay_every = 8;
  int holdout_per_identity = 1;
  double target_accuracy = 0.90;
};

struct FaceTrainStats {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_holdout_accuracy;
  double best_holdout_accuracy = 0.0;
  int best_epoch = -1;
  bool converged = false;
};

// Supplies the (identity, view) image; lets callers train from synthetic
// generators or manifests without materializing the whole dataset.
using ImageProvider = std::function<Tensor(int identity, int view)>;

// Trains a small identity classifier and keeps its penultimate activations
// as the embedding. Holds out holdout_per_identity views per identity for
// the accuracy gate; throws if the gate is missed (stats carry the metrics).
EmbeddingModel train_toy_face_model(const ImageProvider& images, int n_identities,
                                    int views_per_identity, const FaceTrainConfig& cfg, Rng& rng,
                                    FaceTrainStats* stats = nullptr);

void save_embedding_model(const std::string& path, EmbeddingModel& model);
EmbeddingModel load_external_model(const std::string& path);

}  // namespace rpd
