#include "rpd/embedding.hpp"

#include <algorithm>
#include <cmath>

#include "rpd/dataset.hpp"
#include "rpd/model_io.hpp"

namespace rpd {

std::vector<double> EmbeddingModel::embed(const Tensor& image) {
  require(trunk != nullptr, "embedding model: no weights loaded");
  require(image.c == 3 && image.h == input_size && image.w == input_size,
          "embed: image must be 3x" + std::to_string(input_size) + "x" +
              std::to_string(input_size));
  Tensor e = trunk->forward(image);
  require(int(e.size()) == embed_dim, "embed: unexpected embedding size");
  for (double v : e.v) require(std::isfinite(v), "embed: non-finite embedding");
  return e.v;
}

Tensor EmbeddingModel::embed_backward(const std::vector<double>& dembed) {
  require(int(dembed.size()) == embed_dim, "embed_backward: gradient size mismatch");
  Tensor dy(embed_dim, 1, 1);
  dy.v = dembed;
  return trunk->backward(dy);
}

uint64_t EmbeddingModel::weights_hash_value() {
  require(trunk != nullptr, "embedding model: no weights loaded");
  return weights_hash(*trunk);
}

double cosine_sim(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && !a.empty(), "cosine_sim: size mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  require(na > 0.0 && nb > 0.0, "cosine_sim: zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> cosine_sim_grad_a(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && !a.empty(), "cosine_sim_grad_a: size mismatch");
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na2 += a[i] * a[i];
    nb2 += b[i] * b[i];
  }
  require(na2 > 0.0 && nb2 > 0.0, "cosine_sim_grad_a: zero vector");
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  const double s = dot / (na * nb);
  std::vector<double> g(a.size());
  for (size_t i = 0; i < a.size(); ++i) g[i] = b[i] / (na * nb) - s * a[i] / na2;
  return g;
}

namespace {

struct View {
  int identity, view;
};

}  // namespace

EmbeddingModel train_toy_face_model(const ImageProvider& images, int n_identities,
                                    int views_per_identity, const FaceTrainConfig& cfg, Rng& rng,
                                    FaceTrainStats* stats) {
  require(n_identities >= 2, "train_toy_face_model: need at least 2 identities");
  require(views_per_identity >= 2, "train_toy_face_model: need at least 2 images per identity");
  require(cfg.holdout_per_identity >= 1 && cfg.holdout_per_identity < views_per_identity,
          "train_toy_face_model: holdout leaves no training views");

  // Holdout: the last holdout_per_identity views of every identity.
  std::vector<View> train, holdout;
  for (int id = 0; id < n_identities; ++id)
    for (int v = 0; v < views_per_identity; ++v) {
      if (v >= views_per_identity - cfg.holdout_per_identity)
        holdout.push_back({id, v});
      else
        train.push_back({id, v});
    }

  EmbeddingModel model;
  Rng init_rng = rng.child("face-init");
  model.trunk = make_embed_trunk(init_rng);
  Dense head(kEmbedDim, n_identities, init_rng);

  std::vector<Param*> params = collect_params(*model.trunk);
  head.collect(params);
  Sgd opt(params, {.lr = cfg.lr,
                   .momentum = cfg.momentum,
                   .lr_decay = cfg.lr_decay,
                   .decay_every = cfg.decay_every});

  FaceTrainStats local;
  FaceTrainStats& st = stats ? *stats : local;
  st = FaceTrainStats{};

  std::vector<double> best_params;
  Rng epoch_rng = rng.child("face-epochs");

  auto holdout_accuracy = [&]() {
    int correct = 0;
    for (const View& hv : holdout) {
      Tensor e = model.trunk->forward(images(hv.identity, hv.view));
      Tensor logits = head.forward(e);
      const int pred =
          int(std::max_element(logits.v.begin(), logits.v.end()) - logits.v.begin());
      if (pred == hv.identity) ++correct;
    }
    return double(correct) / double(holdout.size());
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.start_epoch(epoch);
    double epoch_loss = 0.0;
    size_t n_samples = 0;
    for (const auto& batch : epoch_batches(train.size(), cfg.batch_size, epoch_rng)) {
      zero_grads(params);
      for (int idx : batch) {
        const View& tv = train[size_t(idx)];
        Tensor e = model.trunk->forward(images(tv.identity, tv.view));
        Tensor logits = head.forward(e);
        auto q = softmax(logits.v);
        std::vector<double> p(q.size(), 0.0);
        p[size_t(tv.identity)] = 1.0;
        epoch_loss += cross_entropy(q, p);
        ++n_samples;
        Tensor dlogits(int(q.size()), 1, 1);
        const double inv = 1.0 / double(batch.size());
        for (size_t i = 0; i < q.size(); ++i) dlogits.v[i] = (q[i] - p[i]) * inv;
        model.trunk->backward(head.backward(dlogits));
      }
      opt.step();
    }
    st.epoch_loss.push_back(epoch_loss / double(n_samples));
    const double acc = holdout_accuracy();
    st.epoch_holdout_accuracy.push_back(acc);
    if (acc > st.best_holdout_accuracy || st.best_epoch < 0) {
      st.best_holdout_accuracy = acc;
      st.best_epoch = epoch;
      best_params = flatten_params(*model.trunk);
    }
  }

  load_flat_params(*model.trunk, best_params);
  st.converged = st.best_holdout_accuracy >= cfg.target_accuracy;
  if (!st.converged)
    fail("train_toy_face_model: did not converge: holdout accuracy " +
         std::to_string(st.best_holdout_accuracy) + " < " + std::to_string(cfg.target_accuracy) +
         " after " + std::to_string(cfg.epochs) + " epochs (best epoch " +
         std::to_string(st.best_epoch) + ")");
  return model;
}

void save_embedding_model(const std::string& path, EmbeddingModel& model) {
  require(model.trunk != nullptr, "save_embedding_model: no weights");
  ModelFile mf;
  mf.kind = "embedding";
  mf.header["arch"] = model.arch;
  mf.header["embed_dim"] = model.embed_dim;
  mf.header["input_size"] = model.input_size;
  mf.params = flatten_params(*model.trunk);
  mf.header["weights_hash"] = hash_hex(model.weights_hash_value());
  save_model_file(path, mf);
}

EmbeddingModel load_external_model(const std::string& path) {
  ModelFile mf = load_model_file(path);
  require(mf.kind == "embedding",
          path + ": model kind '" + mf.kind + "' is not an embedding model");
  EmbeddingModel model;
  try {
    model.arch = mf.header.at("arch").get<std::string>();
    model.embed_dim = mf.header.at("embed_dim").get<int>();
    model.input_size = mf.header.at("input_size").get<int>();
  } catch (const nlohmann::json::exception& ex) {
    fail(path + ": embedding header missing fields: " + std::string(ex.what()));
  }
  require(model.arch == "toy-cnn-v1",
          path + ": unknown embedding architecture '" + model.arch + "'");
  require(model.embed_dim == kEmbedDim && model.input_size == kInputSize,
          path + ": architecture dims do not match " + model.arch);
  Rng dummy(0);
  model.trunk = make_embed_trunk(dummy);
  load_flat_params(*model.trunk, mf.params);
  return model;
}

}  // namespace rpd
