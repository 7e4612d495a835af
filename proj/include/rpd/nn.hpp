#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rpd/common.hpp"
#include "rpd/tensor.hpp"

namespace rpd {

struct Param {
  std::vector<double> v, g;
  Param() = default;
  explicit Param(size_t n) : v(n, 0.0), g(n, 0.0) {}
  size_t size() const { return v.size(); }
};

// Layers cache forward activations for the following backward call, so a
// model instance is used from one thread at a time; data parallelism lives
// inside the kernels.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x) = 0;
  // Returns dL/dx given dL/dy; accumulates parameter gradients.
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual void collect(std::vector<Param*>&) {}
};

class Conv2d final : public Layer {
 public:
  Conv2d(int ic, int oc, int k, int stride, int pad, Rng& rng, int groups = 1);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  void collect(std::vector<Param*>& ps) override;

 private:
  int ic_, oc_, k_, stride_, pad_, groups_;
  Param w_, b_;
  Tensor x_;
  int oh_ = 0, ow_ = 0;
};

class Dense final : public Layer {
 public:
  Dense(int n_in, int n_out, Rng& rng, bool zero_init = false);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  void collect(std::vector<Param*>& ps) override;

 private:
  int n_in_, n_out_;
  Param w_, b_;
  Tensor x_;
};

class ReLU final : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;

 private:
  Tensor x_;
};

class GlobalAvgPool final : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;

 private:
  int c_ = 0, h_ = 0, w_ = 0;
};

class Sequential final : public Layer {
 public:
  template <typename L, typename... Args>
  L* add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L* raw = layer.get();
    layers_.push_back(std::move(layer));
    return raw;
  }
  void add_layer(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  void collect(std::vector<Param*>& ps) override;
  size_t depth() const { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// y = relu(body(x) + shortcut(x)); null shortcut means identity.
class Residual final : public Layer {
 public:
  Residual(std::unique_ptr<Sequential> body, std::unique_ptr<Layer> shortcut = nullptr);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  void collect(std::vector<Param*>& ps) override;

 private:
  std::unique_ptr<Sequential> body_;
  std::unique_ptr<Layer> shortcut_;
  Tensor pre_;
};

// Runs branches on the same input and concatenates outputs along channels.
class ConcatBranches final : public Layer {
 public:
  Sequential* add_branch();
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  void collect(std::vector<Param*>& ps) override;

 private:
  std::vector<std::unique_ptr<Sequential>> branches_;
  std::vector<int> out_channels_;
  int oh_ = 0, ow_ = 0;
};

std::vector<Param*> collect_params(Layer& root);
size_t param_count(Layer& root);
void zero_grads(const std::vector<Param*>& ps);
std::vector<double> flatten_params(Layer& root);
void load_flat_params(Layer& root, const std::vector<double>& flat);
uint64_t weights_hash(Layer& root);

constexpr double kLogFloor = 1e-12;

std::vector<double> softmax(const std::vector<double>& logits);
// Soft-target cross entropy -sum p_i log q_i with the log floored.
double cross_entropy(const std::vector<double>& q, const std::vector<double>& p);

struct SgdConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double lr_decay = 0.5;
  int decay_every = 10;  // epochs
};

class Sgd {
 public:
  Sgd(std::vector<Param*> params, SgdConfig cfg);
  void start_epoch(int epoch);  // applies the step-decay schedule
  void step();                  // momentum update, then caller zeroes grads
  double lr() const { return lr_; }

 private:
  std::vector<Param*> params_;
  std::vector<std::vector<double>> vel_;
  SgdConfig cfg_;
  double lr_;
};

}  // namespace rpd
