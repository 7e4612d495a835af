#include "rpd/nn.hpp"

#include <algorithm>
#include <cmath>

#include "rpd/kernels.hpp"

namespace rpd {

namespace {

void he_init(Param& w, size_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / double(fan_in));
  for (double& x : w.v) x = rng.normal(0.0, stddev);
}

}  // namespace

Conv2d::Conv2d(int ic, int oc, int k, int stride, int pad, Rng& rng, int groups)
    : ic_(ic), oc_(oc), k_(k), stride_(stride), pad_(pad), groups_(groups) {
  require(ic > 0 && oc > 0 && k > 0 && stride > 0 && pad >= 0, "conv: bad shape");
  require(groups > 0 && ic % groups == 0 && oc % groups == 0,
          "conv: groups must divide channels");
  w_ = Param(size_t(oc) * size_t(ic / groups) * size_t(k) * size_t(k));
  b_ = Param(size_t(oc));
  he_init(w_, size_t(ic / groups) * size_t(k) * size_t(k), rng);
  // Small positive bias keeps ReLU units off their kink at init.
  std::fill(b_.v.begin(), b_.v.end(), 0.01);
}

Tensor Conv2d::forward(const Tensor& x) {
  require(x.c == ic_, "conv: channel mismatch");
  oh_ = (x.h + 2 * pad_ - k_) / stride_ + 1;
  ow_ = (x.w + 2 * pad_ - k_) / stride_ + 1;
  require(oh_ > 0 && ow_ > 0, "conv: input too small");
  x_ = x;
  Tensor y(oc_, oh_, ow_);
  kern::conv2d_fwd(x.data(), ic_, x.h, x.w, w_.v.data(), b_.v.data(), oc_, k_, k_, stride_, pad_,
                   groups_, y.data(), oh_, ow_);
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  require(dy.c == oc_ && dy.h == oh_ && dy.w == ow_, "conv backward: shape mismatch");
  kern::conv2d_bwd_wb(dy.data(), oc_, oh_, ow_, x_.data(), ic_, x_.h, x_.w, k_, k_, stride_, pad_,
                      groups_, w_.g.data(), b_.g.data());
  Tensor dx(ic_, x_.h, x_.w);
  kern::conv2d_bwd_in(dy.data(), oc_, oh_, ow_, w_.v.data(), k_, k_, stride_, pad_, groups_,
                      dx.data(), ic_, x_.h, x_.w);
  return dx;
}

void Conv2d::collect(std::vector<Param*>& ps) {
  ps.push_back(&w_);
  ps.push_back(&b_);
}

Dense::Dense(int n_in, int n_out, Rng& rng, bool zero_init) : n_in_(n_in), n_out_(n_out) {
  require(n_in > 0 && n_out > 0, "dense: bad shape");
  w_ = Param(size_t(n_out) * size_t(n_in));
  b_ = Param(size_t(n_out));
  if (!zero_init) {
    he_init(w_, size_t(n_in), rng);
    std::fill(b_.v.begin(), b_.v.end(), 0.01);
  }
}

Tensor Dense::forward(const Tensor& x) {
  require(int(x.size()) == n_in_, "dense: input size mismatch");
  x_ = x;
  Tensor y(n_out_, 1, 1);
  kern::dense_fwd(x.data(), n_in_, w_.v.data(), b_.v.data(), n_out_, y.data());
  return y;
}

Tensor Dense::backward(const Tensor& dy) {
  require(int(dy.size()) == n_out_, "dense backward: shape mismatch");
  Tensor dx(x_.c, x_.h, x_.w);
  kern::dense_bwd(dy.data(), x_.data(), w_.v.data(), n_in_, n_out_, dx.data(), w_.g.data(),
                  b_.g.data());
  return dx;
}

void Dense::collect(std::vector<Param*>& ps) {
  ps.push_back(&w_);
  ps.push_back(&b_);
}

Tensor ReLU::forward(const Tensor& x) {
  x_ = x;
  Tensor y = x;
  for (double& v : y.v) v = std::max(0.0, v);
  return y;
}

Tensor ReLU::backward(const Tensor& dy) {
  require(dy.same_shape(x_), "relu backward: shape mismatch");
  Tensor dx = dy;
  for (size_t i = 0; i < dx.v.size(); ++i)
    if (x_.v[i] <= 0.0) dx.v[i] = 0.0;
  return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x) {
  c_ = x.c;
  h_ = x.h;
  w_ = x.w;
  Tensor y(x.c, 1, 1);
  const double inv = 1.0 / (double(x.h) * double(x.w));
  for (int c = 0; c < x.c; ++c) {
    double s = 0.0;
    for (int i = 0; i < x.h * x.w; ++i) s += x.v[size_t(c) * size_t(x.h) * size_t(x.w) + size_t(i)];
    y.v[size_t(c)] = s * inv;
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
  require(dy.c == c_ && dy.h == 1 && dy.w == 1, "gap backward: shape mismatch");
  Tensor dx(c_, h_, w_);
  const double inv = 1.0 / (double(h_) * double(w_));
  for (int c = 0; c < c_; ++c)
    for (int i = 0; i < h_ * w_; ++i)
      dx.v[size_t(c) * size_t(h_) * size_t(w_) + size_t(i)] = dy.v[size_t(c)] * inv;
  return dx;
}

Tensor Sequential::forward(const Tensor& x) {
  Tensor cur = x;
  for (auto& l : layers_) cur = l->forward(cur);
  return cur;
}

Tensor Sequential::backward(const Tensor& dy) {
  Tensor cur = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
  return cur;
}

void Sequential::collect(std::vector<Param*>& ps) {
  for (auto& l : layers_) l->collect(ps);
}

Residual::Residual(std::unique_ptr<Sequential> body, std::unique_ptr<Layer> shortcut)
    : body_(std::move(body)), shortcut_(std::move(shortcut)) {
  require(body_ != nullptr, "residual: null body");
}

Tensor Residual::forward(const Tensor& x) {
  Tensor b = body_->forward(x);
  Tensor s = shortcut_ ? shortcut_->forward(x) : x;
  require(b.same_shape(s), "residual: body and shortcut shapes differ");
  pre_ = b;
  for (size_t i = 0; i < pre_.v.size(); ++i) pre_.v[i] += s.v[i];
  Tensor y = pre_;
  for (double& v : y.v) v = std::max(0.0, v);
  return y;
}

Tensor Residual::backward(const Tensor& dy) {
  require(dy.same_shape(pre_), "residual backward: shape mismatch");
  Tensor ds = dy;
  for (size_t i = 0; i < ds.v.size(); ++i)
    if (pre_.v[i] <= 0.0) ds.v[i] = 0.0;
  Tensor dx = body_->backward(ds);
  if (shortcut_) {
    Tensor dxs = shortcut_->backward(ds);
    require(dx.same_shape(dxs), "residual backward: shortcut shape mismatch");
    for (size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dxs.v[i];
  } else {
    require(dx.same_shape(ds), "residual backward: identity shape mismatch");
    for (size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += ds.v[i];
  }
  return dx;
}

void Residual::collect(std::vector<Param*>& ps) {
  body_->collect(ps);
  if (shortcut_) shortcut_->collect(ps);
}

Sequential* ConcatBranches::add_branch() {
  branches_.push_back(std::make_unique<Sequential>());
  return branches_.back().get();
}

Tensor ConcatBranches::forward(const Tensor& x) {
  require(!branches_.empty(), "concat: no branches");
  std::vector<Tensor> outs;
  outs.reserve(branches_.size());
  out_channels_.clear();
  for (auto& b : branches_) {
    outs.push_back(b->forward(x));
    out_channels_.push_back(outs.back().c);
  }
  oh_ = outs.front().h;
  ow_ = outs.front().w;
  int total_c = 0;
  for (const auto& o : outs) {
    require(o.h == oh_ && o.w == ow_, "concat: branch spatial sizes differ");
    total_c += o.c;
  }
  Tensor y(total_c, oh_, ow_);
  size_t off = 0;
  for (const auto& o : outs) {
    std::copy(o.v.begin(), o.v.end(), y.v.begin() + ptrdiff_t(off));
    off += o.v.size();
  }
  return y;
}

Tensor ConcatBranches::backward(const Tensor& dy) {
  Tensor dx;
  size_t off = 0;
  for (size_t i = 0; i < branches_.size(); ++i) {
    Tensor slice(out_channels_[i], oh_, ow_);
    std::copy(dy.v.begin() + ptrdiff_t(off), dy.v.begin() + ptrdiff_t(off + slice.v.size()),
              slice.v.begin());
    off += slice.v.size();
    Tensor d = branches_[i]->backward(slice);
    if (i == 0) {
      dx = std::move(d);
    } else {
      require(dx.same_shape(d), "concat backward: branch input shapes differ");
      for (size_t j = 0; j < dx.v.size(); ++j) dx.v[j] += d.v[j];
    }
  }
  require(off == dy.v.size(), "concat backward: channel mismatch");
  return dx;
}

void ConcatBranches::collect(std::vector<Param*>& ps) {
  for (auto& b : branches_) b->collect(ps);
}

std::vector<Param*> collect_params(Layer& root) {
  std::vector<Param*> ps;
  root.collect(ps);
  return ps;
}

size_t param_count(Layer& root) {
  size_t n = 0;
  for (Param* p : collect_params(root)) n += p->size();
  return n;
}

void zero_grads(const std::vector<Param*>& ps) {
  for (Param* p : ps) std::fill(p->g.begin(), p->g.end(), 0.0);
}

std::vector<double> flatten_params(Layer& root) {
  std::vector<double> flat;
  for (Param* p : collect_params(root)) flat.insert(flat.end(), p->v.begin(), p->v.end());
  return flat;
}

void load_flat_params(Layer& root, const std::vector<double>& flat) {
  size_t off = 0;
  for (Param* p : collect_params(root)) {
    require(off + p->size() <= flat.size(), "load_flat_params: too few values");
    std::copy(flat.begin() + ptrdiff_t(off), flat.begin() + ptrdiff_t(off + p->size()),
              p->v.begin());
    off += p->size();
  }
  require(off == flat.size(), "load_flat_params: size mismatch");
}

uint64_t weights_hash(Layer& root) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (Param* p : collect_params(root))
    h = fnv1a64(p->v.data(), p->v.size() * sizeof(double), h);
  return h;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  require(!logits.empty(), "softmax: empty input");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> q(logits.size());
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    q[i] = std::exp(logits[i] - m);
    z += q[i];
  }
  for (double& x : q) x /= z;
  return q;
}

double cross_entropy(const std::vector<double>& q, const std::vector<double>& p) {
  require(q.size() == p.size(), "cross_entropy: size mismatch");
  double loss = 0.0;
  for (size_t i = 0; i < q.size(); ++i) loss -= p[i] * std::log(std::max(q[i], kLogFloor));
  return loss;
}

Sgd::Sgd(std::vector<Param*> params, SgdConfig cfg)
    : params_(std::move(params)), cfg_(cfg), lr_(cfg.lr) {
  vel_.reserve(params_.size());
  for (Param* p : params_) vel_.emplace_back(p->size(), 0.0);
}

void Sgd::start_epoch(int epoch) {
  require(epoch >= 0, "sgd: negative epoch");
  lr_ = cfg_.lr;
  if (cfg_.decay_every > 0)
    lr_ *= std::pow(cfg_.lr_decay, double(epoch / cfg_.decay_every));
}

void Sgd::step() {
  for (size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    auto& v = vel_[i];
    for (size_t j = 0; j < p.size(); ++j) {
      v[j] = cfg_.momentum * v[j] + p.g[j];
      p.v[j] -= lr_ * v[j];
    }
  }
}

}  // namespace rpd
