#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dialvae/numeric.hpp"

namespace dialvae::numeric {

enum class Activation { linear, tanh };

/// y = W x + b, W stored row-major (out x in).
class Affine {
 public:
  Affine() = default;

  template <class T>
  static Affine create(ModelParams<T>& params, const std::string& prefix, std::size_t in, std::size_t out) {
    Affine a;
    a.in_ = in;
    a.out_ = out;
    a.W_ = params.add(prefix + ".W", {out, in});
    a.b_ = params.add(prefix + ".b", {out});
    return a;
  }

  template <class T>
  static Affine bind(const ModelParams<T>& params, const std::string& prefix) {
    Affine a;
    a.W_ = params.at(prefix + ".W");
    a.b_ = params.at(prefix + ".b");
    a.out_ = params.shape(a.W_)[0];
    a.in_ = params.shape(a.W_)[1];
    return a;
  }

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }
  ParamId weight() const { return W_; }
  ParamId bias() const { return b_; }

  template <class T>
  std::vector<T> forward(const ModelParams<T>& params, std::span<const T> x) const {
    if (x.size() != in_) throw ShapeError("Affine: input size " + std::to_string(x.size()) +
                                          " != " + std::to_string(in_));
    auto b = params.value(b_);
    std::vector<double> acc(b.begin(), b.end());
    matvec_acc(params.value(W_), out_, in_, x, acc.data());
    return std::vector<T>(acc.begin(), acc.end());
  }

  /// Accumulates parameter gradients; adds W^T dy into dx when dx is non-empty.
  template <class T>
  void backward(ModelParams<T>& params, std::span<const T> x, std::span<const double> dy,
                std::span<double> dx) const {
    outer_acc(params.grad(W_), out_, in_, dy.data(), x);
    auto db = params.grad(b_);
    for (std::size_t i = 0; i < out_; ++i) db[i] += static_cast<T>(dy[i]);
    if (!dx.empty()) matvec_t_acc(std::span<const T>(params.value(W_)), out_, in_, dy.data(), dx.data());
  }

 private:
  ParamId W_, b_;
  std::size_t in_ = 0, out_ = 0;
};

/// One tanh hidden layer followed by a linear output layer.
class Mlp {
 public:
  template <class T>
  struct Cache {
    std::vector<T> input;
    std::vector<T> hidden;
  };

  Mlp() = default;

  template <class T>
  static Mlp create(ModelParams<T>& params, const std::string& prefix, std::size_t in, std::size_t hidden,
                    std::size_t out) {
    Mlp m;
    m.hidden_ = Affine::create(params, prefix + ".hidden", in, hidden);
    m.output_ = Affine::create(params, prefix + ".output", hidden, out);
    return m;
  }

  std::size_t in() const { return hidden_.in(); }
  std::size_t out() const { return output_.out(); }
  const Affine& hidden_layer() const { return hidden_; }
  const Affine& output_layer() const { return output_; }

  template <class T>
  std::vector<T> forward(const ModelParams<T>& params, std::span<const T> x, Cache<T>* cache = nullptr) const {
    auto h = hidden_.forward(params, x);
    for (auto& v : h) v = static_cast<T>(std::tanh(static_cast<double>(v)));
    auto y = output_.forward(params, std::span<const T>(h));
    if (cache) {
      cache->input.assign(x.begin(), x.end());
      cache->hidden = std::move(h);
    }
    return y;
  }

  template <class T>
  void backward(ModelParams<T>& params, const Cache<T>& cache, std::span<const double> dy,
                std::span<double> dx) const {
    std::vector<double> dh(hidden_.out(), 0.0);
    output_.backward(params, std::span<const T>(cache.hidden), dy, std::span<double>(dh));
    for (std::size_t i = 0; i < dh.size(); ++i) {
      const double h = cache.hidden[i];
      dh[i] *= 1.0 - h * h;
    }
    hidden_.backward(params, std::span<const T>(cache.input), std::span<const double>(dh), dx);
  }

 private:
  Affine hidden_, output_;
};

/// Single affine layer or one-hidden-layer MLP with an explicit activation,
/// as a free function over raw parameters: output = act(W x + b).
template <class T>
std::vector<T> mlp_forward(const ModelParams<T>& params, const Affine& layer, std::span<const T> x,
                           Activation act) {
  auto y = layer.forward(params, x);
  if (act == Activation::tanh)
    for (auto& v : y) v = static_cast<T>(std::tanh(static_cast<double>(v)));
  return y;
}

/// Gated recurrent unit:
///   u  = sigmoid(W_u x + U_u h + b_u)
///   r  = sigmoid(W_r x + U_r h + b_r)
///   h~ = tanh(W_c x + U_c (r * h) + b_c)
///   h' = (1 - u) * h + u * h~
class Gru {
 public:
  template <class T>
  struct StepCache {
    std::vector<T> x, h_prev, u, r, cand, h;
  };

  Gru() = default;

  template <class T>
  static Gru create(ModelParams<T>& params, const std::string& prefix, std::size_t in, std::size_t hidden) {
    Gru g;
    g.in_ = in;
    g.hid_ = hidden;
    for (const char* gate : {"update", "reset", "cand"}) {
      const std::string p = prefix + "." + gate;
      Gate gt;
      gt.W = params.add(p + ".W", {hidden, in});
      gt.U = params.add(p + ".U", {hidden, hidden});
      gt.b = params.add(p + ".b", {hidden});
      g.gates_.push_back(gt);
    }
    return g;
  }

  std::size_t in() const { return in_; }
  std::size_t hidden() const { return hid_; }

  template <class T>
  std::vector<T> step(const ModelParams<T>& params, std::span<const T> x, std::span<const T> h,
                      StepCache<T>* cache = nullptr) const {
    if (x.size() != in_ || h.size() != hid_) throw ShapeError("Gru: shape mismatch");
    std::vector<T> u = gate_act(params, gates_[0], x, h, true);
    std::vector<T> r = gate_act(params, gates_[1], x, h, true);
    std::vector<T> rh(hid_);
    for (std::size_t i = 0; i < hid_; ++i) rh[i] = static_cast<T>(static_cast<double>(r[i]) * h[i]);
    std::vector<T> c = gate_act(params, gates_[2], x, std::span<const T>(rh), false);
    std::vector<T> out(hid_);
    for (std::size_t i = 0; i < hid_; ++i) {
      const double ui = u[i];
      out[i] = static_cast<T>((1.0 - ui) * static_cast<double>(h[i]) + ui * static_cast<double>(c[i]));
    }
    if (cache) {
      cache->x.assign(x.begin(), x.end());
      cache->h_prev.assign(h.begin(), h.end());
      cache->u = std::move(u);
      cache->r = std::move(r);
      cache->cand = std::move(c);
      cache->h = out;
    }
    return out;
  }

  /// Given d loss / d h', accumulates parameter gradients and adds the input
  /// and previous-state gradients into dx and dh_prev.
  template <class T>
  void backward(ModelParams<T>& params, const StepCache<T>& c, std::span<const double> dh,
                std::span<double> dx, std::span<double> dh_prev) const {
    const std::size_t H = hid_;
    std::vector<double> da_c(H), da_u(H), da_r(H), drh(H, 0.0);
    std::vector<T> rh(H);
    for (std::size_t i = 0; i < H; ++i) {
      const double u = c.u[i], cand = c.cand[i], hp = c.h_prev[i];
      rh[i] = static_cast<T>(static_cast<double>(c.r[i]) * hp);
      dh_prev[i] += dh[i] * (1.0 - u);
      da_c[i] = dh[i] * u * (1.0 - cand * cand);
      da_u[i] = dh[i] * (cand - hp) * u * (1.0 - u);
    }
    gate_backward(params, gates_[2], std::span<const T>(c.x), std::span<const T>(rh), std::span<const double>(da_c), dx,
                  std::span<double>(drh));
    for (std::size_t i = 0; i < H; ++i) {
      const double r = c.r[i];
      da_r[i] = drh[i] * static_cast<double>(c.h_prev[i]) * r * (1.0 - r);
      dh_prev[i] += drh[i] * r;
    }
    gate_backward(params, gates_[0], std::span<const T>(c.x), std::span<const T>(c.h_prev), std::span<const double>(da_u),
                  dx, dh_prev);
    gate_backward(params, gates_[1], std::span<const T>(c.x), std::span<const T>(c.h_prev), std::span<const double>(da_r),
                  dx, dh_prev);
  }

  ParamId param(std::size_t gate, std::size_t which) const {
    const Gate& g = gates_.at(gate);
    return which == 0 ? g.W : which == 1 ? g.U : g.b;
  }

 private:
  struct Gate {
    ParamId W, U, b;
  };

  template <class T>
  std::vector<T> gate_act(const ModelParams<T>& params, const Gate& g, std::span<const T> x,
                          std::span<const T> h, bool sigm) const {
    auto b = params.value(g.b);
    std::vector<double> acc(b.begin(), b.end());
    matvec_acc(params.value(g.W), hid_, in_, x, acc.data());
    matvec_acc(params.value(g.U), hid_, hid_, h, acc.data());
    std::vector<T> out(hid_);
    for (std::size_t i = 0; i < hid_; ++i) out[i] = static_cast<T>(sigm ? sigmoid(acc[i]) : std::tanh(acc[i]));
    return out;
  }

  template <class T>
  void gate_backward(ModelParams<T>& params, const Gate& g, std::span<const T> x, std::span<const T> h,
                     std::span<const double> da, std::span<double> dx, std::span<double> dh) const {
    outer_acc(params.grad(g.W), hid_, in_, da.data(), x);
    outer_acc(params.grad(g.U), hid_, hid_, da.data(), h);
    auto db = params.grad(g.b);
    for (std::size_t i = 0; i < hid_; ++i) db[i] += static_cast<T>(da[i]);
    if (!dx.empty()) matvec_t_acc(std::span<const T>(params.value(g.W)), hid_, in_, da.data(), dx.data());
    matvec_t_acc(std::span<const T>(params.value(g.U)), hid_, hid_, da.data(), dh.data());
  }

  std::vector<Gate> gates_;
  std::size_t in_ = 0, hid_ = 0;
};

}  // namespace dialvae::numeric
