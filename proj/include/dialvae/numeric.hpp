#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dialvae/error.hpp"
#include "dialvae/rng.hpp"

namespace dialvae::numeric {

/// Index of a tensor inside a ModelParams collection.
struct ParamId {
  std::size_t index = std::numeric_limits<std::size_t>::max();
  bool valid() const { return index != std::numeric_limits<std::size_t>::max(); }
  bool operator==(const ParamId&) const = default;
};

/// Named, fixed-shape parameter tensors, each with a same-shaped gradient slot.
template <class T>
class ModelParams {
 public:
  using value_type = T;

  ParamId add(const std::string& name, std::vector<std::size_t> shape) {
    if (index_.count(name)) throw ValidationError("duplicate parameter name: " + name);
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    entries_.push_back({name, std::move(shape), std::vector<T>(n, T(0)), std::vector<T>(n, T(0))});
    index_.emplace(name, entries_.size() - 1);
    return ParamId{entries_.size() - 1};
  }

  std::optional<ParamId> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return ParamId{it->second};
  }

  ParamId at(const std::string& name) const {
    auto id = find(name);
    if (!id) throw ValidationError("unknown parameter: " + name);
    return *id;
  }

  std::size_t size() const { return entries_.size(); }
  ParamId id(std::size_t i) const { return ParamId{i}; }
  const std::string& name(ParamId p) const { return entries_.at(p.index).name; }
  const std::vector<std::size_t>& shape(ParamId p) const { return entries_.at(p.index).shape; }
  std::size_t numel(ParamId p) const { return entries_[p.index].value.size(); }

  std::size_t total_numel() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  std::span<T> value(ParamId p) { return entries_[p.index].value; }
  std::span<const T> value(ParamId p) const { return entries_[p.index].value; }
  std::span<T> grad(ParamId p) { return entries_[p.index].grad; }
  std::span<const T> grad(ParamId p) const { return entries_[p.index].grad; }

  void zero_grad() {
    for (auto& e : entries_) std::fill(e.grad.begin(), e.grad.end(), T(0));
  }

  /// Same names and shapes, values converted; gradients zeroed.
  template <class U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    for (const auto& e : entries_) {
      auto p = out.add(e.name, e.shape);
      auto dst = out.value(p);
      for (std::size_t i = 0; i < e.value.size(); ++i) dst[i] = static_cast<U>(e.value[i]);
    }
    return out;
  }

  /// Copies values from another collection with identical layout.
  template <class U>
  void assign_values(const ModelParams<U>& other) {
    if (other.size() != size()) throw ShapeError("parameter count mismatch");
    for (std::size_t i = 0; i < size(); ++i) {
      auto src = other.value(other.id(i));
      if (other.name(other.id(i)) != entries_[i].name || src.size() != entries_[i].value.size())
        throw ShapeError("parameter layout mismatch at " + entries_[i].name);
      for (std::size_t j = 0; j < src.size(); ++j) entries_[i].value[j] = static_cast<T>(src[j]);
    }
  }

  bool values_equal(const ModelParams& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      const auto& a = entries_[i];
      const auto& b = other.entries_[i];
      if (a.name != b.name || a.shape != b.shape || a.value != b.value) return false;
    }
    return true;
  }

 private:
  struct Entry {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<T> value;
    std::vector<T> grad;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Dense kernels. Reductions accumulate in double with four interleaved partial
// sums combined in a fixed order, so results are reproducible bit for bit.

template <class A, class B>
inline double dot(const A* a, const B* b, std::size_t n) noexcept {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    s1 += static_cast<double>(a[i + 1]) * static_cast<double>(b[i + 1]);
    s2 += static_cast<double>(a[i + 2]) * static_cast<double>(b[i + 2]);
    s3 += static_cast<double>(a[i + 3]) * static_cast<double>(b[i + 3]);
  }
  for (; i < n; ++i) s0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return (s0 + s1) + (s2 + s3);
}

/// acc[r] += W[r, :] . x for a row-major rows x cols matrix.
template <class T>
inline void matvec_acc(std::span<const T> W, std::size_t rows, std::size_t cols,
                       std::span<const T> x, double* acc) noexcept {
  for (std::size_t r = 0; r < rows; ++r) acc[r] += dot(W.data() + r * cols, x.data(), cols);
}

/// dx[c] += sum_r W[r, c] * dy[r]
template <class T>
inline void matvec_t_acc(std::span<const T> W, std::size_t rows, std::size_t cols,
                         const double* dy, double* dx) noexcept {
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    const T* row = W.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dx[c] += static_cast<double>(row[c]) * g;
  }
}

/// dW[r, c] += dy[r] * x[c]
template <class T>
inline void outer_acc(std::span<T> dW, std::size_t rows, std::size_t cols, const double* dy,
                      std::span<const T> x) noexcept {
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    T* row = dW.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += static_cast<T>(g * static_cast<double>(x[c]));
  }
}

inline double sigmoid(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Diagonal Gaussian.

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

template <class T>
struct GaussianParams {
  std::vector<T> mu;
  std::vector<T> log_var;

  GaussianParams() = default;
  GaussianParams(std::vector<T> m, std::vector<T> lv) : mu(std::move(m)), log_var(std::move(lv)) {
    if (mu.size() != log_var.size()) throw ShapeError("GaussianParams: mu/log_var length mismatch");
    for (auto& v : log_var) v = static_cast<T>(std::clamp<double>(v, kLogVarMin, kLogVarMax));
  }

  std::size_t dim() const { return mu.size(); }
};

/// KL(q || p) for diagonal Gaussians, summed over dimensions.
template <class T>
double gaussian_kl(const GaussianParams<T>& q, const GaussianParams<T>& p) {
  if (q.dim() != p.dim()) throw ShapeError("gaussian_kl: dimension mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < q.dim(); ++i) {
    const double lq = q.log_var[i], lp = p.log_var[i];
    const double d = static_cast<double>(q.mu[i]) - static_cast<double>(p.mu[i]);
    kl += (lp - lq) + (std::exp(lq - lp) + d * d * std::exp(-lp)) - 1.0;
  }
  return 0.5 * kl;
}

/// Gradients of scale * KL(q || p) with respect to both parameter sets,
/// added into the output arrays.
template <class T>
void gaussian_kl_backward(const GaussianParams<T>& q, const GaussianParams<T>& p, double scale,
                          double* d_mu_q, double* d_lv_q, double* d_mu_p, double* d_lv_p) {
  for (std::size_t i = 0; i < q.dim(); ++i) {
    const double lq = q.log_var[i], lp = p.log_var[i];
    const double d = static_cast<double>(q.mu[i]) - static_cast<double>(p.mu[i]);
    const double inv_vp = std::exp(-lp);
    const double ratio = std::exp(lq - lp);
    d_mu_q[i] += scale * d * inv_vp;
    d_mu_p[i] -= scale * d * inv_vp;
    d_lv_q[i] += scale * 0.5 * (ratio - 1.0);
    d_lv_p[i] += scale * 0.5 * (1.0 - ratio - d * d * inv_vp);
  }
}

/// z = mu + exp(log_var / 2) * eps
template <class T>
std::vector<T> reparameterize(const GaussianParams<T>& g, std::span<const T> eps) {
  if (eps.size() != g.dim()) throw ShapeError("reparameterize: noise length mismatch");
  std::vector<T> z(g.dim());
  for (std::size_t i = 0; i < g.dim(); ++i)
    z[i] = static_cast<T>(static_cast<double>(g.mu[i]) +
                           std::exp(0.5 * static_cast<double>(g.log_var[i])) * static_cast<double>(eps[i]));
  return z;
}

// ---------------------------------------------------------------------------
// Cross-entropy.

/// log sum exp with max subtraction.
template <class T>
double log_sum_exp(std::span<const T> logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (auto v : logits) m = std::max(m, static_cast<double>(v));
  double s = 0.0;
  for (auto v : logits) s += std::exp(static_cast<double>(v) - m);
  return m + std::log(s);
}

/// -log softmax(logits)[target]
template <class T>
double softmax_xent(std::span<const T> logits, std::size_t target) {
  if (target >= logits.size()) throw ValidationError("softmax_xent: target out of range");
  return log_sum_exp(logits) - static_cast<double>(logits[target]);
}

/// Writes softmax(logits) into probs (double) and returns log-sum-exp.
template <class T>
double softmax_into(std::span<const T> logits, std::span<double> probs) {
  const double lse = log_sum_exp(logits);
  for (std::size_t i = 0; i < logits.size(); ++i) probs[i] = std::exp(static_cast<double>(logits[i]) - lse);
  return lse;
}

// ---------------------------------------------------------------------------
// Optimization.

template <class T>
double global_grad_norm(const ModelParams<T>& params) {
  double s = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = params.grad(params.id(i));
    s += dot(g.data(), g.data(), g.size());
  }
  return std::sqrt(s);
}

/// Rescales all gradients so the global L2 norm is at most max_norm.
/// Returns the applied scale factor (1.0 when no clipping happened).
template <class T>
double clip_gradients(ModelParams<T>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (!(norm > max_norm)) return 1.0;
  const double scale = max_norm / norm;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (auto& g : params.grad(params.id(i))) g = static_cast<T>(static_cast<double>(g) * scale);
  return scale;
}

template <class T>
struct AdamState {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::vector<bool> frozen;

  AdamState() = default;
  AdamState(const ModelParams<T>& params, double lr) : learning_rate(lr) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m.emplace_back(params.numel(params.id(i)), T(0));
      v.emplace_back(params.numel(params.id(i)), T(0));
    }
    frozen.assign(params.size(), false);
  }
};

/// One bias-corrected Adam update from the gradients currently in params.
template <class T>
void adam_step(AdamState<T>& st, ModelParams<T>& params) {
  if (st.m.size() != params.size()) throw ShapeError("adam_step: state does not match parameters");
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(st.beta1, t);
  const double c2 = 1.0 - std::pow(st.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (st.frozen[i]) continue;
    auto w = params.value(params.id(i));
    auto g = params.grad(params.id(i));
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = st.beta1 * static_cast<double>(m[j]) + (1.0 - st.beta1) * gj;
      const double vj = st.beta2 * static_cast<double>(v[j]) + (1.0 - st.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / c1;
      const double vhat = vj / c2;
      w[j] = static_cast<T>(static_cast<double>(w[j]) - st.learning_rate * mhat / (std::sqrt(vhat) + st.epsilon));
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking (64-bit).

struct GradViolation {
  std::string name;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t within_tolerance = 0;
  std::vector<GradViolation> violations;
  std::vector<std::string> offending_names;

  double fraction_within() const {
    return checked == 0 ? 1.0 : static_cast<double>(within_tolerance) / static_cast<double>(checked);
  }
};

/// Loss closure: evaluates the loss on params; when want_grad is set it must
/// also leave d loss / d params in the gradient slots (they arrive zeroed).
using LossClosure = std::function<double(ModelParams<double>&, bool want_grad)>;

inline double relative_error(double a, double n) {
  const double denom = std::max(std::abs(a), std::abs(n));
  if (denom < 1e-12) return 0.0;
  return std::abs(a - n) / denom;
}

inline GradCheckReport grad_check(const LossClosure& loss, ModelParams<double>& params, double h,
                                  double tol) {
  params.zero_grad();
  loss(params, true);
  std::vector<std::vector<double>> analytic;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = params.grad(params.id(i));
    analytic.emplace_back(g.begin(), g.end());
  }
  GradCheckReport rep;
  std::set<std::string> names;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto id = params.id(i);
    auto w = params.value(id);
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double orig = w[j];
      w[j] = orig + h;
      const double lp = loss(params, false);
      w[j] = orig - h;
      const double lm = loss(params, false);
      w[j] = orig;
      const double num = (lp - lm) / (2.0 * h);
      const double rel = relative_error(analytic[i][j], num);
      ++rep.checked;
      rep.max_rel_error = std::max(rep.max_rel_error, rel);
      if (rel < tol) {
        ++rep.within_tolerance;
      } else {
        rep.violations.push_back({params.name(id), j, analytic[i][j], num, rel});
        names.insert(params.name(id));
      }
    }
  }
  rep.offending_names.assign(names.begin(), names.end());
  return rep;
}

/// Uniform [-scale, scale] initialization of every tensor in registration order.
template <class T>
void init_uniform(ModelParams<T>& params, CounterRng& rng, double scale) {
  for (std::size_t i = 0; i < params.size(); ++i)
    for (auto& w : params.value(params.id(i))) w = static_cast<T>(rng.uniform(-scale, scale));
}

}  // namespace dialvae::numeric
