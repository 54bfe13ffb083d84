#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vlur/core/autograd.hpp"
#include "vlur/core/ops.hpp"
#include "vlur/core/rng.hpp"

namespace vlur::nn {

// Ordered registry of named trainable parameters. Registration order is the
// construction order, which keeps optimizer traversal deterministic.
template <class T>
class ParamStore {
 public:
  VarT<T> add(const std::string& name, TensorT<T> init, bool trainable = true) {
    for (const auto& [n, v] : params_)
      if (n == name) throw ConfigError("duplicate parameter name: " + name);
    VarT<T> v = make_leaf(std::move(init), trainable);
    params_.emplace_back(name, v);
    return v;
  }

  const std::vector<std::pair<std::string, VarT<T>>>& all() const { return params_; }

  VarT<T> find(const std::string& name) const {
    for (const auto& [n, v] : params_)
      if (n == name) return v;
    throw ConfigError("unknown parameter: " + name);
  }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& [name, v] : params_) n += v.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, v] : params_) v.zero_grad();
  }

  uint64_t content_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, v] : params_) {
      h = fnv1a64(name, h);
      h = fnv1a64(v.val().ptr(), static_cast<size_t>(v.numel()) * sizeof(T), h);
    }
    return h;
  }

  std::map<std::string, TensorT<T>> snapshot() const {
    std::map<std::string, TensorT<T>> out;
    for (const auto& [name, v] : params_) out[name] = v.val();
    return out;
  }

  void load(const std::map<std::string, TensorT<T>>& tensors, const std::string& prefix = "") {
    for (auto& [name, v] : params_) {
      auto it = tensors.find(prefix + name);
      if (it == tensors.end()) throw MigrationError("checkpoint is missing parameter " + prefix + name);
      if (it->second.shape != v.shape())
        throw MigrationError("checkpoint shape mismatch for " + prefix + name + ": " +
                             shape_str(it->second.shape) + " vs " + shape_str(v.shape()));
      v.val_mut() = it->second;
    }
  }

 private:
  std::vector<std::pair<std::string, VarT<T>>> params_;
};

// Kaiming-style inits for channels-last conv weights [kh,kw,cin,cout].
template <class T>
TensorT<T> conv_init(Shape s, rng::Stream& rs) {
  const int64_t fan_in = s[0] * s[1] * s[2];
  const T stddev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in)));
  return TensorT<T>::randn(std::move(s), rs, stddev);
}

template <class T>
TensorT<T> dwconv_init(Shape s, rng::Stream& rs) {
  const int64_t fan_in = s[0] * s[1];
  const T stddev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in)));
  return TensorT<T>::randn(std::move(s), rs, stddev);
}

template <class T>
TensorT<T> linear_init(Shape s, rng::Stream& rs) {
  const T stddev = static_cast<T>(std::sqrt(1.0 / static_cast<double>(s[0])));
  return TensorT<T>::randn(std::move(s), rs, stddev);
}

template <class T>
TensorT<T> identity_matrix(int64_t n) {
  TensorT<T> t(Shape{n, n});
  for (int64_t i = 0; i < n; ++i) t[i * n + i] = T(1);
  return t;
}

// ADAM with bias correction; state is exposed so checkpoints can carry it.
template <class T>
class Adam {
 public:
  struct Hyper {
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
  };

  explicit Adam(ParamStore<T>& store, Hyper hp = {}) : store_(store), hp_(hp) {
    for (const auto& [name, v] : store.all()) {
      m_.emplace_back(TensorT<T>::zeros(v.shape()));
      v_.emplace_back(TensorT<T>::zeros(v.shape()));
    }
  }

  void step(T lr) {
    ++t_;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(hp_.beta1), t_));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(hp_.beta2), t_));
    const auto& params = store_.all();
    for (size_t p = 0; p < params.size(); ++p) {
      VarT<T> var = params[p].second;
      if (!var.requires_grad()) continue;
      TensorT<T>& g = var.grad();
      TensorT<T>& m = m_[p];
      TensorT<T>& v = v_[p];
      TensorT<T>& w = var.val_mut();
      const int64_t n = w.numel();
#pragma omp parallel for schedule(static) if (parallel_enabled() && n > (1 << 14))
      for (int64_t i = 0; i < n; ++i) {
        m[i] = hp_.beta1 * m[i] + (T(1) - hp_.beta1) * g[i];
        v[i] = hp_.beta2 * v[i] + (T(1) - hp_.beta2) * g[i] * g[i];
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + hp_.eps);
      }
    }
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  std::vector<TensorT<T>>& m_state() { return m_; }
  std::vector<TensorT<T>>& v_state() { return v_; }

 private:
  ParamStore<T>& store_;
  Hyper hp_;
  std::vector<TensorT<T>> m_, v_;
  int64_t t_ = 0;
};

// Cosine decay from lr0 to lr_min over total steps.
inline double cosine_lr(double lr0, double lr_min, int64_t step, int64_t total_steps) {
  if (total_steps <= 1) return lr0;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  const double clamped = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(3.14159265358979323846 * clamped));
}

}  // namespace vlur::nn
