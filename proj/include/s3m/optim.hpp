#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "s3m/tensor.hpp"

namespace s3m {

// Named trainable tensors plus per-parameter Adam moments. Registration
// order is stable and doubles as the serialization order of checkpoints.
// Tensors live in a deque, so references returned by add() and get() stay
// valid as more parameters are registered.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (index_.count(name))
      throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
    index_[name] = tensors_.size();
    order_.push_back(name);
    tensors_.push_back(std::move(t));
    tensors_.back().ensure_grad();
    moments_.push_back(Moments{
        std::vector<double>(tensors_.back().size(), 0.0),
        std::vector<double>(tensors_.back().size(), 0.0)});
    return tensors_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
    return tensors_[it->second];
  }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
    return tensors_[it->second];
  }

  const std::vector<std::string>& names() const { return order_; }
  std::size_t count() const { return tensors_.size(); }
  Tensor& at(std::size_t i) { return tensors_[i]; }
  const Tensor& at(std::size_t i) const { return tensors_[i]; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const Tensor& t : tensors_) n += t.size();
    return n;
  }

  void zero_grads() {
    for (Tensor& t : tensors_) t.zero_grad();
  }

  std::int64_t step() const { return step_; }

  // Snapshot/restore of parameter values only (keeps grads and moments).
  std::vector<std::vector<double>> snapshot_values() const {
    std::vector<std::vector<double>> out;
    out.reserve(tensors_.size());
    for (const Tensor& t : tensors_) out.push_back(t.values);
    return out;
  }

  void restore_values(const std::vector<std::vector<double>>& snap) {
    if (snap.size() != tensors_.size())
      throw std::invalid_argument("ParamStore: snapshot does not match store");
    for (std::size_t i = 0; i < snap.size(); ++i) {
      if (snap[i].size() != tensors_[i].size())
        throw std::invalid_argument("ParamStore: snapshot shape mismatch at '" +
                                    order_[i] + "'");
      tensors_[i].values = snap[i];
    }
  }

  void reset_optimizer_state() {
    for (Moments& m : moments_) {
      std::fill(m.m.begin(), m.m.end(), 0.0);
      std::fill(m.v.begin(), m.v.end(), 0.0);
    }
    step_ = 0;
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };

  std::vector<std::string> order_;
  std::unordered_map<std::string, std::size_t> index_;
  std::deque<Tensor> tensors_;
  std::deque<Moments> moments_;
  std::int64_t step_ = 0;

  friend void adam_step(ParamStore&, double, double, double, double);
};

// Global-norm gradient clipping; returns the pre-clip norm. max_norm <= 0
// disables clipping.
inline double clip_grad_norm(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (std::size_t i = 0; i < store.count(); ++i)
    for (double g : store.at(i).grad) sq += g * g;
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double s = max_norm / norm;
    for (std::size_t i = 0; i < store.count(); ++i)
      for (double& g : store.at(i).grad) g *= s;
  }
  return norm;
}

// One bias-corrected Adam update over every parameter. Gradients are
// consumed: they are zeroed afterwards. The step counter is shared.
inline void adam_step(ParamStore& store, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
  store.step_ += 1;
  double t = static_cast<double>(store.step_);
  double bc1 = 1.0 - std::pow(beta1, t);
  double bc2 = 1.0 - std::pow(beta2, t);
  for (std::size_t p = 0; p < store.tensors_.size(); ++p) {
    Tensor& param = store.tensors_[p];
    auto& mom = store.moments_[p];
    for (std::size_t i = 0; i < param.values.size(); ++i) {
      double g = param.grad[i];
      mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * g;
      mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * g * g;
      double mhat = mom.m[i] / bc1;
      double vhat = mom.v[i] / bc2;
      param.values[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    param.zero_grad();
  }
}

}  // namespace s3m
