#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "daml/autodiff.hpp"

namespace daml {

// Ordered collection of named matrices. Used for model parameters, their
// gradients and optimizer moments alike.
template <typename Scalar>
class ParameterSet {
 public:
  using Mat = Matrix<Scalar>;

  std::size_t add(std::string name, Mat value) {
    if (index_.contains(name)) throw ContractError("duplicate parameter name: " + name);
    index_.emplace(name, names_.size());
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return names_.size() - 1;
  }

  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }
  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

  std::size_t index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ContractError("unknown parameter: " + std::string(name));
    return it->second;
  }

  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }

  Mat& operator[](std::size_t i) { return values_[i]; }
  const Mat& operator[](std::size_t i) const { return values_[i]; }
  Mat& operator[](std::string_view name) { return values_[index_of(name)]; }
  const Mat& operator[](std::string_view name) const { return values_[index_of(name)]; }

  ParameterSet zeros_like() const {
    ParameterSet out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Mat::Zero(values_[i].rows(), values_[i].cols()));
    return out;
  }

  void set_zero() {
    for (auto& v : values_) v.setZero();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

  bool all_finite() const {
    for (const auto& v : values_) {
      if (!v.allFinite()) return false;
    }
    return true;
  }

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], values_[i].template cast<Other>());
    return out;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    if (a.names_ != b.names_) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a.values_[i].rows() != b.values_[i].rows() || a.values_[i].cols() != b.values_[i].cols()) return false;
      if (a.values_[i] != b.values_[i]) return false;
    }
    return true;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

template <typename Scalar>
const Matrix<Scalar>& matching_grad(const ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads,
                                    std::size_t i) {
  const std::string& name = params.name(i);
  if (!grads.contains(name)) throw ContractError("missing gradient for parameter " + name);
  const auto& g = grads[name];
  if (g.rows() != params[i].rows() || g.cols() != params[i].cols()) {
    throw ContractError("missing gradient for parameter " + name + " (shape " + Shape{g.rows(), g.cols()}.str() +
                        " vs " + Shape{params[i].rows(), params[i].cols()}.str() + ")");
  }
  return g;
}

}  // namespace detail

// Functional gradient step: returns params - lr * grads, leaving `params` untouched.
template <typename Scalar>
ParameterSet<Scalar> sgd_step(const ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads, Scalar lr) {
  ParameterSet<Scalar> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = detail::matching_grad(params, grads, i);
    out.add(params.name(i), params[i] - lr * g);
  }
  return out;
}

template <typename Scalar>
struct AdamState {
  ParameterSet<Scalar> first_moment;
  ParameterSet<Scalar> second_moment;
  std::int64_t step = 0;
  double learning_rate = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState init(const ParameterSet<Scalar>& params, double learning_rate) {
    AdamState s;
    s.first_moment = params.zeros_like();
    s.second_moment = params.zeros_like();
    s.learning_rate = learning_rate;
    return s;
  }
};

// In-place Adam update; `grads` is zeroed afterwards.
template <typename Scalar>
void adam_step(AdamState<Scalar>& state, ParameterSet<Scalar>& params, ParameterSet<Scalar>& grads) {
  if (state.first_moment.size() != params.size()) throw ContractError("Adam state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) detail::matching_grad(params, grads, i);

  ++state.step;
  const double t = static_cast<double>(state.step);
  const Scalar b1 = static_cast<Scalar>(state.beta1);
  const Scalar b2 = static_cast<Scalar>(state.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(state.beta1, t));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(state.beta2, t));
  const Scalar lr = static_cast<Scalar>(state.learning_rate);
  const Scalar eps = static_cast<Scalar>(state.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& g = grads[params.name(i)];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = b1 * m + (Scalar(1) - b1) * g;
    v.array() = b2 * v.array() + (Scalar(1) - b2) * g.array().square();
    params[i].array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    g.setZero();
  }
}

}  // namespace daml
