#pragma once

#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "vqtts/autograd.hpp"

namespace vqtts {

// Named, insertion-ordered parameter storage. Tensor addresses stay stable
// for the lifetime of the set (including across moves), so layers may keep
// pointers into it.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  ParameterSet() = default;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  Tensor& add(std::string name, Tensor init);
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  Entry& operator[](std::size_t i) { return *entries_[i]; }
  const Entry& operator[](std::size_t i) const { return *entries_[i]; }

 private:
  std::vector<std::unique_ptr<Entry>> entries_;
};

// A training step hit a non-finite value.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binds a parameter either as a trainable leaf or as a frozen constant.
struct ParamBinding {
  Tape* tape;
  bool trainable;
  Var operator()(const Tensor& p) const { return trainable ? tape->param(p) : tape->constant(p); }
};

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor uniform_fan_in(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

// Gradients of every parameter in `params` (zeros for unused ones).
std::vector<Tensor> collect_gradients(const Tape& tape, const ParameterSet& params);
// Rescales in place so the global L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& grads, double max_norm);

Var linear(Var x, Var weight, Var bias);

// Shuffles item indices and groups them so each group's summed length stays
// within `budget`; an item longer than the budget forms its own group.
std::vector<std::vector<std::size_t>> batch_by_length(const std::vector<std::size_t>& lengths,
                                                      std::size_t budget, std::mt19937_64& rng);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(ParameterSet& params, const std::vector<Tensor>& grads, double lr) = 0;

  long steps() const { return steps_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void restore(long steps, std::vector<Tensor> m, std::vector<Tensor> v);

 protected:
  Optimizer(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void ensure_state(const ParameterSet& params);

  double beta1_, beta2_, eps_;
  long steps_ = 0;
  std::vector<Tensor> m_, v_;
};

class Adam : public Optimizer {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-9)
      : Optimizer(beta1, beta2, eps) {}
  void step(ParameterSet& params, const std::vector<Tensor>& grads, double lr) override;
};

// Rectified Adam: falls back to momentum SGD while the variance estimate is
// not yet tractable.
class RAdam : public Optimizer {
 public:
  explicit RAdam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : Optimizer(beta1, beta2, eps) {}
  void step(ParameterSet& params, const std::vector<Tensor>& grads, double lr) override;
};

}  // namespace vqtts
