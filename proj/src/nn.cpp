#include "vqtts/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vqtts {

Tensor& ParameterSet::add(std::string name, Tensor init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  entries_.push_back(std::make_unique<Entry>(Entry{std::move(name), std::move(init)}));
  return entries_.back()->value;
}

Tensor& ParameterSet::get(std::string_view name) {
  for (auto& e : entries_) {
    if (e->name == name) return e->value;
  }
  throw std::out_of_range("unknown parameter " + std::string(name));
}

const Tensor& ParameterSet::get(std::string_view name) const {
  return const_cast<ParameterSet*>(this)->get(name);
}

bool ParameterSet::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e->name == name; });
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e->value.size();
  return n;
}

Tensor uniform_fan_in(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

std::vector<Tensor> collect_gradients(const Tape& tape, const ParameterSet& params) {
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) grads.push_back(tape.grad_of(params[i].value));
  return grads;
}

double clip_grad_norm(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads) {
    for (double v : g.data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (Tensor& g : grads) {
      for (double& v : g.data()) v *= factor;
    }
  }
  return norm;
}

Var linear(Var x, Var weight, Var bias) { return add_bias(matmul(x, weight), bias); }

void Optimizer::restore(long steps, std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != v.size()) throw std::invalid_argument("optimizer moment count mismatch");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

void Optimizer::ensure_state(const ParameterSet& params) {
  if (m_.size() == params.size()) return;
  if (!m_.empty()) throw std::invalid_argument("optimizer state does not match parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params[i].value.shape(), 0.0);
    v_.emplace_back(params[i].value.shape(), 0.0);
  }
}

void Adam::step(ParameterSet& params, const std::vector<Tensor>& grads, double lr) {
  ensure_state(params);
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(beta1_, t);
  const double bc2 = 1.0 - std::pow(beta2_, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = params[p].value;
    const Tensor& g = grads[p];
    Tensor& m = m_[p];
    Tensor& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

void RAdam::step(ParameterSet& params, const std::vector<Tensor>& grads, double lr) {
  ensure_state(params);
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double beta2_t = std::pow(beta2_, t);
  const double bc1 = 1.0 - std::pow(beta1_, t);
  const double bc2 = 1.0 - beta2_t;
  const double rho_inf = 2.0 / (1.0 - beta2_) - 1.0;
  const double rho_t = rho_inf - 2.0 * t * beta2_t / bc2;
  const bool adaptive = rho_t > 5.0;
  double rect = 1.0;
  if (adaptive) {
    rect = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf /
                     ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = params[p].value;
    const Tensor& g = grads[p];
    Tensor& m = m_[p];
    Tensor& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      if (adaptive) {
        w[i] -= lr * rect * m_hat / (std::sqrt(v[i] / bc2) + eps_);
      } else {
        w[i] -= lr * m_hat;
      }
    }
  }
}

std::vector<std::vector<std::size_t>> batch_by_length(const std::vector<std::size_t>& lengths,
                                                      std::size_t budget, std::mt19937_64& rng) {
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> current;
  std::size_t tokens = 0;
  for (std::size_t i : order) {
    if (!current.empty() && tokens + lengths[i] > budget) {
      batches.push_back(std::move(current));
      current.clear();
      tokens = 0;
    }
    current.push_back(i);
    tokens += lengths[i];
  }
  if (!current.empty()) batches.push_back(std::move(current));
  return batches;
}

}  // namespace vqtts
