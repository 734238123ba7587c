#pragma once

// Small dense feedforward networks with hand-written backprop, in doubles.
//
// Parameters live in one flat buffer (per layer: weights row-major
// [out x in], then biases), which keeps optimizers, gradient clipping,
// serialization and finite-difference checks layout-agnostic.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spa/common.hpp"

namespace spa::nn {

enum class Activation { Tanh, Relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

class Mlp {
 public:
  Mlp() = default;
  // dims = {in, hidden..., out}; hidden layers use `activation`, the output
  // layer is linear. Parameters start at zero.
  Mlp(std::vector<int> dims, Activation activation);

  // Uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  void init_glorot(Rng& rng);

  // Caches activations for a following backward().
  std::span<const double> forward(std::span<const double> x);
  // Same arithmetic as forward() without touching the cache; safe to call
  // concurrently on a shared network.
  std::vector<double> predict(std::span<const double> x) const;

  // Accumulates d(loss)/d(params) into grads() given d(loss)/d(output) for
  // the most recent forward(), and returns d(loss)/d(input).
  // With input_grad = false the input gradient is skipped and an empty
  // vector returned.
  std::vector<double> backward(std::span<const double> upstream,
                               bool input_grad = true);

  void zero_grad();

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::span<double> grads() { return grads_; }
  std::span<const double> grads() const { return grads_; }

  const std::vector<int>& dims() const { return dims_; }
  int input_size() const { return dims_.front(); }
  int output_size() const { return dims_.back(); }
  std::size_t layer_count() const { return dims_.size() - 1; }
  Activation activation() const { return activation_; }
  std::size_t weight_offset(std::size_t layer) const { return w_off_[layer]; }
  std::size_t bias_offset(std::size_t layer) const { return b_off_[layer]; }
  // Pre-activation values of hidden layer `layer` from the last forward().
  std::span<const double> preactivation(std::size_t layer) const {
    return pre_[layer];
  }

  bool all_finite() const;
  bool operator==(const Mlp& o) const {
    return dims_ == o.dims_ && activation_ == o.activation_ &&
           params_ == o.params_;
  }

 private:
  void check_input(std::span<const double> x) const;

  std::vector<int> dims_;
  Activation activation_ = Activation::Tanh;
  std::vector<double> params_;
  std::vector<double> grads_;
  std::vector<std::size_t> w_off_;
  std::vector<std::size_t> b_off_;

  // acts_[0] is the input, acts_[l + 1] the output of layer l.
  std::vector<std::vector<double>> acts_;
  std::vector<std::vector<double>> pre_;
  bool cached_ = false;
};

// Text format, bit-exact via hex floats:
//   tinynn-mlp 1
//   activation <tanh|relu>
//   dims <n> <d0> ... <dn-1>
//   params <count>
//   <one hex float per line>
void save(const Mlp& net, std::ostream& out);
Mlp load(std::istream& in);
void save_file(const Mlp& net, const std::string& path);
Mlp load_file(const std::string& path);

struct LogProb {
  double value = 0.0;
  // Gradient of the negative log-likelihood: softmax(logits) - onehot.
  std::vector<double> nll_grad;
};

// log softmax(logits)[index], stabilised by max subtraction.
LogProb softmax_logprob(std::span<const double> logits, int index);
std::vector<double> softmax(std::span<const double> logits);

struct Mse {
  double loss = 0.0;
  double grad = 0.0;
};
Mse mse_loss(double pred, double target);

enum class OptimizerKind { Adam, AdamW };
enum class Schedule { Constant, Cosine };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled for AdamW, L2 for Adam
  Schedule schedule = Schedule::Constant;
  long total_steps = 0;  // cosine horizon
};

// 0.5 * (1 + cos(pi * step / total)), clamped to step <= total.
double cosine_multiplier(long step, long total);

class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerConfig config, std::size_t parameter_count);

  // Throws NumericError if any gradient is non-finite; parameters are left
  // untouched in that case.
  void step(std::span<double> params, std::span<const double> grads);

  double current_learning_rate() const;
  long step_count() const { return step_count_; }
  const OptimizerConfig& config() const { return config_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }

 private:
  OptimizerConfig config_;
  long step_count_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

// Scales grads in place so their L2 norm is at most max_norm. Returns the
// norm before clipping.
double clip_grad_norm(std::span<double> grads, double max_norm);

}  // namespace spa::nn
