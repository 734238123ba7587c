#include "spa/tinynn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

namespace spa::nn {

std::string to_string(Activation a) {
  return a == Activation::Tanh ? "tanh" : "relu";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + s + "'");
}

Mlp::Mlp(std::vector<int> dims, Activation activation)
    : dims_(std::move(dims)), activation_(activation) {
  if (dims_.size() < 2) throw UsageError("an Mlp needs at least two layer dims");
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    if (dims_[l] < 1 || dims_[l + 1] < 1) {
      throw UsageError("layer dims must be positive");
    }
    w_off_.push_back(offset);
    offset += static_cast<std::size_t>(dims_[l]) * dims_[l + 1];
    b_off_.push_back(offset);
    offset += dims_[l + 1];
  }
  params_.assign(offset, 0.0);
  grads_.assign(offset, 0.0);
  acts_.resize(dims_.size());
  pre_.resize(dims_.size() - 1);
  for (std::size_t l = 0; l < dims_.size(); ++l) acts_[l].resize(dims_[l]);
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    pre_[l].resize(dims_[l + 1]);
  }
}

void Mlp::init_glorot(Rng& rng) {
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const int in = dims_[l];
    const int out = dims_[l + 1];
    const double limit = std::sqrt(6.0 / (in + out));
    double* w = params_.data() + w_off_[l];
    for (int i = 0; i < in * out; ++i) {
      w[i] = (2.0 * uniform01(rng) - 1.0) * limit;
    }
    std::fill_n(params_.data() + b_off_[l], out, 0.0);
  }
}

void Mlp::check_input(std::span<const double> x) const {
  if (dims_.empty()) throw UsageError("forward on an empty network");
  if (static_cast<int>(x.size()) != dims_.front()) {
    throw UsageError("input width " + std::to_string(x.size()) +
                     " does not match network input " +
                     std::to_string(dims_.front()));
  }
}

namespace {

void affine(const double* w, const double* b, const double* x, int in,
            int out, double* y) {
  // One-hot heavy inputs: visit only the nonzero columns. Each output still
  // accumulates in ascending input order.
  int nonzero = 0;
  for (int j = 0; j < in; ++j) nonzero += x[j] != 0.0;
  if (nonzero * 4 < in) {
    for (int i = 0; i < out; ++i) y[i] = b[i];
    for (int j = 0; j < in; ++j) {
      const double xj = x[j];
      if (xj == 0.0) continue;
      for (int i = 0; i < out; ++i) {
        y[i] += w[static_cast<std::size_t>(i) * in + j] * xj;
      }
    }
    return;
  }
  for (int i = 0; i < out; ++i) {
    const double* row = w + static_cast<std::size_t>(i) * in;
    double acc = b[i];
    for (int j = 0; j < in; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

inline double activate(Activation a, double z) {
  return a == Activation::Tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

}  // namespace

std::span<const double> Mlp::forward(std::span<const double> x) {
  check_input(x);
  std::copy(x.begin(), x.end(), acts_[0].begin());
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const bool hidden = l + 1 < layer_count();
    affine(params_.data() + w_off_[l], params_.data() + b_off_[l],
           acts_[l].data(), dims_[l], dims_[l + 1], pre_[l].data());
    for (int i = 0; i < dims_[l + 1]; ++i) {
      acts_[l + 1][i] = hidden ? activate(activation_, pre_[l][i]) : pre_[l][i];
    }
  }
  cached_ = true;
  return acts_.back();
}

std::vector<double> Mlp::predict(std::span<const double> x) const {
  check_input(x);
  std::vector<double> cur(x.begin(), x.end());
  std::vector<double> next;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const bool hidden = l + 1 < layer_count();
    next.resize(dims_[l + 1]);
    affine(params_.data() + w_off_[l], params_.data() + b_off_[l], cur.data(),
           dims_[l], dims_[l + 1], next.data());
    if (hidden) {
      for (double& v : next) v = activate(activation_, v);
    }
    std::swap(cur, next);
  }
  return cur;
}

std::vector<double> Mlp::backward(std::span<const double> upstream,
                                  bool input_grad) {
  if (!cached_) throw UsageError("backward called without a cached forward");
  if (static_cast<int>(upstream.size()) != output_size()) {
    throw UsageError("upstream gradient width mismatch");
  }
  std::vector<double> delta(upstream.begin(), upstream.end());
  std::vector<double> below;
  for (std::size_t l = layer_count(); l-- > 0;) {
    const int in = dims_[l];
    const int out = dims_[l + 1];
    if (l + 1 < layer_count()) {
      // delta arrives as d/d(activation); convert to d/d(preactivation).
      for (int i = 0; i < out; ++i) {
        const double a = acts_[l + 1][i];
        delta[i] *= activation_ == Activation::Tanh
                        ? 1.0 - a * a
                        : (pre_[l][i] > 0.0 ? 1.0 : 0.0);
      }
    }
    const double* w = params_.data() + w_off_[l];
    double* gw = grads_.data() + w_off_[l];
    double* gb = grads_.data() + b_off_[l];
    const double* x = acts_[l].data();
    if (l == 0 && !input_grad) {
      std::vector<int> nz;
      for (int j = 0; j < in; ++j) {
        if (x[j] != 0.0) nz.push_back(j);
      }
      for (int i = 0; i < out; ++i) {
        const double d = delta[i];
        gb[i] += d;
        if (d == 0.0) continue;
        double* grow = gw + static_cast<std::size_t>(i) * in;
        for (int j : nz) grow[j] += d * x[j];
      }
      return {};
    }
    below.assign(in, 0.0);
    for (int i = 0; i < out; ++i) {
      const double d = delta[i];
      gb[i] += d;
      if (d == 0.0) continue;
      double* grow = gw + static_cast<std::size_t>(i) * in;
      const double* wrow = w + static_cast<std::size_t>(i) * in;
      for (int j = 0; j < in; ++j) {
        grow[j] += d * x[j];
        below[j] += wrow[j] * d;
      }
    }
    std::swap(delta, below);
  }
  return delta;
}

void Mlp::zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0); }

bool Mlp::all_finite() const {
  return std::all_of(params_.begin(), params_.end(),
                     [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Serialization

void save(const Mlp& net, std::ostream& out) {
  out << "tinynn-mlp 1\n";
  out << "activation " << to_string(net.activation()) << "\n";
  out << "dims " << net.dims().size();
  for (int d : net.dims()) out << ' ' << d;
  out << "\nparams " << net.params().size() << "\n";
  out << std::hexfloat;
  for (double p : net.params()) out << p << '\n';
  out << std::defaultfloat;
}

namespace {
void expect_token(std::istream& in, const std::string& token) {
  std::string got;
  if (!(in >> got) || got != token) {
    throw ConfigError("malformed network file: expected '" + token + "'");
  }
}
}  // namespace

Mlp load(std::istream& in) {
  expect_token(in, "tinynn-mlp");
  int version = 0;
  if (!(in >> version) || version != 1) {
    throw ConfigError("unsupported network file version");
  }
  expect_token(in, "activation");
  std::string act;
  in >> act;
  expect_token(in, "dims");
  std::size_t n = 0;
  in >> n;
  std::vector<int> dims(n);
  for (auto& d : dims) in >> d;
  expect_token(in, "params");
  std::size_t count = 0;
  in >> count;
  if (!in) throw ConfigError("malformed network header");
  Mlp net(dims, activation_from_string(act));
  if (count != net.params().size()) {
    throw ConfigError("parameter count does not match dims");
  }
  std::string tok;
  for (double& p : net.params()) {
    if (!(in >> tok)) throw ConfigError("truncated network file");
    // strtod parses hex floats exactly; istream >> double does not.
    char* end = nullptr;
    p = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str()) throw ConfigError("bad parameter '" + tok + "'");
  }
  return net;
}

void save_file(const Mlp& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  save(net, out);
}

Mlp load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  return load(in);
}

// ---------------------------------------------------------------------------
// Losses

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

LogProb softmax_logprob(std::span<const double> logits, int index) {
  if (index < 0 || index >= static_cast<int>(logits.size())) {
    throw UsageError("softmax_logprob index out of range");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double log_norm = mx + std::log(sum);
  LogProb out;
  out.value = logits[index] - log_norm;
  out.nll_grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.nll_grad[i] = std::exp(logits[i] - log_norm);
  }
  out.nll_grad[index] -= 1.0;
  return out;
}

Mse mse_loss(double pred, double target) {
  const double d = pred - target;
  return {d * d, 2.0 * d};
}

// ---------------------------------------------------------------------------
// Optimizers

double cosine_multiplier(long step, long total) {
  if (total <= 0) return 1.0;
  const double frac =
      static_cast<double>(std::min(step, total)) / static_cast<double>(total);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

Optimizer::Optimizer(OptimizerConfig config, std::size_t parameter_count)
    : config_(config), m_(parameter_count, 0.0), v_(parameter_count, 0.0) {
  if (!(config_.learning_rate >= 0.0)) {
    throw ConfigError("learning rate must be non-negative");
  }
  if (config_.schedule == Schedule::Cosine && config_.total_steps <= 0) {
    throw ConfigError("cosine schedule needs total_steps > 0");
  }
}

double Optimizer::current_learning_rate() const {
  if (config_.schedule == Schedule::Cosine) {
    return config_.learning_rate *
           cosine_multiplier(step_count_, config_.total_steps);
  }
  return config_.learning_rate;
}

void Optimizer::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw UsageError("optimizer state does not match parameter count");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      std::ostringstream msg;
      msg << "non-finite gradient at parameter " << i << " (value "
          << grads[i] << ", optimizer step " << step_count_ << ")";
      throw NumericError(msg.str());
    }
  }
  const double lr = current_learning_rate();
  ++step_count_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  const bool decoupled = config_.kind == OptimizerKind::AdamW;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = grads[i];
    if (!decoupled) g += config_.weight_decay * params[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    double update = mhat / (std::sqrt(vhat) + config_.epsilon);
    if (decoupled) update += config_.weight_decay * params[i];
    params[i] -= lr * update;
  }
}

double clip_grad_norm(std::span<double> grads, double max_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
  }
  return norm;
}

}  // namespace spa::nn
