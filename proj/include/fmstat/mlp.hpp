#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fmstat/matrix.hpp"
#include "fmstat/rng.hpp"

namespace fmstat::nn {

enum class Activation { Tanh, SmoothRelu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Feed-forward network f = A_L o s o ... o s o A_1 with affine maps
/// A_l(h) = W_l h + b_l. The output layer has no activation.
class Mlp {
 public:
  Mlp() = default;
  /// Zero-initialised parameters.
  Mlp(std::vector<std::size_t> sizes, Activation act);
  /// Gaussian initialisation with variance 1/fan_in, zero biases.
  Mlp(std::vector<std::size_t> sizes, Activation act, RngStream& rng);

  const std::vector<std::size_t>& sizes() const noexcept { return sizes_; }
  std::size_t input_dim() const noexcept { return sizes_.front(); }
  std::size_t output_dim() const noexcept { return sizes_.back(); }
  std::size_t num_layers() const noexcept { return weights_.size(); }
  Activation activation() const noexcept { return act_; }

  Matrix& weight(std::size_t l) { return weights_[l]; }
  const Matrix& weight(std::size_t l) const { return weights_[l]; }
  Vector& bias(std::size_t l) { return biases_[l]; }
  const Vector& bias(std::size_t l) const { return biases_[l]; }

  std::size_t num_parameters() const noexcept;
  /// Layer by layer: row-major W_l, then b_l.
  Vector flatten() const;
  void assign(std::span<const double> params);

  Vector forward(std::span<const double> input) const;
  /// One input per row.
  Matrix forward_batch(const Matrix& inputs) const;

  bool all_finite() const noexcept;

 private:
  std::vector<std::size_t> sizes_;
  Activation act_ = Activation::Tanh;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
};

struct LossGrad {
  double loss = 0.0;
  Vector grad;  // same layout as Mlp::flatten()
};

/// Mean over rows of ||f(x) - y||^2 and its parameter gradient by
/// backpropagation. Throws EmptyBatch and DimensionMismatch.
LossGrad loss_grad(const Mlp& m, const Matrix& inputs, const Matrix& targets);

/// Lipschitz constant of the activation (1 for both supported kinds).
double activation_lipschitz(Activation a) noexcept;

/// prod_l ||W_l||_op * Lip(s)^(L-1).
double lipschitz_upper_bound(const Mlp& m);

/// Rescales every layer whose operator norm exceeds `cap` down to `cap`.
Mlp spectral_clamp(const Mlp& m, double cap);
void spectral_clamp_inplace(Mlp& m, double cap);

struct TrainConfig {
  double step_size = 1e-3;
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  double weight_decay = 0.0;
  std::optional<double> spectral_cap;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::Tanh;
  /// Cosine decay of the step size down to 1% over the whole run.
  bool cosine_schedule = false;

  void validate() const;
};

/// Adaptive first-order optimiser (decay rates 0.9 / 0.999, eps 1e-8) with
/// L2 weight decay added to the loss and optional spectral clamping after
/// every update.
class Trainer {
 public:
  /// `total_steps` is only used by the cosine schedule.
  Trainer(Mlp& model, const TrainConfig& cfg, std::size_t total_steps = 0);

  double current_step_size() const noexcept;

  /// One update on a minibatch; returns the data loss before the update.
  /// Throws Divergence when the loss or parameters become non-finite.
  double step(const Matrix& inputs, const Matrix& targets);

  std::size_t steps_taken() const noexcept { return t_; }

 private:
  Mlp& model_;
  TrainConfig cfg_;
  Vector m_, v_;
  std::size_t t_ = 0;
  std::size_t total_ = 0;
};

struct TrainResult {
  Mlp model;
  std::vector<double> epoch_loss;
};

/// Fits a fresh network (architecture from cfg.hidden) to rows of
/// (inputs, targets). Throws EmptyInput and Divergence.
TrainResult train_with_history(const Matrix& inputs, const Matrix& targets, const TrainConfig& cfg, RngStream& rng);
Mlp train(const Matrix& inputs, const Matrix& targets, const TrainConfig& cfg, RngStream& rng);

/// Continues training an existing model in place.
std::vector<double> fit(Mlp& model, const Matrix& inputs, const Matrix& targets, const TrainConfig& cfg, RngStream& rng);

/// Flat JSON document {layer_sizes, activation, weights, biases}; doubles are
/// written at round-trip precision.
std::string to_json(const Mlp& m);
Mlp from_json(const std::string& text);

}  // namespace fmstat::nn
