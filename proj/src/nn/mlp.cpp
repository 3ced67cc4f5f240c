#include "fmstat/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "fmstat/linalg.hpp"

namespace fmstat::nn {

namespace {

inline double act_value(Activation a, double z) noexcept {
  switch (a) {
    case Activation::Tanh: return std::tanh(z);
    case Activation::SmoothRelu: return z > 30.0 ? z : std::log1p(std::exp(z));
  }
  return z;
}

// Derivative expressed through the pre-activation z and activation value h.
inline double act_deriv(Activation a, double z, double h) noexcept {
  switch (a) {
    case Activation::Tanh: return 1.0 - h * h;
    case Activation::SmoothRelu: return 1.0 / (1.0 + std::exp(-z));
  }
  return 1.0;
}

// out(b, :) = bias + W * in(b, :) with W stored out x in.
void affine(const Matrix& in, const Matrix& w, const Vector& bias, Matrix& out) {
  const std::size_t nout = w.rows(), nin = w.cols();
  const Matrix wt = w.transpose();
  out = Matrix(in.rows(), nout);
  for (std::size_t b = 0; b < in.rows(); ++b) {
    double* o = out.row(b).data();
    std::copy(bias.begin(), bias.end(), o);
    const double* h = in.row(b).data();
    for (std::size_t i = 0; i < nin; ++i) {
      const double hi = h[i];
      const double* wr = wt.row(i).data();
      for (std::size_t j = 0; j < nout; ++j) o[j] += hi * wr[j];
    }
  }
}

}  // namespace

std::string to_string(Activation a) {
  return a == Activation::Tanh ? "tanh" : "smooth-relu";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "smooth-relu") return Activation::SmoothRelu;
  fail(ErrorCode::InvalidArgument, "unknown activation '" + s + "'");
}

double activation_lipschitz(Activation) noexcept { return 1.0; }

Mlp::Mlp(std::vector<std::size_t> sizes, Activation act) : sizes_(std::move(sizes)), act_(act) {
  require(sizes_.size() >= 2, ErrorCode::InvalidArgument, "an Mlp needs at least input and output sizes");
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    require(sizes_[l] > 0 && sizes_[l + 1] > 0, ErrorCode::InvalidArgument, "zero layer width");
    weights_.emplace_back(sizes_[l + 1], sizes_[l]);
    biases_.emplace_back(sizes_[l + 1], 0.0);
  }
}

Mlp::Mlp(std::vector<std::size_t> sizes, Activation act, RngStream& rng) : Mlp(std::move(sizes), act) {
  for (auto& w : weights_) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) w(i, j) = sd * rng.normal();
  }
}

std::size_t Mlp::num_parameters() const noexcept {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
  return n;
}

Vector Mlp::flatten() const {
  Vector p;
  p.reserve(num_parameters());
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    p.insert(p.end(), weights_[l].values().begin(), weights_[l].values().end());
    p.insert(p.end(), biases_[l].begin(), biases_[l].end());
  }
  return p;
}

void Mlp::assign(std::span<const double> params) {
  require(params.size() == num_parameters(), ErrorCode::DimensionMismatch, "parameter vector length");
  std::size_t k = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    std::copy_n(params.begin() + k, weights_[l].size(), weights_[l].data());
    k += weights_[l].size();
    std::copy_n(params.begin() + k, biases_[l].size(), biases_[l].begin());
    k += biases_[l].size();
  }
}

Vector Mlp::forward(std::span<const double> input) const {
  require(input.size() == input_dim(), ErrorCode::DimensionMismatch, "Mlp input length");
  Matrix in(1, input.size(), Vector(input.begin(), input.end()));
  return forward_batch(in).values();
}

Matrix Mlp::forward_batch(const Matrix& inputs) const {
  require(inputs.cols() == input_dim(), ErrorCode::DimensionMismatch, "Mlp input width");
  Matrix h = inputs, z;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    affine(h, weights_[l], biases_[l], z);
    if (l + 1 < weights_.size())
      for (std::size_t k = 0; k < z.size(); ++k) z.data()[k] = act_value(act_, z.data()[k]);
    std::swap(h, z);
  }
  return h;
}

bool Mlp::all_finite() const noexcept {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (!weights_[l].all_finite()) return false;
    for (double b : biases_[l])
      if (!std::isfinite(b)) return false;
  }
  return true;
}

LossGrad loss_grad(const Mlp& m, const Matrix& inputs, const Matrix& targets) {
  require(inputs.rows() > 0, ErrorCode::EmptyBatch, "loss_grad on an empty batch");
  require(inputs.rows() == targets.rows() && targets.cols() == m.output_dim(), ErrorCode::DimensionMismatch,
          "targets shape");
  require(inputs.cols() == m.input_dim(), ErrorCode::DimensionMismatch, "inputs width");
  const std::size_t nl = m.num_layers();
  const std::size_t batch = inputs.rows();

  // pre[l] is the pre-activation of layer l, post[l] its input.
  std::vector<Matrix> post(nl + 1), pre(nl);
  post[0] = inputs;
  for (std::size_t l = 0; l < nl; ++l) {
    affine(post[l], m.weight(l), m.bias(l), pre[l]);
    post[l + 1] = pre[l];
    if (l + 1 < nl)
      for (std::size_t k = 0; k < pre[l].size(); ++k)
        post[l + 1].data()[k] = act_value(m.activation(), pre[l].data()[k]);
  }

  LossGrad out;
  const double inv_b = 1.0 / static_cast<double>(batch);
  Matrix delta(batch, m.output_dim());
  double loss = 0.0;
  for (std::size_t k = 0; k < delta.size(); ++k) {
    const double r = post[nl].data()[k] - targets.data()[k];
    loss += r * r;
    delta.data()[k] = 2.0 * r * inv_b;
  }
  out.loss = loss * inv_b;

  std::vector<Matrix> gw(nl);
  std::vector<Vector> gb(nl);
  for (std::size_t li = nl; li-- > 0;) {
    const Matrix& w = m.weight(li);
    const Matrix& h = post[li];
    gw[li] = Matrix(w.rows(), w.cols());
    gb[li] = Vector(w.rows(), 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* hb = h.row(b).data();
      const double* db = delta.row(b).data();
      for (std::size_t o = 0; o < w.rows(); ++o) {
        const double g = db[o];
        gb[li][o] += g;
        double* gr = gw[li].row(o).data();
        for (std::size_t i = 0; i < w.cols(); ++i) gr[i] += g * hb[i];
      }
    }
    if (li == 0) break;
    Matrix prev(batch, w.cols());
    for (std::size_t b = 0; b < batch; ++b) {
      double* pb = prev.row(b).data();
      const double* db = delta.row(b).data();
      for (std::size_t o = 0; o < w.rows(); ++o) {
        const double g = db[o];
        const double* wr = w.row(o).data();
        for (std::size_t i = 0; i < w.cols(); ++i) pb[i] += g * wr[i];
      }
    }
    const Matrix& z = pre[li - 1];
    const Matrix& a = post[li];
    for (std::size_t k = 0; k < prev.size(); ++k)
      prev.data()[k] *= act_deriv(m.activation(), z.data()[k], a.data()[k]);
    delta = std::move(prev);
  }

  out.grad.reserve(m.num_parameters());
  for (std::size_t l = 0; l < nl; ++l) {
    out.grad.insert(out.grad.end(), gw[l].values().begin(), gw[l].values().end());
    out.grad.insert(out.grad.end(), gb[l].begin(), gb[l].end());
  }
  return out;
}

double lipschitz_upper_bound(const Mlp& m) {
  double bound = 1.0;
  for (std::size_t l = 0; l < m.num_layers(); ++l) bound *= spectral_norm(m.weight(l));
  if (m.num_layers() > 1)
    bound *= std::pow(activation_lipschitz(m.activation()), static_cast<double>(m.num_layers() - 1));
  return bound;
}

void spectral_clamp_inplace(Mlp& m, double cap) {
  require(cap > 0.0, ErrorCode::InvalidArgument, "spectral cap must be positive");
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const double norm = spectral_norm(m.weight(l));
    if (norm > cap) m.weight(l) *= cap / norm;
  }
}

Mlp spectral_clamp(const Mlp& m, double cap) {
  Mlp out = m;
  spectral_clamp_inplace(out, cap);
  return out;
}

void TrainConfig::validate() const {
  require(step_size > 0.0, ErrorCode::InvalidArgument, "step size must be positive");
  require(batch_size >= 1, ErrorCode::InvalidArgument, "batch size must be at least 1");
  require(weight_decay >= 0.0, ErrorCode::InvalidArgument, "weight decay must be non-negative");
  require(!spectral_cap || *spectral_cap > 0.0, ErrorCode::InvalidArgument, "spectral cap must be positive");
}

Trainer::Trainer(Mlp& model, const TrainConfig& cfg, std::size_t total_steps)
    : model_(model), cfg_(cfg), m_(model.num_parameters(), 0.0), v_(model.num_parameters(), 0.0), total_(total_steps) {
  cfg_.validate();
}

double Trainer::current_step_size() const noexcept {
  if (!cfg_.cosine_schedule || total_ == 0) return cfg_.step_size;
  const double frac = std::min(1.0, static_cast<double>(t_) / static_cast<double>(total_));
  return cfg_.step_size * (0.01 + 0.99 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac)));
}

double Trainer::step(const Matrix& inputs, const Matrix& targets) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  LossGrad lg = loss_grad(model_, inputs, targets);
  if (!std::isfinite(lg.loss)) fail(ErrorCode::Divergence, "training loss became non-finite");
  Vector params = model_.flatten();
  const double lr = current_step_size();
  ++t_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = lg.grad[k] + 2.0 * cfg_.weight_decay * params[k];
    m_[k] = kBeta1 * m_[k] + (1.0 - kBeta1) * g;
    v_[k] = kBeta2 * v_[k] + (1.0 - kBeta2) * g * g;
    params[k] -= lr * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + kEps);
  }
  model_.assign(params);
  if (cfg_.spectral_cap) spectral_clamp_inplace(model_, *cfg_.spectral_cap);
  if (!model_.all_finite()) fail(ErrorCode::Divergence, "parameters became non-finite");
  return lg.loss;
}

std::vector<double> fit(Mlp& model, const Matrix& inputs, const Matrix& targets, const TrainConfig& cfg,
                        RngStream& rng) {
  require(inputs.rows() > 0, ErrorCode::EmptyInput, "training data is empty");
  require(inputs.rows() == targets.rows(), ErrorCode::DimensionMismatch, "inputs/targets row count");
  const std::size_t n = inputs.rows();
  const std::size_t bs = std::min(cfg.batch_size, n);
  Trainer trainer(model, cfg, cfg.epochs * ((n + bs - 1) / bs));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> history;
  history.reserve(cfg.epochs);
  Matrix xb, yb;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      xb = Matrix(end - start, inputs.cols());
      yb = Matrix(end - start, targets.cols());
      for (std::size_t r = start; r < end; ++r) {
        std::copy_n(inputs.row(order[r]).data(), inputs.cols(), xb.row(r - start).data());
        std::copy_n(targets.row(order[r]).data(), targets.cols(), yb.row(r - start).data());
      }
      total += trainer.step(xb, yb) * static_cast<double>(end - start);
    }
    history.push_back(total / static_cast<double>(n));
  }
  return history;
}

TrainResult train_with_history(const Matrix& inputs, const Matrix& targets, const TrainConfig& cfg, RngStream& rng) {
  require(inputs.rows() > 0, ErrorCode::EmptyInput, "training data is empty");
  cfg.validate();
  std::vector<std::size_t> sizes{inputs.cols()};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(targets.cols());
  TrainResult out{Mlp(sizes, cfg.activation, rng), {}};
  out.epoch_loss = fit(out.model, inputs, targets, cfg, rng);
  return out;
}

Mlp train(const Matrix& inputs, const Matrix& targets, const TrainConfig& cfg, RngStream& rng) {
  return train_with_history(inputs, targets, cfg, rng).model;
}

std::string to_json(const Mlp& m) {
  nlohmann::json j;
  j["layer_sizes"] = m.sizes();
  j["activation"] = to_string(m.activation());
  auto weights = nlohmann::json::array();
  auto biases = nlohmann::json::array();
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    weights.push_back(m.weight(l).values());
    biases.push_back(m.bias(l));
  }
  j["weights"] = std::move(weights);
  j["biases"] = std::move(biases);
  return j.dump();
}

Mlp from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    auto sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    Mlp m(sizes, activation_from_string(j.at("activation").get<std::string>()));
    const auto& w = j.at("weights");
    const auto& b = j.at("biases");
    require(w.size() == m.num_layers() && b.size() == m.num_layers(), ErrorCode::DimensionMismatch,
            "layer count in model JSON");
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
      auto wv = w[l].get<std::vector<double>>();
      m.weight(l) = Matrix(sizes[l + 1], sizes[l], std::move(wv));
      auto bv = b[l].get<std::vector<double>>();
      require(bv.size() == sizes[l + 1], ErrorCode::DimensionMismatch, "bias length in model JSON");
      m.bias(l) = std::move(bv);
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("malformed model JSON: ") + e.what());
  }
}

}  // namespace fmstat::nn
