#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "refalign/errors.hpp"
#include "refalign/featalign.hpp"
#include "refalign/mask.hpp"
#include "refalign/metrics.hpp"
#include "refalign/rng.hpp"
#include "refalign/structal.hpp"

namespace refalign::train {

inline constexpr double kDefaultLearningRate = 2e-5;
inline constexpr int kDefaultBatchSize = 64;
inline constexpr double kDefaultWeightDecay = 0.01;

// One training example, carrying raw inputs so gradients flow through
// the attention projection as well as the fusion MLP.
struct TrainExample {
  std::string query_id;
  Eigen::MatrixXd object_features;   // n x D_v
  Eigen::MatrixXd token_embeddings;  // l x D_t
  Eigen::MatrixXd alpha;             // n x l, structural alignment (constant)
  std::vector<bool> valid;           // candidate slots in play
  std::optional<int> target;         // winning slot; nullopt -> skip example
};

// Index of the candidate whose mask best overlaps the reference, ties to
// the lowest index. All-zero overlap means no usable supervision.
inline std::optional<int> assign_target(const std::vector<Mask>& candidates, const Mask& reference) {
  std::optional<int> best;
  double best_iou = 0.0;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    const double iou = metrics::mask_iou(candidates[j], reference);
    if (iou > best_iou) {
      best_iou = iou;
      best = static_cast<int>(j);
    }
  }
  return best;
}

// Sum over valid slots of the per-slot binary cross entropy against the
// one-hot target, on clamped scores.
inline double bce_loss(const feat::ScoreVector& sv, int target) {
  if (target < 0 || target >= sv.scores.size() || !sv.valid[static_cast<std::size_t>(target)]) {
    throw std::invalid_argument("bce_loss: target slot is not a valid candidate");
  }
  double loss = 0.0;
  for (Eigen::Index j = 0; j < sv.scores.size(); ++j) {
    if (!sv.valid[static_cast<std::size_t>(j)]) continue;
    const double s = feat::clamp_score(sv.scores[j]);
    loss -= (j == target) ? std::log(s) : std::log(1.0 - s);
  }
  return loss;
}

struct Gradients {
  Eigen::MatrixXd Wq;
  Eigen::MatrixXd W1;
  Eigen::VectorXd b1;
  Eigen::VectorXd W2;
  double b2 = 0.0;

  static Gradients zero(const feat::ModelParams& p) {
    Gradients g;
    g.Wq = Eigen::MatrixXd::Zero(p.Wq.rows(), p.Wq.cols());
    g.W1 = Eigen::MatrixXd::Zero(p.W1.rows(), p.W1.cols());
    g.b1 = Eigen::VectorXd::Zero(p.b1.size());
    g.W2 = Eigen::VectorXd::Zero(p.W2.size());
    g.b2 = 0.0;
    return g;
  }
};

struct BatchResult {
  double mean_loss = 0.0;
  Gradients grads;   // already divided by the contributing-example count
  int contributing = 0;
};

namespace detail {

// Forward pass with everything the backward pass needs kept around.
struct ForwardCache {
  Eigen::MatrixXd q;          // n x D_t
  Eigen::MatrixXd attn;       // n x l softmax rows
  Eigen::MatrixXd attended;   // n x D_t
  Eigen::MatrixXd aggregated; // n x D_t  (alpha * F_l)
  Eigen::MatrixXd hidden;     // n x H    post-relu
  Eigen::VectorXd scores;     // raw sigmoid outputs, pre-clamp
};

inline ForwardCache forward(const feat::ModelParams& p, const TrainExample& ex) {
  ForwardCache c;
  const double scale = 1.0 / std::sqrt(static_cast<double>(ex.token_embeddings.cols()));
  c.q = ex.object_features * p.Wq;
  c.attn = feat::softmax_rows(c.q * ex.token_embeddings.transpose() * scale);
  c.attended = c.attn * ex.token_embeddings;
  c.aggregated = ex.alpha * ex.token_embeddings;
  const Eigen::Index n = ex.object_features.rows();
  c.hidden.resize(n, p.hidden_dim());
  c.scores.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::VectorXd z(2 * p.text_dim());
    z << c.attended.row(j).transpose(), c.aggregated.row(j).transpose();
    c.hidden.row(j) = (p.W1.transpose() * z + p.b1).cwiseMax(0.0).transpose();
    const double logit = p.W2.dot(c.hidden.row(j).transpose()) + p.b2;
    c.scores[j] = 1.0 / (1.0 + std::exp(-logit));
  }
  return c;
}

}  // namespace detail

// Mean loss and gradients over the batch. Examples without a target (or
// whose target slot is invalid) do not contribute; a batch where nothing
// contributes is an error at this level, callers skip such batches.
inline BatchResult batch_gradients(const feat::ModelParams& params,
                                   const std::vector<const TrainExample*>& batch) {
  params.validate();
  BatchResult out;
  out.grads = Gradients::zero(params);
  double loss_sum = 0.0;

  const Eigen::Index dt = params.text_dim();
  for (const TrainExample* exp : batch) {
    const TrainExample& ex = *exp;
    if (!ex.target) continue;
    const int target = *ex.target;
    const Eigen::Index n = ex.object_features.rows();
    if (target < 0 || target >= n || !ex.valid[static_cast<std::size_t>(target)]) continue;
    if (static_cast<Eigen::Index>(ex.valid.size()) != n || ex.alpha.rows() != n ||
        ex.alpha.cols() != ex.token_embeddings.rows()) {
      throw std::invalid_argument("batch_gradients: example " + ex.query_id + " has inconsistent shapes");
    }

    const detail::ForwardCache c = detail::forward(params, ex);
    const double scale = 1.0 / std::sqrt(static_cast<double>(ex.token_embeddings.cols()));

    Eigen::MatrixXd d_attended = Eigen::MatrixXd::Zero(n, dt);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!ex.valid[static_cast<std::size_t>(j)]) continue;
      const double s_raw = c.scores[j];
      const double s = feat::clamp_score(s_raw);
      const double k = (j == target) ? 1.0 : 0.0;
      loss_sum -= (j == target) ? std::log(s) : std::log(1.0 - s);

      // The clamp flattens the loss once the raw score leaves the open
      // interval (clamp, 1-clamp): the gradient is zero there, s - k inside.
      const bool clamped = s_raw <= feat::kScoreClamp || s_raw >= 1.0 - feat::kScoreClamp;
      const double dlogit = clamped ? 0.0 : s - k;
      if (dlogit == 0.0) continue;

      const Eigen::VectorXd h = c.hidden.row(j).transpose();
      out.grads.W2 += dlogit * h;
      out.grads.b2 += dlogit;
      Eigen::VectorXd dh = dlogit * params.W2;
      for (Eigen::Index i = 0; i < dh.size(); ++i) {
        if (h[i] <= 0.0) dh[i] = 0.0;  // relu gate
      }
      Eigen::VectorXd z(2 * dt);
      z << c.attended.row(j).transpose(), c.aggregated.row(j).transpose();
      out.grads.W1 += z * dh.transpose();
      out.grads.b1 += dh;
      const Eigen::VectorXd dz = params.W1 * dh;
      d_attended.row(j) += dz.head(dt).transpose();
      // dz.tail(dt) lands on alpha * F_l, both held constant.
    }

    // Through the attention: dA = d_attended F_l^T, softmax backward per
    // row, then dq = dlogits F_l * scale and dWq = F_i^T dq.
    const Eigen::MatrixXd dA = d_attended * ex.token_embeddings.transpose();
    Eigen::MatrixXd dlogits(n, dA.cols());
    for (Eigen::Index j = 0; j < n; ++j) {
      const Eigen::ArrayXd a = c.attn.row(j).array();
      const Eigen::ArrayXd da = dA.row(j).array();
      const double dot = (a * da).sum();
      dlogits.row(j) = (a * (da - dot)).matrix();
    }
    const Eigen::MatrixXd dq = dlogits * ex.token_embeddings * scale;
    out.grads.Wq += ex.object_features.transpose() * dq;

    ++out.contributing;
  }

  if (out.contributing == 0) {
    throw std::invalid_argument("batch_gradients: no contributing examples in batch");
  }
  const double inv = 1.0 / out.contributing;
  out.mean_loss = loss_sum * inv;
  out.grads.Wq *= inv;
  out.grads.W1 *= inv;
  out.grads.b1 *= inv;
  out.grads.W2 *= inv;
  out.grads.b2 *= inv;
  return out;
}

// AdamW with decoupled weight decay. Biases are not decayed.
struct Optimizer {
  double lr = kDefaultLearningRate;
  double weight_decay = kDefaultWeightDecay;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  std::int64_t step = 0;
  Gradients m;  // first moments
  Gradients v;  // second moments
  bool initialized = false;

  void ensure_state(const feat::ModelParams& p) {
    if (initialized) return;
    m = Gradients::zero(p);
    v = Gradients::zero(p);
    initialized = true;
  }
};

namespace detail {

template <typename T>
void adamw_update(T& param, T& m, T& v, const T& g, double lr, double wd, double b1, double b2,
                  double eps, double bc1, double bc2, bool decay) {
  m = b1 * m + (1.0 - b1) * g;
  v = b2 * v.array().matrix() + (1.0 - b2) * g.array().square().matrix();
  const auto m_hat = (m / bc1).array();
  const auto v_hat = (v / bc2).array();
  param = (param.array() - lr * (m_hat / (v_hat.sqrt() + eps))).matrix();
  if (decay) param *= (1.0 - lr * wd);
}

inline void adamw_update_scalar(double& param, double& m, double& v, double g, double lr, double b1,
                                double b2, double eps, double bc1, double bc2) {
  m = b1 * m + (1.0 - b1) * g;
  v = b2 * v + (1.0 - b2) * g * g;
  param -= lr * ((m / bc1) / (std::sqrt(v / bc2) + eps));
}

}  // namespace detail

inline void adamw_step(feat::ModelParams& params, Optimizer& opt, const Gradients& g) {
  opt.ensure_state(params);
  ++opt.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  detail::adamw_update(params.Wq, opt.m.Wq, opt.v.Wq, g.Wq, opt.lr, opt.weight_decay, opt.beta1,
                       opt.beta2, opt.eps, bc1, bc2, true);
  detail::adamw_update(params.W1, opt.m.W1, opt.v.W1, g.W1, opt.lr, opt.weight_decay, opt.beta1,
                       opt.beta2, opt.eps, bc1, bc2, true);
  detail::adamw_update(params.b1, opt.m.b1, opt.v.b1, g.b1, opt.lr, opt.weight_decay, opt.beta1,
                       opt.beta2, opt.eps, bc1, bc2, false);
  detail::adamw_update(params.W2, opt.m.W2, opt.v.W2, g.W2, opt.lr, opt.weight_decay, opt.beta1,
                       opt.beta2, opt.eps, bc1, bc2, true);
  detail::adamw_update_scalar(params.b2, opt.m.b2, opt.v.b2, g.b2, opt.lr, opt.beta1, opt.beta2,
                              opt.eps, bc1, bc2);
}

struct TrainConfig {
  int epochs = 200;
  int batch_size = kDefaultBatchSize;
  std::uint64_t seed = 42;
  int patience = 20;          // early stop after this many epochs without improvement
  double min_delta = 1e-5;    // improvement smaller than this does not reset patience
};

struct TrainResult {
  feat::ModelParams params;
  std::vector<double> epoch_losses;  // mean loss per completed epoch
  int epochs_run = 0;
  bool stopped_early = false;
};

// Mini-batch AdamW over a seeded shuffle of the dataset each epoch.
// Examples with no target are carried but never contribute.
inline TrainResult fit(const std::vector<TrainExample>& dataset, feat::ModelParams params,
                       Optimizer opt, const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw std::invalid_argument("fit: epochs must be positive");
  if (cfg.batch_size < 1) throw std::invalid_argument("fit: batch size must be positive");
  std::size_t trainable = 0;
  for (const auto& ex : dataset) {
    if (ex.target) ++trainable;
  }
  if (trainable == 0) throw std::invalid_argument("fit: dataset has no trainable examples");

  rng::Engine eng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  double best_loss = std::numeric_limits<double>::infinity();
  int stale_epochs = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng::shuffle(order, eng);
    double epoch_loss_sum = 0.0;
    int epoch_contributing = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const TrainExample*> batch;
      batch.reserve(stop - start);
      bool any = false;
      for (std::size_t i = start; i < stop; ++i) {
        const TrainExample& ex = dataset[order[i]];
        batch.push_back(&ex);
        if (ex.target) any = true;
      }
      if (!any) continue;
      const BatchResult br = batch_gradients(params, batch);
      epoch_loss_sum += br.mean_loss * br.contributing;
      epoch_contributing += br.contributing;
      adamw_step(params, opt, br.grads);
    }
    const double epoch_loss = epoch_loss_sum / epoch_contributing;
    result.epoch_losses.push_back(epoch_loss);
    result.epochs_run = epoch + 1;

    if (epoch_loss < best_loss - cfg.min_delta) {
      best_loss = epoch_loss;
      stale_epochs = 0;
    } else {
      ++stale_epochs;
      if (cfg.patience > 0 && stale_epochs >= cfg.patience) {
        result.stopped_early = true;
        break;
      }
    }
  }

  result.params = std::move(params);
  return result;
}

}  // namespace refalign::train
