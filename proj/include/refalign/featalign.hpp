#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "refalign/dependency_graph.hpp"
#include "refalign/errors.hpp"
#include "refalign/feature_io.hpp"
#include "refalign/rng.hpp"
#include "refalign/scene_graph.hpp"
#include "refalign/structal.hpp"

namespace refalign::feat {

inline constexpr int kDefaultVisualDim = 1024;  // D_v
inline constexpr int kDefaultTextDim = 768;     // D_t
inline constexpr int kDefaultHiddenDim = 512;   // H
inline constexpr double kScoreClamp = 1e-7;

// Learned parameters of the feature-alignment head. Row-vector
// convention throughout: x * Wq, z * W1, h * W2.
struct ModelParams {
  Eigen::MatrixXd Wq;  // D_v x D_t   query projection for cross-attention
  Eigen::MatrixXd W1;  // 2*D_t x H   fusion MLP, first layer
  Eigen::VectorXd b1;  // H
  Eigen::VectorXd W2;  // H           fusion MLP, output layer (H x 1)
  double b2 = 0.0;

  int visual_dim() const { return static_cast<int>(Wq.rows()); }
  int text_dim() const { return static_cast<int>(Wq.cols()); }
  int hidden_dim() const { return static_cast<int>(W1.cols()); }

  void validate() const {
    if (W1.rows() != 2 * Wq.cols()) {
      throw std::invalid_argument("ModelParams: W1 must have 2 * D_t rows");
    }
    if (b1.size() != W1.cols() || W2.size() != W1.cols()) {
      throw std::invalid_argument("ModelParams: hidden sizes disagree");
    }
    const auto finite = [](const auto& m) { return m.allFinite(); };
    if (!finite(Wq) || !finite(W1) || !finite(b1) || !finite(W2) || !std::isfinite(b2)) {
      throw std::invalid_argument("ModelParams: non-finite entries");
    }
  }
};

namespace detail {

inline void xavier_fill(Eigen::Ref<Eigen::MatrixXd> m, int fan_in, int fan_out, rng::Engine& eng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng::uniform(eng, -limit, limit);
  }
}

}  // namespace detail

// Uniform Xavier init for the matrices, zero biases. Deterministic per seed.
inline ModelParams init_params(int visual_dim, int text_dim, int hidden_dim, std::uint64_t seed) {
  if (visual_dim < 1 || text_dim < 1 || hidden_dim < 1) {
    throw std::invalid_argument("init_params: dimensions must be positive");
  }
  rng::Engine eng(seed);
  ModelParams p;
  p.Wq.resize(visual_dim, text_dim);
  detail::xavier_fill(p.Wq, visual_dim, text_dim, eng);
  p.W1.resize(2 * text_dim, hidden_dim);
  detail::xavier_fill(p.W1, 2 * text_dim, hidden_dim, eng);
  p.b1 = Eigen::VectorXd::Zero(hidden_dim);
  p.W2.resize(hidden_dim);
  detail::xavier_fill(p.W2, hidden_dim, 1, eng);
  p.b2 = 0.0;
  return p;
}

// Row-wise softmax with max subtraction.
inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Eigen::ArrayXd shifted = logits.row(r).array() - logits.row(r).maxCoeff();
    const Eigen::ArrayXd e = shifted.exp();
    out.row(r) = e / e.sum();
  }
  return out;
}

// Object features attend over token embeddings: q = F_i Wq,
// A = softmax(q F_l^T / sqrt(D_t)), result A F_l. One output row per object.
inline Eigen::MatrixXd cross_attention(const Eigen::MatrixXd& object_features,
                                       const Eigen::MatrixXd& token_embeddings,
                                       const Eigen::MatrixXd& Wq) {
  if (token_embeddings.rows() < 1) throw std::invalid_argument("cross_attention: no tokens");
  if (object_features.cols() != Wq.rows() || token_embeddings.cols() != Wq.cols()) {
    throw std::invalid_argument("cross_attention: dimension mismatch");
  }
  if (!object_features.allFinite() || !token_embeddings.allFinite() || !Wq.allFinite()) {
    throw std::invalid_argument("cross_attention: non-finite inputs");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(token_embeddings.cols()));
  const Eigen::MatrixXd q = object_features * Wq;
  const Eigen::MatrixXd weights = softmax_rows(q * token_embeddings.transpose() * scale);
  return weights * token_embeddings;
}

// Per-candidate selection probabilities plus the chosen slot.
struct ScoreVector {
  Eigen::VectorXd scores;   // invalid slots hold 0
  std::vector<bool> valid;
  int selected = -1;
};

inline double clamp_score(double s) {
  return std::min(1.0 - kScoreClamp, std::max(kScoreClamp, s));
}

// Fuses attention output with the structurally aggregated text features
// and scores every candidate: score_j = sigmoid(relu(z_j W1 + b1) W2 + b2)
// with z_j = [attended_j ; (alpha F_l)_j]. Invalid slots never win.
inline ScoreVector fuse_and_score(const Eigen::MatrixXd& attended,
                                  const structal::AlignmentMap& alignment,
                                  const Eigen::MatrixXd& token_embeddings,
                                  const ModelParams& params,
                                  const std::vector<bool>& valid) {
  params.validate();
  const Eigen::Index n = attended.rows();
  const Eigen::Index dt = attended.cols();
  if (alignment.alpha.rows() != n || alignment.alpha.cols() != token_embeddings.rows() ||
      token_embeddings.cols() != dt || dt != params.Wq.cols()) {
    throw std::invalid_argument("fuse_and_score: shape mismatch");
  }
  if (static_cast<Eigen::Index>(valid.size()) != n) {
    throw std::invalid_argument("fuse_and_score: validity mask size mismatch");
  }

  const Eigen::MatrixXd aggregated = alignment.alpha * token_embeddings;  // n x D_t

  ScoreVector out;
  out.scores = Eigen::VectorXd::Zero(n);
  out.valid = valid;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!valid[static_cast<std::size_t>(j)]) continue;
    Eigen::VectorXd z(2 * dt);
    z << attended.row(j).transpose(), aggregated.row(j).transpose();
    const Eigen::VectorXd hidden = (params.W1.transpose() * z + params.b1).cwiseMax(0.0);
    const double logit = params.W2.dot(hidden) + params.b2;
    out.scores[j] = clamp_score(1.0 / (1.0 + std::exp(-logit)));
    if (out.selected < 0 || out.scores[j] > out.scores[out.selected]) out.selected = static_cast<int>(j);
  }
  if (out.selected < 0) throw std::invalid_argument("fuse_and_score: no valid slot");
  return out;
}

inline Eigen::MatrixXd object_feature_matrix(const SceneGraph& scene) {
  const int n = scene.object_count();
  if (n < 1) throw DataError("scene " + scene.image_id + ": no objects");
  Eigen::Index cols = -1;
  Eigen::MatrixXd fi;
  for (int j = 0; j < n; ++j) {
    const auto& o = scene.objects[static_cast<std::size_t>(j)];
    if (!o.feature) {
      throw DataError("scene " + scene.image_id + ": object " + std::to_string(o.id) +
                      " is missing features");
    }
    if (cols < 0) {
      cols = static_cast<Eigen::Index>(o.feature->size());
      fi.resize(n, cols);
    } else if (static_cast<Eigen::Index>(o.feature->size()) != cols) {
      throw DataError("scene " + scene.image_id + ": inconsistent feature lengths");
    }
    for (Eigen::Index c = 0; c < cols; ++c) fi(j, c) = (*o.feature)[static_cast<std::size_t>(c)];
  }
  return fi;
}

inline Eigen::MatrixXd token_embedding_matrix(const DependencyGraph& dep) {
  if (!dep.embeddings) throw DataError("query " + dep.query_id + ": missing token embeddings");
  const auto& fm = *dep.embeddings;
  Eigen::MatrixXd fl(fm.rows, fm.cols);
  for (std::uint32_t r = 0; r < fm.rows; ++r) {
    for (std::uint32_t c = 0; c < fm.cols; ++c) fl(r, c) = fm.at(r, c);
  }
  return fl;
}

struct Prediction {
  int selected = -1;
  ScoreVector scores;
  Mask mask;  // the selected candidate's stored mask, never synthesized
};

// Full scoring pass over ingested data: attention, fusion, argmax, and
// the winning candidate's stored mask.
inline Prediction predict(const SceneGraph& scene, const DependencyGraph& dep,
                          const structal::AlignmentMap& alignment, const ModelParams& params) {
  const Eigen::MatrixXd fi = object_feature_matrix(scene);
  const Eigen::MatrixXd fl = token_embedding_matrix(dep);
  const Eigen::MatrixXd attended = cross_attention(fi, fl, params.Wq);
  const std::vector<bool> valid(static_cast<std::size_t>(scene.object_count()), true);
  Prediction p;
  p.scores = fuse_and_score(attended, alignment, fl, params, valid);
  p.selected = p.scores.selected;
  p.mask = scene.objects[static_cast<std::size_t>(p.selected)].mask;
  return p;
}

// ---- checkpoint file -------------------------------------------------

inline constexpr std::array<char, 4> kCheckpointMagic{'D', 'G', 'P', '1'};

namespace detail {

inline void write_tensor(std::ostream& out, const std::string& name,
                         const std::vector<std::uint32_t>& dims, const std::vector<float>& payload) {
  refalign::detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  refalign::detail::write_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (const auto d : dims) refalign::detail::write_u32(out, d);
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
}

inline std::vector<float> to_f32(const Eigen::MatrixXd& m) {
  std::vector<float> v;
  v.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) v.push_back(static_cast<float>(m(r, c)));
  }
  return v;
}

struct RawTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> payload;
};

inline RawTensor read_tensor(std::istream& in, const std::string& path) {
  RawTensor t;
  const auto name_len = refalign::detail::read_u32(in, path, "tensor name length");
  t.name.resize(name_len);
  in.read(t.name.data(), name_len);
  if (!in) throw DataError(path + ": truncated tensor name");
  const auto ndims = refalign::detail::read_u32(in, path, "tensor rank");
  std::size_t total = 1;
  for (std::uint32_t i = 0; i < ndims; ++i) {
    const auto d = refalign::detail::read_u32(in, path, "tensor dimension");
    t.dims.push_back(d);
    total *= d;
  }
  t.payload.resize(total);
  in.read(reinterpret_cast<char*>(t.payload.data()), static_cast<std::streamsize>(total * sizeof(float)));
  if (!in) throw DataError(path + ": truncated tensor payload");
  return t;
}

}  // namespace detail

// Layout: "DGP1" then, per tensor in the order Wq, W1, b1, W2, b2:
// u32 name length, name bytes, u32 rank, u32 dims, f32 payload (row-major).
inline void save_checkpoint(const ModelParams& params, const std::string& path) {
  params.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(path + ": cannot open file for writing");
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  const auto u32 = [](Eigen::Index v) { return static_cast<std::uint32_t>(v); };
  detail::write_tensor(out, "Wq", {u32(params.Wq.rows()), u32(params.Wq.cols())}, detail::to_f32(params.Wq));
  detail::write_tensor(out, "W1", {u32(params.W1.rows()), u32(params.W1.cols())}, detail::to_f32(params.W1));
  detail::write_tensor(out, "b1", {u32(params.b1.size())}, detail::to_f32(params.b1));
  detail::write_tensor(out, "W2", {u32(params.W2.size()), 1u}, detail::to_f32(params.W2));
  detail::write_tensor(out, "b2", {}, {static_cast<float>(params.b2)});
  if (!out) throw DataError(path + ": write failed");
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open file");
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) throw DataError(path + ": bad magic, not a DGP1 checkpoint");

  const auto expect = [&](const char* name, std::size_t rank) {
    detail::RawTensor t = detail::read_tensor(in, path);
    if (t.name != name) throw DataError(path + ": expected tensor " + name + ", found " + t.name);
    if (t.dims.size() != rank) throw DataError(path + ": tensor " + t.name + " has unexpected rank");
    return t;
  };

  ModelParams p;
  {
    const auto t = expect("Wq", 2);
    p.Wq.resize(t.dims[0], t.dims[1]);
    for (std::uint32_t r = 0, i = 0; r < t.dims[0]; ++r) {
      for (std::uint32_t c = 0; c < t.dims[1]; ++c, ++i) p.Wq(r, c) = t.payload[i];
    }
  }
  {
    const auto t = expect("W1", 2);
    p.W1.resize(t.dims[0], t.dims[1]);
    for (std::uint32_t r = 0, i = 0; r < t.dims[0]; ++r) {
      for (std::uint32_t c = 0; c < t.dims[1]; ++c, ++i) p.W1(r, c) = t.payload[i];
    }
  }
  {
    const auto t = expect("b1", 1);
    p.b1.resize(t.dims[0]);
    for (std::uint32_t i = 0; i < t.dims[0]; ++i) p.b1[i] = t.payload[i];
  }
  {
    const auto t = expect("W2", 2);
    if (t.dims[1] != 1) throw DataError(path + ": W2 must be a column");
    p.W2.resize(t.dims[0]);
    for (std::uint32_t i = 0; i < t.dims[0]; ++i) p.W2[i] = t.payload[i];
  }
  {
    const auto t = expect("b2", 0);
    p.b2 = t.payload.at(0);
  }
  char extra = 0;
  if (in.read(&extra, 1)) throw DataError(path + ": trailing bytes after final tensor");
  p.validate();
  return p;
}

}  // namespace refalign::feat
