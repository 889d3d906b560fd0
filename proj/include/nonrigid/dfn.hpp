#pragma once

// Learned map from relative pose to specific acceleration. The dataset pairs
// the 6-dof log of the base-to-camera pose with the camera-frame acceleration
// minus gravity; a small ReLU MLP fits that map and also exposes its input
// Jacobian, which the estimator needs for analytic derivatives. Training is
// plain Adam on an L1 objective, batched through Eigen so a single core gets
// real matrix-matrix throughput.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "nonrigid/dynamics.hpp"
#include "nonrigid/geometry.hpp"
#include "nonrigid/rng.hpp"

namespace nonrigid {

struct DfnSample {
  Vec6d input = Vec6d::Zero();   // se3_log of base^-1 camera
  Vec6d label = Vec6d::Zero();   // [linear m/s^2; angular rad/s^2], camera frame
};

// What the estimator requires from an acceleration model: a prediction and
// its derivative with respect to the 6-dof input.
class AccelModel {
 public:
  virtual ~AccelModel() = default;
  virtual Vec6d predict(const Vec6d& input) const = 0;
  virtual Mat6d input_jacobian(const Vec6d& input) const = 0;
};

struct DfnLayer {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
};

class DeformationNet : public AccelModel {
 public:
  DeformationNet() = default;

  explicit DeformationNet(std::vector<DfnLayer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw std::invalid_argument("DeformationNet: no layers");
    int prev = 6;
    for (const auto& l : layers_) {
      if (l.W.cols() != prev || l.W.rows() <= 0 || l.b.size() != l.W.rows())
        throw std::invalid_argument("DeformationNet: inconsistent layer shapes");
      if (!l.W.allFinite() || !l.b.allFinite())
        throw std::invalid_argument("DeformationNet: non-finite parameters");
      prev = int(l.W.rows());
    }
    if (prev != 6) throw std::invalid_argument("DeformationNet: network must map 6 -> 6");
  }

  // He-initialized MLP 6 -> hidden... -> 6, ReLU on hidden layers only.
  static DeformationNet make(const std::vector<int>& hidden, std::uint64_t seed) {
    for (int h : hidden)
      if (h <= 0) throw std::invalid_argument("DeformationNet: hidden widths must be positive");
    DeformationNet net;
    Rng rng = Rng(seed).split(0x6e657477);  // weights stream
    int prev = 6;
    std::vector<int> dims(hidden);
    dims.push_back(6);
    for (int d : dims) {
      DfnLayer layer;
      layer.W.resize(d, prev);
      layer.b = Eigen::VectorXd::Zero(d);
      const double stddev = std::sqrt(2.0 / double(prev));
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < prev; ++c) layer.W(r, c) = stddev * rng.normal();
      net.layers_.push_back(std::move(layer));
      prev = d;
    }
    return net;
  }

  // "tiny" trains in seconds and is enough for the synthetic spring; "full"
  // is the production-size variant.
  static DeformationNet profile(const std::string& name, std::uint64_t seed) {
    if (name == "tiny") return make({64, 64}, seed);
    if (name == "full") return make({384, 384, 384}, seed);
    throw std::invalid_argument("DeformationNet: unknown profile '" + name + "'");
  }

  const std::vector<DfnLayer>& layers() const { return layers_; }

  int num_params() const {
    int n = 0;
    for (const auto& l : layers_) n += int(l.W.size() + l.b.size());
    return n;
  }

  Vec6d forward(const Vec6d& input) const {
    check_valid();
    Eigen::VectorXd a = input;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      a = layers_[l].W * a + layers_[l].b;
      if (l + 1 < layers_.size()) a = a.cwiseMax(0.0);
    }
    return Vec6d(a);
  }

  Vec6d predict(const Vec6d& input) const override { return forward(input); }

  // Chain rule through the layers; ReLU uses the inactive subgradient at
  // exactly zero, matching the training pass.
  Mat6d input_jacobian(const Vec6d& input) const override {
    check_valid();
    Eigen::VectorXd a = input;
    Eigen::MatrixXd J = Eigen::MatrixXd::Identity(6, 6);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      J = layers_[l].W * J;
      a = layers_[l].W * a + layers_[l].b;
      if (l + 1 < layers_.size()) {
        for (int r = 0; r < a.size(); ++r)
          if (!(a[r] > 0.0)) J.row(r).setZero();
        a = a.cwiseMax(0.0);
      }
    }
    return Mat6d(J);
  }

  nlohmann::json to_json() const {
    check_valid();
    nlohmann::json j;
    j["format"] = "dfn-v1";
    j["activation"] = "relu";
    j["layers"] = nlohmann::json::array();
    for (const auto& l : layers_) {
      nlohmann::json jl;
      jl["rows"] = l.W.rows();
      jl["cols"] = l.W.cols();
      std::vector<double> w;
      w.reserve(std::size_t(l.W.size()));
      for (int r = 0; r < l.W.rows(); ++r)
        for (int c = 0; c < l.W.cols(); ++c) w.push_back(l.W(r, c));
      jl["weights"] = w;
      jl["bias"] = std::vector<double>(l.b.data(), l.b.data() + l.b.size());
      j["layers"].push_back(std::move(jl));
    }
    return j;
  }

  static DeformationNet from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") != "dfn-v1")
      throw std::invalid_argument("DeformationNet: not a dfn-v1 document");
    if (j.value("activation", "") != "relu")
      throw std::invalid_argument("DeformationNet: unsupported activation");
    std::vector<DfnLayer> layers;
    for (const auto& jl : j.at("layers")) {
      const int rows = jl.at("rows").get<int>();
      const int cols = jl.at("cols").get<int>();
      const auto w = jl.at("weights").get<std::vector<double>>();
      const auto b = jl.at("bias").get<std::vector<double>>();
      if (rows <= 0 || cols <= 0 || int(w.size()) != rows * cols || int(b.size()) != rows)
        throw std::invalid_argument("DeformationNet: inconsistent layer shapes");
      DfnLayer layer;
      layer.W.resize(rows, cols);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) layer.W(r, c) = w[std::size_t(r * cols + c)];
      layer.b = Eigen::Map<const Eigen::VectorXd>(b.data(), rows);
      layers.push_back(std::move(layer));
    }
    return DeformationNet(std::move(layers));
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("DeformationNet: cannot write " + path);
    out << to_json().dump();
    if (!out) throw std::runtime_error("DeformationNet: write failed for " + path);
  }

  static DeformationNet load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("DeformationNet: cannot read " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("DeformationNet: parse error in " + path + ": " + e.what());
    }
    return from_json(j);
  }

 private:
  void check_valid() const {
    if (layers_.empty()) throw std::invalid_argument("DeformationNet: uninitialized network");
  }

  std::vector<DfnLayer> layers_;
};

// Single linear layer, mostly for tests and oracles.
inline DeformationNet make_linear_net(const Eigen::MatrixXd& W, const Eigen::VectorXd& b) {
  if (W.rows() != 6 || W.cols() != 6 || b.size() != 6)
    throw std::invalid_argument("make_linear_net: expected 6x6 weight and 6 bias");
  return DeformationNet({DfnLayer{W, b}});
}

// Pairs each simulated instant's relative pose with the camera-frame specific
// acceleration it has to explain. Ordering is (sequence, time), so the output
// is deterministic for a fixed input list.
inline std::vector<DfnSample> make_dataset(const std::vector<SimulatedSequence>& sequences,
                                           const GravityVector& gravity) {
  std::vector<DfnSample> out;
  for (const auto& seq : sequences) {
    if (seq.base.size() != seq.camera.size())
      throw std::invalid_argument("make_dataset: base/camera sample counts differ");
    for (std::size_t i = 0; i < seq.camera.size(); ++i) {
      const auto& b = seq.base[i];
      const auto& c = seq.camera[i];
      if (b.t != c.t) throw std::invalid_argument("make_dataset: base/camera timestamps differ");
      DfnSample s;
      s.input = se3_log_vec<double>(compose(inverse(b.pose), c.pose));
      s.label.head<3>() = c.pose.R.transpose() * (c.a_world - gravity.vec());
      s.label.tail<3>() = c.alpha_body;
      if (!s.input.allFinite() || !s.label.allFinite())
        throw std::invalid_argument("make_dataset: non-finite sample at t=" + std::to_string(c.t));
      if (s.label.head<3>().norm() >= 100.0)
        throw std::invalid_argument("make_dataset: implausible acceleration at t=" +
                                    std::to_string(c.t));
      out.push_back(s);
    }
  }
  return out;
}

struct TrainConfig {
  double lr = 1e-4;
  int epochs = 100;
  int batch = 1024;
  double split_train = 0.7;
  double split_test = 0.2;
  double split_val = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0.0) || epochs <= 0 || batch <= 0)
      throw std::invalid_argument("TrainConfig: lr, epochs and batch must be positive");
    if (split_train < 0.0 || split_test < 0.0 || split_val < 0.0 ||
        std::abs(split_train + split_test + split_val - 1.0) > 1e-9)
      throw std::invalid_argument("TrainConfig: split ratios must be nonnegative and sum to 1");
  }
};

struct DataSplit {
  std::vector<DfnSample> train;
  std::vector<DfnSample> test;
  std::vector<DfnSample> val;
};

// One seeded shuffle, then contiguous slices: train, test, val.
inline DataSplit split_dataset(const std::vector<DfnSample>& dataset, const TrainConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> idx(dataset.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng = Rng(cfg.seed).split(0x73706c69);  // split stream
  rng.shuffle(idx);

  const std::size_t n = dataset.size();
  const std::size_t n_train = std::size_t(std::floor(cfg.split_train * double(n)));
  const std::size_t n_test = std::size_t(std::floor(cfg.split_test * double(n)));
  DataSplit out;
  for (std::size_t i = 0; i < n; ++i) {
    const DfnSample& s = dataset[idx[i]];
    if (i < n_train)
      out.train.push_back(s);
    else if (i < n_train + n_test)
      out.test.push_back(s);
    else
      out.val.push_back(s);
  }
  return out;
}

// Mean absolute prediction error per output axis.
inline Vec6d per_axis_l1(const DeformationNet& net, const std::vector<DfnSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("per_axis_l1: empty sample set");
  Vec6d acc = Vec6d::Zero();
  for (const auto& s : samples) acc += (net.forward(s.input) - s.label).cwiseAbs();
  return acc / double(samples.size());
}

namespace detail {

// Forward pass over a batch (columns = samples), keeping the activations if
// requested: acts[0] is the input, acts[l + 1] the output of layer l.
inline Eigen::MatrixXd dfn_forward_batch(const std::vector<DfnLayer>& params,
                                         const Eigen::MatrixXd& X,
                                         std::vector<Eigen::MatrixXd>* acts = nullptr) {
  Eigen::MatrixXd a = X;
  if (acts) acts->push_back(a);
  for (std::size_t l = 0; l < params.size(); ++l) {
    a = (params[l].W * a).colwise() + params[l].b;
    if (l + 1 < params.size()) a = a.cwiseMax(0.0);
    if (acts) acts->push_back(a);
  }
  return a;
}

// Mean L1 loss over a batch and its gradient with respect to every weight
// and bias, by backpropagation. The ReLU mask keys off the stored
// post-activation values, so the subgradient at exactly zero is zero.
struct L1Gradient {
  double loss = 0.0;
  std::vector<DfnLayer> grads;
};

inline L1Gradient l1_batch_gradient(const std::vector<DfnLayer>& params, const Eigen::MatrixXd& Xb,
                                    const Eigen::MatrixXd& Yb) {
  const std::size_t n_layers = params.size();
  std::vector<Eigen::MatrixXd> acts;
  const Eigen::MatrixXd out = dfn_forward_batch(params, Xb, &acts);
  const Eigen::MatrixXd err = out - Yb;

  L1Gradient result;
  result.loss = err.cwiseAbs().mean();
  result.grads.resize(n_layers);

  Eigen::MatrixXd grad =
      err.unaryExpr([](double e) { return e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0); });
  grad /= double(err.size());

  for (std::size_t l = n_layers; l-- > 0;) {
    result.grads[l].W = grad * acts[l].transpose();
    result.grads[l].b = grad.rowwise().sum();
    if (l > 0) {
      grad = params[l].W.transpose() * grad;
      grad = (acts[l].array() > 0.0).select(grad, 0.0);
    }
  }
  return result;
}

}  // namespace detail

struct TrainResult {
  std::vector<double> train_l1;  // one entry per epoch, mean over elements
  std::vector<double> val_l1;
  double test_l1 = 0.0;
  Vec6d test_l1_axis = Vec6d::Zero();
};

// Adam on mean L1. Deterministic: a fixed shuffle stream, fixed batch order,
// fixed reduction order, so a (seed, cfg, dataset) triple always produces the
// same parameters bit for bit.
inline TrainResult train(DeformationNet& net, const std::vector<DfnSample>& dataset,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (net.layers().empty()) throw std::invalid_argument("train: uninitialized network");
  const DataSplit split = split_dataset(dataset, cfg);
  if (split.train.empty() || split.val.empty() || split.test.empty())
    throw std::invalid_argument("train: dataset too small for the configured split");

  const auto pack = [](const std::vector<DfnSample>& v, Eigen::MatrixXd& X, Eigen::MatrixXd& Y) {
    X.resize(6, Eigen::Index(v.size()));
    Y.resize(6, Eigen::Index(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      X.col(Eigen::Index(i)) = v[i].input;
      Y.col(Eigen::Index(i)) = v[i].label;
    }
  };
  Eigen::MatrixXd Xtr, Ytr, Xval, Yval;
  pack(split.train, Xtr, Ytr);
  pack(split.val, Xval, Yval);

  const std::size_t n_layers = net.layers().size();
  std::vector<DfnLayer> params = net.layers();

  // Start the output bias at the label mean. With an L1 objective a large
  // common offset (the gravity reading) saturates the sign gradients until
  // the bias has crawled there, so spending the first step on it directly
  // frees the whole budget for the signal.
  if (params.back().b.isZero(0.0)) params.back().b = Ytr.rowwise().mean();

  std::vector<DfnLayer> m(n_layers), v(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    m[l].W = Eigen::MatrixXd::Zero(params[l].W.rows(), params[l].W.cols());
    m[l].b = Eigen::VectorXd::Zero(params[l].b.size());
    v[l] = m[l];
  }

  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;

  const std::size_t n_train = split.train.size();
  std::vector<std::size_t> order(n_train);
  for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
  Rng shuffle_rng = Rng(cfg.seed).split(0x73687566);  // per-epoch shuffle stream

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double abs_sum = 0.0;
    for (std::size_t start = 0; start < n_train; start += std::size_t(cfg.batch)) {
      const std::size_t bs = std::min(std::size_t(cfg.batch), n_train - start);
      Eigen::MatrixXd Xb(6, Eigen::Index(bs)), Yb(6, Eigen::Index(bs));
      for (std::size_t i = 0; i < bs; ++i) {
        Xb.col(Eigen::Index(i)) = Xtr.col(Eigen::Index(order[start + i]));
        Yb.col(Eigen::Index(i)) = Ytr.col(Eigen::Index(order[start + i]));
      }

      const detail::L1Gradient g = detail::l1_batch_gradient(params, Xb, Yb);
      abs_sum += g.loss * double(6 * bs);

      ++step;
      const double c1 = 1.0 - std::pow(beta1, double(step));
      const double c2 = 1.0 - std::pow(beta2, double(step));
      for (std::size_t l = 0; l < n_layers; ++l) {
        const Eigen::MatrixXd& dW = g.grads[l].W;
        const Eigen::VectorXd& db = g.grads[l].b;
        m[l].W = beta1 * m[l].W + (1.0 - beta1) * dW;
        m[l].b = beta1 * m[l].b + (1.0 - beta1) * db;
        v[l].W = beta2 * v[l].W + (1.0 - beta2) * dW.cwiseProduct(dW);
        v[l].b = beta2 * v[l].b + (1.0 - beta2) * db.cwiseProduct(db);
        params[l].W.array() -= cfg.lr * (m[l].W.array() / c1) / ((v[l].W.array() / c2).sqrt() + eps);
        params[l].b.array() -= cfg.lr * (m[l].b.array() / c1) / ((v[l].b.array() / c2).sqrt() + eps);
      }
    }
    const double train_l1 = abs_sum / double(6 * n_train);
    const double val_l1 =
        (detail::dfn_forward_batch(params, Xval) - Yval).cwiseAbs().mean();
    if (!std::isfinite(train_l1) || !std::isfinite(val_l1))
      throw std::runtime_error("train: loss became non-finite at epoch " + std::to_string(epoch));
    result.train_l1.push_back(train_l1);
    result.val_l1.push_back(val_l1);
  }

  net = DeformationNet(std::move(params));
  result.test_l1_axis = per_axis_l1(net, split.test);
  result.test_l1 = result.test_l1_axis.mean();
  return result;
}

}  // namespace nonrigid
