#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "entangle/diffcore/params.hpp"
#include "entangle/dyngraph.hpp"
#include "entangle/random.hpp"

// Layer forwards operate on row-batches (one row per unit). Every forward can
// record a cache; the matching backward consumes it, accumulates parameter
// gradients into a GradientMap and returns the gradient w.r.t. its inputs.

namespace entangle::diffcore {

enum class Activation { Identity, Relu, Tanh, Sigmoid };

inline Matrix activate(Activation act, const Matrix& z) {
  switch (act) {
    case Activation::Identity: return z;
    case Activation::Relu: return z.cwiseMax(0.0);
    case Activation::Tanh: return z.array().tanh().matrix();
    case Activation::Sigmoid: return (1.0 / (1.0 + (-z.array()).exp())).matrix();
  }
  return z;
}

/// dL/dz given z, a = act(z) and dL/da.
inline Matrix activation_backward(Activation act, const Matrix& z, const Matrix& a,
                                  const Matrix& grad_a) {
  switch (act) {
    case Activation::Identity: return grad_a;
    case Activation::Relu: return (z.array() > 0.0).select(grad_a, 0.0);
    case Activation::Tanh: return (grad_a.array() * (1.0 - a.array().square())).matrix();
    case Activation::Sigmoid: return (grad_a.array() * a.array() * (1.0 - a.array())).matrix();
  }
  return grad_a;
}

inline void init_uniform(Matrix& m, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
}

inline void require_cols(const Matrix& x, Eigen::Index cols, const char* who) {
  if (x.cols() != cols)
    throw std::invalid_argument(std::string(who) + ": expected " + std::to_string(cols) +
                                " input columns, got " + std::to_string(x.cols()));
}

/// y = x·W + b with W stored in × out.
struct DenseLayer {
  std::string name;
  Eigen::Index in = 0;
  Eigen::Index out = 0;

  std::string weight() const { return name + ".weight"; }
  std::string bias() const { return name + ".bias"; }

  void init(ParameterSet& params, Rng& rng) const {
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    init_uniform(params.add(weight(), in, out), bound, rng);
    init_uniform(params.add(bias(), 1, out), bound, rng);
  }

  Matrix forward(const ParameterSet& params, const Matrix& x) const {
    require_cols(x, in, "DenseLayer");
    return (x * params.at(weight())).rowwise() + params.at(bias()).row(0);
  }

  Matrix backward(const ParameterSet& params, const Matrix& x, const Matrix& grad_out,
                  GradientMap& grads) const {
    grads.accumulate(weight(), x.transpose() * grad_out);
    grads.accumulate(bias(), grad_out.colwise().sum());
    return grad_out * params.at(weight()).transpose();
  }
};

struct MlpCache {
  std::vector<Matrix> inputs;  // input to each dense layer
  std::vector<Matrix> pre;     // pre-activation of each dense layer
  Matrix output;
};

/// Dense layers with `hidden` activation between them and `output` after the
/// last one.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string name, std::vector<Eigen::Index> widths, Activation hidden = Activation::Relu,
      Activation output = Activation::Identity)
      : hidden_(hidden), output_(output) {
    if (widths.size() < 2) throw std::invalid_argument("Mlp: needs at least input and output width");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l)
      layers_.push_back({name + "." + std::to_string(l), widths[l], widths[l + 1]});
  }

  Eigen::Index input_dim() const { return layers_.front().in; }
  Eigen::Index output_dim() const { return layers_.back().out; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  void init(ParameterSet& params, Rng& rng) const {
    for (const auto& l : layers_) l.init(params, rng);
  }

  Matrix forward(const ParameterSet& params, const Matrix& x, MlpCache* cache = nullptr) const {
    require_cols(x, input_dim(), "mlp_forward");
    if (cache) {
      cache->inputs.clear();
      cache->pre.clear();
    }
    Matrix h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix z = layers_[l].forward(params, h);
      const Activation act = l + 1 == layers_.size() ? output_ : hidden_;
      Matrix a = activate(act, z);
      if (cache) {
        cache->inputs.push_back(std::move(h));
        cache->pre.push_back(std::move(z));
      }
      h = std::move(a);
    }
    if (cache) cache->output = h;
    return h;
  }

  Matrix backward(const ParameterSet& params, const MlpCache& cache, const Matrix& grad_out,
                  GradientMap& grads) const {
    Matrix g = grad_out;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const Activation act = l + 1 == layers_.size() ? output_ : hidden_;
      const Matrix& a = l + 1 == layers_.size() ? cache.output : cache.inputs[l + 1];
      g = activation_backward(act, cache.pre[l], a, g);
      g = layers_[l].backward(params, cache.inputs[l], g, grads);
    }
    return g;
  }

 private:
  std::vector<DenseLayer> layers_;
  Activation hidden_ = Activation::Relu;
  Activation output_ = Activation::Identity;
};

struct GruCache {
  Matrix x, h, z, r, c;
};

struct GruGrad {
  Matrix input;
  Matrix state;
};

/// GRU cell:
///   z = σ(x W_z + h U_z + b_z),  r = σ(x W_r + h U_r + b_r)
///   c = tanh(x W_n + (r ⊙ h) U_n + b_n),  h' = (1 - z) ⊙ h + z ⊙ c
class GruCell {
 public:
  GruCell() = default;
  GruCell(std::string name, Eigen::Index input_dim, Eigen::Index hidden_dim)
      : name_(std::move(name)), in_(input_dim), hid_(hidden_dim) {}

  Eigen::Index input_dim() const { return in_; }
  Eigen::Index hidden_dim() const { return hid_; }
  std::string key(const char* part) const { return name_ + "." + part; }

  void init(ParameterSet& params, Rng& rng) const {
    const double bound = std::sqrt(1.0 / static_cast<double>(hid_));
    for (const char* g : {"z", "r", "n"}) {
      init_uniform(params.add(name_ + ".w_" + g, in_, hid_), bound, rng);
      init_uniform(params.add(name_ + ".u_" + g, hid_, hid_), bound, rng);
      init_uniform(params.add(name_ + ".b_" + g, 1, hid_), bound, rng);
    }
  }

  Matrix forward(const ParameterSet& params, const Matrix& x, const Matrix& h,
                 GruCache* cache = nullptr) const {
    require_cols(x, in_, "gru_step input");
    require_cols(h, hid_, "gru_step state");
    if (x.rows() != h.rows()) throw std::invalid_argument("gru_step: batch size mismatch");
    auto affine = [&](const char* g, const Matrix& hh) -> Matrix {
      const std::string s(g);
      return ((x * params.at(name_ + ".w_" + s) + hh * params.at(name_ + ".u_" + s)).rowwise() +
              params.at(name_ + ".b_" + s).row(0));
    };
    Matrix z = activate(Activation::Sigmoid, affine("z", h));
    Matrix r = activate(Activation::Sigmoid, affine("r", h));
    Matrix rh = r.cwiseProduct(h);
    Matrix c = activate(Activation::Tanh, affine("n", rh));
    Matrix out = h + z.cwiseProduct(c - h);
    if (cache) *cache = {x, h, std::move(z), std::move(r), std::move(c)};
    return out;
  }

  GruGrad backward(const ParameterSet& params, const GruCache& k, const Matrix& grad_out,
                   GradientMap& grads) const {
    const Matrix dz = grad_out.cwiseProduct(k.c - k.h);
    const Matrix dc = grad_out.cwiseProduct(k.z);
    Matrix dh = grad_out.cwiseProduct((1.0 - k.z.array()).matrix());

    const Matrix dzp = activation_backward(Activation::Sigmoid, Matrix(), k.z, dz);
    const Matrix dcp = activation_backward(Activation::Tanh, Matrix(), k.c, dc);
    const Matrix rh = k.r.cwiseProduct(k.h);

    grads.accumulate(key("w_n"), k.x.transpose() * dcp);
    grads.accumulate(key("u_n"), rh.transpose() * dcp);
    grads.accumulate(key("b_n"), dcp.colwise().sum());

    const Matrix drh = dcp * params.at(key("u_n")).transpose();
    const Matrix dr = drh.cwiseProduct(k.h);
    dh += drh.cwiseProduct(k.r);
    const Matrix drp = activation_backward(Activation::Sigmoid, Matrix(), k.r, dr);

    grads.accumulate(key("w_z"), k.x.transpose() * dzp);
    grads.accumulate(key("u_z"), k.h.transpose() * dzp);
    grads.accumulate(key("b_z"), dzp.colwise().sum());
    grads.accumulate(key("w_r"), k.x.transpose() * drp);
    grads.accumulate(key("u_r"), k.h.transpose() * drp);
    grads.accumulate(key("b_r"), drp.colwise().sum());

    dh += dzp * params.at(key("u_z")).transpose() + drp * params.at(key("u_r")).transpose();
    Matrix dx = dzp * params.at(key("w_z")).transpose() + drp * params.at(key("w_r")).transpose() +
                dcp * params.at(key("w_n")).transpose();
    return {std::move(dx), std::move(dh)};
  }

 private:
  std::string name_;
  Eigen::Index in_ = 0;
  Eigen::Index hid_ = 0;
};

struct GcnCache {
  Matrix aggregated;  // Â·X
  Matrix pre;
  Matrix output;
};

/// One graph-convolution layer: act(Â·X·W + b).
class GcnLayer {
 public:
  GcnLayer() = default;
  GcnLayer(std::string name, Eigen::Index in, Eigen::Index out,
           Activation act = Activation::Identity)
      : dense_{std::move(name), in, out}, act_(act) {}

  Eigen::Index input_dim() const { return dense_.in; }
  Eigen::Index output_dim() const { return dense_.out; }
  const DenseLayer& dense() const { return dense_; }

  void init(ParameterSet& params, Rng& rng) const { dense_.init(params, rng); }

  Matrix forward(const ParameterSet& params, const NormalizedAdjacency& a_hat, const Matrix& x,
                 GcnCache* cache = nullptr) const {
    if (static_cast<std::size_t>(x.rows()) != a_hat.n)
      throw std::invalid_argument("gcn_forward: adjacency size does not match node rows");
    Matrix agg = a_hat.apply(x);
    Matrix pre = dense_.forward(params, agg);
    Matrix out = activate(act_, pre);
    if (cache) *cache = {std::move(agg), std::move(pre), out};
    return out;
  }

  Matrix backward(const ParameterSet& params, const NormalizedAdjacency& a_hat,
                  const GcnCache& cache, const Matrix& grad_out, GradientMap& grads) const {
    const Matrix dpre = activation_backward(act_, cache.pre, cache.output, grad_out);
    const Matrix dagg = dense_.backward(params, cache.aggregated, dpre, grads);
    return a_hat.entries.transpose() * dagg;
  }

 private:
  DenseLayer dense_;
  Activation act_ = Activation::Identity;
};

}  // namespace entangle::diffcore
