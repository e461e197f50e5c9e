#pragma once

#include <cmath>
#include <functional>
#include <limits>

#include <Eigen/Core>

#include "dialcot/errors.hpp"
#include "dialcot/rng.hpp"

namespace dialcot {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Column j of `mask` is true for real candidates of sample j.
using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Candidate selector: three affine layers with tanh between them, input
/// k*d, output k logits, plus a scalar value head reading the last hidden layer.
///
/// The same type holds gradients and optimizer moments (identical shapes).
template <typename Scalar>
struct PolicyNetwork {
  int k = 0;
  int d = 0;
  int hidden = 0;

  MatrixX<Scalar> w1, w2, w3;
  VectorX<Scalar> b1, b2, b3;
  RowVectorX<Scalar> wv;
  Scalar bv = 0;

  int input_width() const { return k * d; }

  static PolicyNetwork zeros(int k, int d, int hidden) {
    if (k < 1 || d < 1 || hidden < 1) throw ShapeError("policy network dimensions must be positive");
    PolicyNetwork net;
    net.k = k;
    net.d = d;
    net.hidden = hidden;
    net.w1 = MatrixX<Scalar>::Zero(hidden, k * d);
    net.b1 = VectorX<Scalar>::Zero(hidden);
    net.w2 = MatrixX<Scalar>::Zero(hidden, hidden);
    net.b2 = VectorX<Scalar>::Zero(hidden);
    net.w3 = MatrixX<Scalar>::Zero(k, hidden);
    net.b3 = VectorX<Scalar>::Zero(k);
    net.wv = RowVectorX<Scalar>::Zero(hidden);
    net.bv = 0;
    return net;
  }

  /// Scaled-normal init: gain/sqrt(fan_in), small policy head so the initial
  /// action distribution is close to uniform.
  static PolicyNetwork random(int k, int d, int hidden, Rng& rng) {
    PolicyNetwork net = zeros(k, d, hidden);
    auto fill = [&rng](auto& m, double gain) {
      const double scale = gain / std::sqrt(static_cast<double>(m.cols()));
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<Scalar>(scale * normal01(rng));
    };
    fill(net.w1, std::sqrt(2.0));
    fill(net.w2, std::sqrt(2.0));
    fill(net.w3, 0.01);
    fill(net.wv, 1.0);
    return net;
  }

  Eigen::Index parameter_count() const {
    return w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size() + wv.size() + 1;
  }

  /// Visits every parameter tensor of `*this` together with the matching tensor of `other`.
  template <typename Fn>
  void zip(PolicyNetwork& other, Fn&& fn) {
    fn(w1, other.w1);
    fn(b1, other.b1);
    fn(w2, other.w2);
    fn(b2, other.b2);
    fn(w3, other.w3);
    fn(b3, other.b3);
    fn(wv, other.wv);
    Eigen::Map<VectorX<Scalar>> a(&bv, 1), b(&other.bv, 1);
    fn(a, b);
  }

  template <typename Fn>
  void for_each(Fn&& fn) {
    fn(w1);
    fn(b1);
    fn(w2);
    fn(b2);
    fn(w3);
    fn(b3);
    fn(wv);
    Eigen::Map<VectorX<Scalar>> v(&bv, 1);
    fn(v);
  }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    fn(w1);
    fn(b1);
    fn(w2);
    fn(b2);
    fn(w3);
    fn(b3);
    fn(wv);
    Eigen::Map<const VectorX<Scalar>> v(&bv, 1);
    fn(v);
  }

  VectorX<Scalar> flatten() const {
    VectorX<Scalar> out(parameter_count());
    Eigen::Index offset = 0;
    for_each([&](const auto& t) {
      out.segment(offset, t.size()) = Eigen::Map<const VectorX<Scalar>>(t.data(), t.size());
      offset += t.size();
    });
    return out;
  }

  void unflatten(const VectorX<Scalar>& flat) {
    if (flat.size() != parameter_count()) throw ShapeError("parameter vector has the wrong length");
    Eigen::Index offset = 0;
    for_each([&](auto& t) {
      Eigen::Map<VectorX<Scalar>>(t.data(), t.size()) = flat.segment(offset, t.size());
      offset += t.size();
    });
  }

  bool all_finite() const {
    bool ok = std::isfinite(static_cast<double>(bv));
    for_each([&](const auto& t) { ok = ok && t.allFinite(); });
    return ok;
  }

  template <typename Other>
  PolicyNetwork<Other> cast() const {
    PolicyNetwork<Other> out;
    out.k = k;
    out.d = d;
    out.hidden = hidden;
    out.w1 = w1.template cast<Other>();
    out.b1 = b1.template cast<Other>();
    out.w2 = w2.template cast<Other>();
    out.b2 = b2.template cast<Other>();
    out.w3 = w3.template cast<Other>();
    out.b3 = b3.template cast<Other>();
    out.wv = wv.template cast<Other>();
    out.bv = static_cast<Other>(bv);
    return out;
  }

  friend bool operator==(const PolicyNetwork& a, const PolicyNetwork& b) {
    return a.k == b.k && a.d == b.d && a.hidden == b.hidden && a.w1 == b.w1 && a.b1 == b.b1 &&
           a.w2 == b.w2 && a.b2 == b.b2 && a.w3 == b.w3 && a.b3 == b.b3 && a.wv == b.wv && a.bv == b.bv;
  }
};

/// Activations of a batched forward pass; columns are samples.
template <typename Scalar>
struct ForwardPass {
  MatrixX<Scalar> h1;         ///< tanh(W1 x + b1)
  MatrixX<Scalar> h2;         ///< tanh(W2 h1 + b2)
  MatrixX<Scalar> logits;     ///< W3 h2 + b3, masked entries -inf
  MatrixX<Scalar> probs;      ///< masked softmax, masked entries exactly 0
  MatrixX<Scalar> log_probs;  ///< masked entries -inf
  RowVectorX<Scalar> values;  ///< wv h2 + bv
};

/// Batched forward pass. `inputs` is (k*d) x N, `mask` is k x N.
template <typename Scalar>
ForwardPass<Scalar> forward(const PolicyNetwork<Scalar>& net, const MatrixX<Scalar>& inputs, const MaskMatrix& mask) {
  if (inputs.rows() != net.input_width()) {
    throw ShapeError("state width " + std::to_string(inputs.rows()) + " != network input width " +
                     std::to_string(net.input_width()));
  }
  if (mask.rows() != net.k || mask.cols() != inputs.cols()) throw ShapeError("mask shape does not match batch");

  ForwardPass<Scalar> out;
  out.h1 = ((net.w1 * inputs).colwise() + net.b1).array().tanh().matrix();
  out.h2 = ((net.w2 * out.h1).colwise() + net.b2).array().tanh().matrix();
  out.logits = (net.w3 * out.h2).colwise() + net.b3;
  out.values = (net.wv * out.h2).array() + net.bv;

  const Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();
  const Eigen::Index n = inputs.cols();
  out.probs.resize(net.k, n);
  out.log_probs.resize(net.k, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Scalar max_logit = neg_inf;
    for (int a = 0; a < net.k; ++a) {
      if (!mask(a, j)) {
        out.logits(a, j) = neg_inf;
      } else if (!std::isfinite(static_cast<double>(out.logits(a, j)))) {
        max_logit = std::numeric_limits<Scalar>::quiet_NaN();
        break;
      } else {
        max_logit = std::max(max_logit, out.logits(a, j));
      }
    }
    if (!std::isfinite(static_cast<double>(max_logit))) {
      throw NumericalError("non-finite policy logits (or an all-masked state)");
    }
    Scalar total = 0;
    for (int a = 0; a < net.k; ++a) {
      if (mask(a, j)) total += std::exp(out.logits(a, j) - max_logit);
    }
    const Scalar log_total = std::log(total) + max_logit;
    for (int a = 0; a < net.k; ++a) {
      if (mask(a, j)) {
        out.log_probs(a, j) = out.logits(a, j) - log_total;
        out.probs(a, j) = std::exp(out.log_probs(a, j));
      } else {
        out.log_probs(a, j) = neg_inf;
        out.probs(a, j) = 0;
      }
    }
  }
  if (!out.values.allFinite()) throw NumericalError("non-finite value estimate");
  return out;
}

/// Backpropagates upstream gradients on logits (k x N, zero at masked
/// entries) and values (1 x N) into parameter gradients.
template <typename Scalar>
PolicyNetwork<Scalar> backward(const PolicyNetwork<Scalar>& net, const MatrixX<Scalar>& inputs,
                               const ForwardPass<Scalar>& fp, const MatrixX<Scalar>& grad_logits,
                               const RowVectorX<Scalar>& grad_values) {
  PolicyNetwork<Scalar> g = PolicyNetwork<Scalar>::zeros(net.k, net.d, net.hidden);
  g.w3.noalias() = grad_logits * fp.h2.transpose();
  g.b3 = grad_logits.rowwise().sum();
  g.wv.noalias() = grad_values * fp.h2.transpose();
  g.bv = grad_values.sum();

  MatrixX<Scalar> dh2 = net.w3.transpose() * grad_logits;
  dh2.noalias() += net.wv.transpose() * grad_values;
  const MatrixX<Scalar> dz2 = (dh2.array() * (1 - fp.h2.array().square())).matrix();
  g.w2.noalias() = dz2 * fp.h1.transpose();
  g.b2 = dz2.rowwise().sum();

  const MatrixX<Scalar> dh1 = net.w2.transpose() * dz2;
  const MatrixX<Scalar> dz1 = (dh1.array() * (1 - fp.h1.array().square())).matrix();
  g.w1.noalias() = dz1 * inputs.transpose();
  g.b1 = dz1.rowwise().sum();
  return g;
}

}  // namespace dialcot
