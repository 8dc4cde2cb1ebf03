#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "rahfl/autodiff.hpp"
#include "rahfl/rng.hpp"
#include "rahfl/tensor.hpp"

namespace rahfl {

/// Architecture description. Clients may hold different hidden_dims; the last
/// entry is the embedding dimension produced by the feature extractor.
struct ModelSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t num_classes = 0;

  void validate() const {
    if (input_dim == 0) throw std::invalid_argument("ModelSpec: input_dim must be positive");
    if (hidden_dims.empty()) throw std::invalid_argument("ModelSpec: hidden_dims must be nonempty");
    for (auto d : hidden_dims) {
      if (d == 0) throw std::invalid_argument("ModelSpec: hidden dims must be positive");
    }
    if (num_classes == 0) throw std::invalid_argument("ModelSpec: num_classes must be positive");
  }

  std::size_t embedding_dim() const { return hidden_dims.back(); }

  std::size_t param_count() const {
    std::size_t n = 0;
    std::size_t prev = input_dim;
    for (auto d : hidden_dims) {
      n += prev * d + d;
      prev = d;
    }
    n += prev * num_classes + num_classes;
    return n;
  }

  std::string arch_string() const {
    std::string s;
    for (std::size_t i = 0; i < hidden_dims.size(); ++i) {
      if (i) s += "-";
      s += std::to_string(hidden_dims[i]);
    }
    return s;
  }
};

struct ForwardResult {
  Tensor features;  // B x embedding_dim
  Tensor logits;    // B x num_classes
};

/// Row-wise softmax with max subtraction; rows sum to 1 within 1e-12.
inline Tensor softmax(const Tensor& logits) {
  ensure_finite(logits, "softmax input");
  Tensor out = logits;
  const std::size_t r = out.rows(), c = out.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double mx = out.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, out.at(i, j));
    double den = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out.at(i, j) = std::exp(out.at(i, j) - mx);
      den += out.at(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= den;
  }
  return out;
}

struct ForwardVars {
  ad::Var features;
  ad::Var logits;
};

/// Feed-forward net: rectified affine extractor layers followed by an affine
/// classifier. Plain value semantics; one trainer mutates a model at a time.
struct Model {
  ModelSpec spec;
  std::vector<Tensor> extractor_w;
  std::vector<Tensor> extractor_b;
  Tensor classifier_w;
  Tensor classifier_b;

  static Model init(const ModelSpec& spec, Rng rng) {
    spec.validate();
    Model m;
    m.spec = spec;
    std::size_t prev = spec.input_dim;
    for (auto d : spec.hidden_dims) {
      m.extractor_w.push_back(glorot(prev, d, rng));
      m.extractor_b.emplace_back(Tensor({d}, 0.0));
      prev = d;
    }
    m.classifier_w = glorot(prev, spec.num_classes, rng);
    m.classifier_b = Tensor({spec.num_classes}, 0.0);
    return m;
  }

  /// Graph-building forward pass. `params` must alias this model's layout.
  static ForwardVars forward_vars(const ModelSpec& spec, const std::vector<ad::Var>& params,
                                  const ad::Var& batch) {
    if (batch.value().rank() != 2 || batch.value().cols() != spec.input_dim) {
      throw std::invalid_argument("Model::forward: batch width " +
                                  std::to_string(batch.value().rank() == 2 ? batch.value().cols() : 0) +
                                  " does not match input_dim " + std::to_string(spec.input_dim));
    }
    const std::size_t layers = spec.hidden_dims.size();
    ad::Var h = batch;
    for (std::size_t l = 0; l < layers; ++l) {
      h = ad::relu(ad::add_rowvec(ad::matmul(h, params[2 * l]), params[2 * l + 1]));
    }
    ad::Var logits = ad::add_rowvec(ad::matmul(h, params[2 * layers]), params[2 * layers + 1]);
    return {h, logits};
  }

  ForwardResult forward(const Tensor& batch) const {
    auto out = forward_vars(spec, const_param_vars(), ad::Var::constant(batch));
    ensure_finite(out.logits.value(), "Model::forward logits");
    return {out.features.value(), out.logits.value()};
  }

  /// Parameter tensors in a fixed order: (W, b) per extractor layer, then
  /// classifier W, b. Optimizer state and gradients follow this layout.
  std::vector<Tensor*> param_list() {
    std::vector<Tensor*> ps;
    for (std::size_t l = 0; l < extractor_w.size(); ++l) {
      ps.push_back(&extractor_w[l]);
      ps.push_back(&extractor_b[l]);
    }
    ps.push_back(&classifier_w);
    ps.push_back(&classifier_b);
    return ps;
  }

  std::vector<const Tensor*> param_list() const {
    std::vector<const Tensor*> ps;
    for (std::size_t l = 0; l < extractor_w.size(); ++l) {
      ps.push_back(&extractor_w[l]);
      ps.push_back(&extractor_b[l]);
    }
    ps.push_back(&classifier_w);
    ps.push_back(&classifier_b);
    return ps;
  }

  std::vector<ad::Var> leaf_param_vars() const {
    std::vector<ad::Var> vs;
    for (const Tensor* t : param_list()) vs.push_back(ad::Var::leaf(*t));
    return vs;
  }

  std::vector<ad::Var> const_param_vars() const {
    std::vector<ad::Var> vs;
    for (const Tensor* t : param_list()) vs.push_back(ad::Var::constant(*t));
    return vs;
  }

  std::vector<double> flatten_params() const {
    std::vector<double> flat;
    for (const Tensor* t : param_list()) {
      flat.insert(flat.end(), t->data().begin(), t->data().end());
    }
    return flat;
  }

  void unflatten_params(const std::vector<double>& flat) {
    std::size_t off = 0;
    for (Tensor* t : param_list()) {
      for (auto& v : t->data()) v = flat[off++];
    }
    if (off != flat.size()) throw std::invalid_argument("Model::unflatten_params: length mismatch");
  }

 private:
  static Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor w({fan_in, fan_out});
    for (auto& v : w.data()) v = rng.uniform(-bound, bound);
    return w;
  }
};

/// Adam with bias correction. Moment tensors mirror the model's param_list.
struct AdamState {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step_count = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  static AdamState init_for(const Model& m, double lr) {
    AdamState s;
    s.learning_rate = lr;
    for (const Tensor* t : m.param_list()) {
      s.first_moment.emplace_back(Tensor(t->shape(), 0.0));
      s.second_moment.emplace_back(Tensor(t->shape(), 0.0));
    }
    return s;
  }

  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size() || params.size() != first_moment.size()) {
      throw std::invalid_argument("AdamState::step: parameter/gradient count mismatch");
    }
    ++step_count;
    const double corr1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double corr2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& theta = *params[p];
      const Tensor& g = grads[p];
      ensure_same_shape(theta, g, "AdamState::step");
      Tensor& m = first_moment[p];
      Tensor& v = second_moment[p];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        const double mhat = m[i] / corr1;
        const double vhat = v[i] / corr2;
        theta[i] -= learning_rate * mhat / (std::sqrt(vhat) + epsilon);
      }
      ensure_finite(theta, "AdamState::step parameters");
    }
  }
};

}  // namespace rahfl
