#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "rahfl/autodiff.hpp"
#include "rahfl/tensor.hpp"

namespace rahfl::losses {

constexpr double kProbFloor = 1e-12;

struct LossWeights {
  double mu = 12.0;     // JSD consistency strength
  double gamma = 1.0;   // DCL regularizer strength
  double tau_c = 0.2;   // supervised contrastive temperature
  double tau_d = 0.2;   // similarity distribution temperature

  void validate() const {
    if (tau_c <= 0.0) throw std::invalid_argument("LossWeights: tau_c must be positive");
    if (tau_d <= 0.0) throw std::invalid_argument("LossWeights: tau_d must be positive");
  }
};

/// Feature views for one batch. All rows unit L2 norm; the multiview batch
/// I = originals followed by simple views, |I| = 2B. Complex views are kept
/// outside I and enter only through the DCL regularizer.
struct ContrastiveBatch {
  Tensor original_features;  // B x d
  Tensor simple_features;    // B x d
  Tensor complex_features;   // B x d
  std::vector<int> labels;   // length B

  std::size_t batch_size() const { return labels.size(); }

  void validate() const {
    const std::size_t b = labels.size();
    if (b == 0) throw std::invalid_argument("ContrastiveBatch: empty");
    for (const Tensor* t : {&original_features, &simple_features, &complex_features}) {
      if (t->rank() != 2 || t->rows() != b) {
        throw std::invalid_argument("ContrastiveBatch: feature shape mismatch");
      }
      if (t->cols() != original_features.cols()) {
        throw std::invalid_argument("ContrastiveBatch: feature dim mismatch");
      }
      for (std::size_t i = 0; i < b; ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < t->cols(); ++j) ss += t->at(i, j) * t->at(i, j);
        if (std::abs(std::sqrt(ss) - 1.0) > 1e-9) {
          throw std::invalid_argument("ContrastiveBatch: feature rows must be unit norm");
        }
      }
    }
  }
};

namespace detail {

inline void validate_simplex_row(const Tensor& t, std::size_t row, const char* what) {
  double sum = 0.0;
  for (std::size_t j = 0; j < t.cols(); ++j) {
    const double v = t.rank() == 2 ? t.at(row, j) : t[j];
    if (v < -1e-9) throw std::invalid_argument(std::string(what) + ": negative probability");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument(std::string(what) + ": row does not sum to 1");
  }
}

inline void validate_simplex(const Tensor& t, const char* what) {
  const std::size_t rows = t.rank() == 2 ? t.rows() : 1;
  for (std::size_t i = 0; i < rows; ++i) validate_simplex_row(t, i, what);
}

inline double kl_terms(const double* p, const double* q, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pv = p[i] > kProbFloor ? p[i] : kProbFloor;
    const double qv = q[i] > kProbFloor ? q[i] : kProbFloor;
    s += p[i] * std::log(pv / qv);
  }
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Plain (value) operations
// ---------------------------------------------------------------------------

/// Mean over the batch of -log softmax(logits)[label].
inline double cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.rows() != labels.size()) {
    throw std::invalid_argument("cross_entropy: logits/labels shape mismatch");
  }
  const std::size_t b = logits.rows(), c = logits.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw std::invalid_argument("cross_entropy: label out of range");
    }
    double mx = logits.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
    double den = 0.0;
    for (std::size_t j = 0; j < c; ++j) den += std::exp(logits.at(i, j) - mx);
    total -= logits.at(i, static_cast<std::size_t>(labels[i])) - mx - std::log(den);
  }
  return total / static_cast<double>(b);
}

/// sum p log(p/q), both arguments floored at 1e-12 inside the log.
inline double kl_divergence(const Tensor& p, const Tensor& q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: length mismatch");
  detail::validate_simplex(p, "kl_divergence p");
  detail::validate_simplex(q, "kl_divergence q");
  return detail::kl_terms(p.data().data(), q.data().data(), p.size());
}

/// Generalized JSD of three distributions against their mean, batch-averaged.
/// Bounded by ln 3.
inline double jsd_consistency(const Tensor& p, const Tensor& p1, const Tensor& p2) {
  ensure_same_shape(p, p1, "jsd_consistency");
  ensure_same_shape(p, p2, "jsd_consistency");
  detail::validate_simplex(p, "jsd_consistency");
  detail::validate_simplex(p1, "jsd_consistency");
  detail::validate_simplex(p2, "jsd_consistency");
  const std::size_t rows = p.rank() == 2 ? p.rows() : 1;
  const std::size_t c = p.rank() == 2 ? p.cols() : p.size();
  double total = 0.0;
  std::vector<double> m(c);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* a = p.data().data() + i * c;
    const double* b = p1.data().data() + i * c;
    const double* d = p2.data().data() + i * c;
    for (std::size_t j = 0; j < c; ++j) m[j] = (a[j] + b[j] + d[j]) / 3.0;
    total += (detail::kl_terms(a, m.data(), c) + detail::kl_terms(b, m.data(), c) +
              detail::kl_terms(d, m.data(), c)) /
             3.0;
  }
  return total / static_cast<double>(rows);
}

// ---------------------------------------------------------------------------
// Graph-building operations
// ---------------------------------------------------------------------------

inline ad::Var ce_from_logits(const ad::Var& logits, const std::vector<int>& labels) {
  const std::size_t b = logits.value().rows(), c = logits.value().cols();
  if (b != labels.size()) throw std::invalid_argument("ce_from_logits: label count mismatch");
  std::vector<ad::WeightedEntry> entries;
  entries.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw std::invalid_argument("ce_from_logits: label out of range");
    }
    entries.push_back({i, static_cast<std::size_t>(labels[i]), -1.0 / static_cast<double>(b)});
  }
  return ad::weighted_entry_sum(ad::log_softmax_rows(logits), std::move(entries));
}

/// JSD consistency over three live probability batches.
inline ad::Var jsd_from_probs(const ad::Var& p0, const ad::Var& p1, const ad::Var& p2) {
  const auto rows = static_cast<double>(p0.value().rows());
  ad::Var m = ad::scale(ad::add(ad::add(p0, p1), p2), 1.0 / 3.0);
  ad::Var logm = ad::log_floored(m, kProbFloor);
  ad::Var total;
  for (const ad::Var& pv : {p0, p1, p2}) {
    ad::Var term = ad::sum_all(ad::mul(pv, ad::sub(ad::log_floored(pv, kProbFloor), logm)));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return ad::scale(total, 1.0 / (3.0 * rows));
}

inline ad::Var jsd_from_logits(const ad::Var& l0, const ad::Var& l1, const ad::Var& l2) {
  return jsd_from_probs(ad::softmax_rows(l0), ad::softmax_rows(l1), ad::softmax_rows(l2));
}

namespace detail {

inline Tensor offdiag_mask(std::size_t n) {
  Tensor m({n, n}, 1.0);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 0.0;
  return m;
}

}  // namespace detail

/// Supervised contrastive loss over the multiview batch I = orig ++ views
/// (both raw; rows are L2-normalized here). Plain unnormalized sum over anchors.
inline ad::Var supcon_from_raw(const ad::Var& orig_raw, const ad::Var& view_raw,
                               const std::vector<int>& labels, double tau_c) {
  const std::size_t b = labels.size();
  if (orig_raw.value().rows() != b || view_raw.value().rows() != b) {
    throw std::invalid_argument("supcon_from_raw: batch size mismatch");
  }
  const std::size_t n = 2 * b;
  ad::Var feats = ad::l2_normalize_rows(ad::concat_rows(orig_raw, view_raw));
  ad::Var sim = ad::scale(ad::matmul_nt(feats, feats), 1.0 / tau_c);
  ad::Var masked_exp = ad::mul(ad::vexp(sim), ad::Var::constant(detail::offdiag_mask(n)));
  ad::Var log_denom = ad::log_floored(ad::row_sum(masked_exp), kProbFloor);

  std::vector<ad::WeightedEntry> pos_entries;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> positives;
    for (std::size_t p = 0; p < n; ++p) {
      if (p != i && labels[p % b] == labels[i % b]) positives.push_back(p);
    }
    if (positives.empty()) {
      throw std::invalid_argument("supcon_from_raw: anchor with no positive pair");
    }
    const double w = -1.0 / static_cast<double>(positives.size());
    for (std::size_t p : positives) pos_entries.push_back({i, p, w});
  }
  return ad::add(ad::sum_all(log_denom), ad::weighted_entry_sum(sim, std::move(pos_entries)));
}

/// Frozen supervisory signal for the DCL regularizer: the multiview feature
/// matrix, the simple-anchor log-probability rows, and the per-anchor shift
/// used to stabilize both softmaxes. All detached.
struct DclTargets {
  Tensor support_features;  // 2B x d, unit rows
  Tensor p_full;            // B x 2B; column B+i zeroed for anchor i
  Tensor logp_full;         // B x 2B; log p over the support, 0 at column B+i
  Tensor shift;             // B x 1; max similarity logit per anchor
};

namespace detail {

inline Tensor normalize_rows_value(const Tensor& raw) {
  Tensor out = raw;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    double ss = 1e-24;
    for (std::size_t j = 0; j < out.cols(); ++j) ss += out.at(i, j) * out.at(i, j);
    const double inv = 1.0 / std::sqrt(ss);
    for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) *= inv;
  }
  return out;
}

}  // namespace detail

inline DclTargets make_dcl_targets(const Tensor& orig_raw, const Tensor& simple_raw,
                                   double tau_d) {
  const std::size_t b = orig_raw.rows(), d = orig_raw.cols();
  if (simple_raw.rows() != b || simple_raw.cols() != d) {
    throw std::invalid_argument("make_dcl_targets: shape mismatch");
  }
  const double inv_tau = 1.0 / tau_d;
  DclTargets t;
  t.support_features = Tensor({2 * b, d});
  const Tensor on = detail::normalize_rows_value(orig_raw);
  const Tensor sn = detail::normalize_rows_value(simple_raw);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      t.support_features.at(i, j) = on.at(i, j);
      t.support_features.at(b + i, j) = sn.at(i, j);
    }
  }
  t.p_full = Tensor({b, 2 * b}, 0.0);
  t.logp_full = Tensor({b, 2 * b}, 0.0);
  t.shift = Tensor({b, 1}, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    double mx = -1e300;
    std::vector<double> z(2 * b, 0.0);
    for (std::size_t j = 0; j < 2 * b; ++j) {
      if (j == b + i) continue;
      double dot = 0.0;
      for (std::size_t l = 0; l < d; ++l) dot += sn.at(i, l) * t.support_features.at(j, l);
      z[j] = dot * inv_tau;
      mx = std::max(mx, z[j]);
    }
    t.shift.at(i, 0) = mx;
    double den = 0.0;
    for (std::size_t j = 0; j < 2 * b; ++j) {
      if (j == b + i) continue;
      den += std::exp(z[j] - mx);
    }
    const double log_den = std::log(den > kProbFloor ? den : kProbFloor);
    for (std::size_t j = 0; j < 2 * b; ++j) {
      if (j == b + i) continue;
      t.p_full.at(i, j) = std::exp(z[j] - mx) / den;
      t.logp_full.at(i, j) = (z[j] - mx) - log_den;
    }
  }
  return t;
}

/// KL(p(.|simple) || p(.|complex)) summed over anchors; gradient flows only
/// through the complex anchor features. Support features and the supervisory
/// rows are constants of the optimization. The complex-anchor log-softmax
/// mirrors the supervisory computation step for step, so identical anchors
/// give exactly zero.
inline ad::Var dcl_from_raw(const ad::Var& complex_raw, const DclTargets& targets, double tau_d) {
  const std::size_t b = complex_raw.value().rows();
  if (targets.p_full.rows() != b) throw std::invalid_argument("dcl_from_raw: batch mismatch");
  const std::size_t n = targets.support_features.rows();  // 2B
  ad::Var anchors = ad::l2_normalize_rows(complex_raw);
  ad::Var q_logits = ad::sub_colvec(
      ad::scale(ad::matmul_nt(anchors, ad::Var::constant(targets.support_features)), 1.0 / tau_d),
      ad::Var::constant(targets.shift));
  Tensor mask({b, n}, 1.0);
  for (std::size_t i = 0; i < b; ++i) mask.at(i, b + i) = 0.0;
  ad::Var masked_exp = ad::mul(ad::vexp(q_logits), ad::Var::constant(mask));
  ad::Var log_denom = ad::log_floored(ad::row_sum(masked_exp), kProbFloor);
  ad::Var logq = ad::sub_colvec(q_logits, log_denom);
  // sum_ij p_ij (log p_ij - log q_ij); excluded columns carry p = log p = 0.
  return ad::sum_all(ad::mul(ad::Var::constant(targets.p_full),
                             ad::sub(ad::Var::constant(targets.logp_full), logq)));
}

// ---------------------------------------------------------------------------
// Spec-surface value wrappers
// ---------------------------------------------------------------------------

inline double supcon_loss(const ContrastiveBatch& batch, double tau_c) {
  batch.validate();
  return supcon_from_raw(ad::Var::constant(batch.original_features),
                         ad::Var::constant(batch.simple_features), batch.labels, tau_c)
      .scalar();
}

/// +SupCon ablation: complex views substituted directly into the multiview
/// batch in place of the simple views.
inline double supcon_loss_complex_substituted(const ContrastiveBatch& batch, double tau_c) {
  batch.validate();
  return supcon_from_raw(ad::Var::constant(batch.original_features),
                         ad::Var::constant(batch.complex_features), batch.labels, tau_c)
      .scalar();
}

/// Probability row over A''_i = I \ {simple_i} for a given anchor feature
/// (either the simple or the complex view of sample i). Support order is
/// I order with the excluded element removed.
inline Tensor similarity_distribution(const Tensor& anchor_feature, const ContrastiveBatch& batch,
                                      std::size_t anchor_index, double tau_d) {
  batch.validate();
  if (tau_d <= 0.0) throw std::invalid_argument("similarity_distribution: tau_d must be positive");
  const std::size_t b = batch.batch_size();
  const std::size_t d = batch.original_features.cols();
  if (anchor_index >= b) throw std::out_of_range("similarity_distribution: anchor index");
  if (anchor_feature.size() != d) {
    throw std::invalid_argument("similarity_distribution: anchor feature dim mismatch");
  }
  std::vector<double> z;
  z.reserve(2 * b - 1);
  double mx = -1e300;
  for (std::size_t j = 0; j < 2 * b; ++j) {
    if (j == b + anchor_index) continue;
    const Tensor& src = j < b ? batch.original_features : batch.simple_features;
    const std::size_t r = j < b ? j : j - b;
    double dot = 0.0;
    for (std::size_t l = 0; l < d; ++l) dot += anchor_feature[l] * src.at(r, l);
    z.push_back(dot / tau_d);
    mx = std::max(mx, z.back());
  }
  double den = 0.0;
  for (double v : z) den += std::exp(v - mx);
  Tensor out({z.size()});
  for (std::size_t j = 0; j < z.size(); ++j) out[j] = std::exp(z[j] - mx) / den;
  return out;
}

/// DCL regularizer over the batch: sum over anchors of KL(simple row || complex row).
inline double dcl_regularizer(const ContrastiveBatch& batch, double tau_d) {
  batch.validate();
  const DclTargets targets =
      make_dcl_targets(batch.original_features, batch.simple_features, tau_d);
  return dcl_from_raw(ad::Var::constant(batch.complex_features), targets, tau_d).scalar();
}

// ---------------------------------------------------------------------------
// Collaborative distillation
// ---------------------------------------------------------------------------

/// Batch-mean sum of KL(source || learner) over the given frozen source
/// probability matrices. Gradients reach only the learner's probabilities.
inline ad::Var collaborative_from_probs(const ad::Var& learner_probs,
                                        const std::vector<const Tensor*>& sources) {
  const std::size_t rows = learner_probs.value().rows();
  if (sources.empty()) return ad::Var::constant(Tensor::scalar(0.0));
  ad::Var log_q = ad::log_floored(learner_probs, kProbFloor);
  ad::Var total;
  for (const Tensor* src : sources) {
    ensure_same_shape(*src, learner_probs.value(), "collaborative_from_probs");
    Tensor log_p = *src;
    for (auto& v : log_p.data()) v = std::log(v > kProbFloor ? v : kProbFloor);
    ad::Var term = ad::sum_all(
        ad::mul(ad::Var::constant(*src), ad::sub(ad::Var::constant(std::move(log_p)), log_q)));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return ad::scale(total, 1.0 / static_cast<double>(rows));
}

/// Collaborative distillation for client k: sum_i M[k][i] * KL(phi_i || phi_k), averaged over the
/// public batch. The learner's own distribution is the second KL argument.
inline double collaborative_loss(std::size_t k, const std::vector<Tensor>& public_outputs,
                                 const std::vector<std::vector<int>>& matrix) {
  const std::size_t K = public_outputs.size();
  if (k >= K) throw std::out_of_range("collaborative_loss: client index");
  if (matrix.size() != K || matrix[k].size() != K) {
    throw std::invalid_argument("collaborative_loss: matrix row length does not match client count");
  }
  for (const auto& t : public_outputs) detail::validate_simplex(t, "collaborative_loss outputs");
  std::vector<const Tensor*> sources;
  for (std::size_t i = 0; i < K; ++i) {
    if (matrix[k][i] != 0) sources.push_back(&public_outputs[i]);
  }
  return collaborative_from_probs(ad::Var::constant(public_outputs[k]), sources).scalar();
}

// ---------------------------------------------------------------------------
// Composite local objective
// ---------------------------------------------------------------------------

struct LocalLossOptions {
  LossWeights weights;
  bool aug_enabled = true;
  bool dcl_enabled = true;
  bool supcon_substitute_complex = false;  // the +SupCon ablation
};

struct LocalLossResult {
  ad::Var total;
  double ce = 0.0;
  double jsd = 0.0;
  double supcon = 0.0;
  double dcl = 0.0;
};

/// l_local = l_ce + mu * l_jsd + l_c + gamma * l_d over one batch of views.
/// The contrastive sums are divided by |I| = 2B here so their magnitude is
/// comparable across batch sizes; the standalone operations report the raw
/// sums. Undefined view vars are allowed when the corresponding term
/// is disabled. `frozen_targets`, when given, replaces the internally
/// detached supervisory signal; finite-difference checks rely on this to hold
/// the signal fixed.
inline LocalLossResult local_loss(const ad::Var& logits_x, const ad::Var& feat_x_raw,
                                  const ad::Var& logits_x1, const ad::Var& logits_x2,
                                  const ad::Var& feat_complex_raw, const ad::Var& feat_simple_raw,
                                  const std::vector<int>& labels, const LocalLossOptions& opt,
                                  const DclTargets* frozen_targets = nullptr) {
  opt.weights.validate();
  const double inv_multiview = 1.0 / (2.0 * static_cast<double>(labels.size()));
  LocalLossResult out;
  ad::Var total = ce_from_logits(logits_x, labels);
  out.ce = total.scalar();

  if (opt.aug_enabled) {
    ad::Var jsd = jsd_from_logits(logits_x, logits_x1, logits_x2);
    out.jsd = jsd.scalar();
    total = ad::add(total, ad::scale(jsd, opt.weights.mu));
  }

  if (opt.dcl_enabled) {
    if (opt.supcon_substitute_complex) {
      ad::Var supcon = ad::scale(
          supcon_from_raw(feat_x_raw, feat_complex_raw, labels, opt.weights.tau_c), inv_multiview);
      out.supcon = supcon.scalar();
      total = ad::add(total, supcon);
    } else {
      ad::Var supcon = ad::scale(
          supcon_from_raw(feat_x_raw, feat_simple_raw, labels, opt.weights.tau_c), inv_multiview);
      out.supcon = supcon.scalar();
      total = ad::add(total, supcon);

      DclTargets local_targets;
      const DclTargets* targets = frozen_targets;
      if (targets == nullptr) {
        local_targets =
            make_dcl_targets(feat_x_raw.value(), feat_simple_raw.value(), opt.weights.tau_d);
        targets = &local_targets;
      }
      ad::Var dcl =
          ad::scale(dcl_from_raw(feat_complex_raw, *targets, opt.weights.tau_d), inv_multiview);
      out.dcl = dcl.scalar();
      total = ad::add(total, ad::scale(dcl, opt.weights.gamma));
    }
  }

  out.total = total;
  return out;
}

}  // namespace rahfl::losses
