#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rahfl/losses.hpp"
#include "rahfl/model.hpp"
#include "rahfl/rng.hpp"

using namespace rahfl;
using losses::ContrastiveBatch;

namespace {

Tensor unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      t.at(i, j) = rng.normal();
      ss += t.at(i, j) * t.at(i, j);
    }
    const double inv = 1.0 / std::sqrt(ss);
    for (std::size_t j = 0; j < cols; ++j) t.at(i, j) *= inv;
  }
  return t;
}

Tensor simplex_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    const auto w = rng.dirichlet(1.0, cols);
    for (std::size_t j = 0; j < cols; ++j) t.at(i, j) = w[j];
  }
  return t;
}

ContrastiveBatch random_batch(std::size_t b, std::size_t d, std::size_t classes, Rng& rng) {
  ContrastiveBatch batch;
  batch.original_features = unit_rows(b, d, rng);
  batch.simple_features = unit_rows(b, d, rng);
  batch.complex_features = unit_rows(b, d, rng);
  batch.labels.resize(b);
  for (auto& l : batch.labels) l = static_cast<int>(rng.uniform_int(0, static_cast<long>(classes) - 1));
  return batch;
}

// Gram-Schmidt orthonormal matrix for the rotation-invariance property.
Tensor random_orthogonal(std::size_t d, Rng& rng) {
  Tensor q({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.normal();
    for (std::size_t k = 0; k < i; ++k) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += v[j] * q.at(k, j);
      for (std::size_t j = 0; j < d; ++j) v[j] -= dot * q.at(k, j);
    }
    double nrm = 0.0;
    for (double x : v) nrm += x * x;
    nrm = std::sqrt(nrm);
    for (std::size_t j = 0; j < d; ++j) q.at(i, j) = v[j] / nrm;
  }
  return q;
}

Tensor matmul_plain(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k)
      for (std::size_t j = 0; j < b.cols(); ++j) out.at(i, j) += a.at(i, k) * b.at(k, j);
  return out;
}

}  // namespace

TEST_CASE("cross_entropy: uniform logits give log C") {
  const Tensor logits({3, 5}, 0.0);
  CHECK(losses::cross_entropy(logits, {0, 3, 4}) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("cross_entropy: confident correct logit is nearly free") {
  const Tensor logits = Tensor::from({1, 2}, {20.0, 0.0});
  const double expected = std::log1p(std::exp(-20.0));  // ~2.06e-9
  CHECK(losses::cross_entropy(logits, {0}) == doctest::Approx(expected).epsilon(1e-9));
  CHECK(losses::cross_entropy(logits, {0}) < 1e-8);
}

TEST_CASE("cross_entropy: two-way tie against the wrong label costs ln 2") {
  const Tensor logits = Tensor::from({1, 2}, {0.0, 0.0});
  CHECK(losses::cross_entropy(logits, {1}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("cross_entropy: label out of range rejected") {
  const Tensor logits({2, 3}, 0.0);
  CHECK_THROWS_AS((void)losses::cross_entropy(logits, {0, 3}), std::invalid_argument);
}

TEST_CASE("kl_divergence: zero at identical distributions, exactly") {
  Rng rng(21);
  const Tensor p = simplex_rows(1, 4, rng);
  CHECK(losses::kl_divergence(p, p) == 0.0);
}

TEST_CASE("kl_divergence: (1,0) vs (.5,.5) is ln 2") {
  const Tensor p = Tensor::row({1.0, 0.0});
  const Tensor q = Tensor::row({0.5, 0.5});
  CHECK(std::abs(losses::kl_divergence(p, q) - std::log(2.0)) < 1e-9);
}

TEST_CASE("kl_divergence: floor keeps the reverse direction finite") {
  const Tensor p = Tensor::row({0.5, 0.5});
  const Tensor q = Tensor::row({1.0, 0.0});
  const double expected = 0.5 * std::log(0.5 / 1.0) + 0.5 * std::log(0.5 / 1e-12);
  CHECK(losses::kl_divergence(p, q) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("kl_divergence: non-simplex input rejected") {
  const Tensor bad = Tensor::row({0.7, 0.7});
  const Tensor ok = Tensor::row({0.5, 0.5});
  CHECK_THROWS_AS((void)losses::kl_divergence(bad, ok), std::invalid_argument);
  CHECK_THROWS_AS((void)losses::kl_divergence(ok, bad), std::invalid_argument);
}

TEST_CASE("jsd_consistency: zero on an identical dyadic triple, exactly") {
  const Tensor p = Tensor::row({0.5, 0.25, 0.25});
  CHECK(losses::jsd_consistency(p, p, p) == 0.0);
}

TEST_CASE("jsd_consistency: hand-computed (1,0),(0,1),(.5,.5) case") {
  const Tensor a = Tensor::row({1.0, 0.0});
  const Tensor b = Tensor::row({0.0, 1.0});
  const Tensor c = Tensor::row({0.5, 0.5});
  const double expected = 2.0 * std::log(2.0) / 3.0;
  CHECK(losses::jsd_consistency(a, b, c) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("jsd_consistency: symmetric in its three arguments") {
  Rng rng(22);
  const Tensor a = simplex_rows(2, 4, rng);
  const Tensor b = simplex_rows(2, 4, rng);
  const Tensor c = simplex_rows(2, 4, rng);
  const double ref = losses::jsd_consistency(a, b, c);
  CHECK(losses::jsd_consistency(a, c, b) == doctest::Approx(ref).epsilon(1e-12));
  CHECK(losses::jsd_consistency(b, a, c) == doctest::Approx(ref).epsilon(1e-12));
  CHECK(losses::jsd_consistency(c, b, a) == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("jsd_consistency: simplex violations are rejected") {
  const Tensor ok = Tensor::row({0.5, 0.5});
  const Tensor bad = Tensor::row({0.9, 0.3});
  CHECK_THROWS_AS((void)losses::jsd_consistency(bad, ok, ok), std::invalid_argument);
  CHECK_THROWS_AS((void)losses::jsd_consistency(ok, ok, bad), std::invalid_argument);
}

TEST_CASE("jsd_consistency: bounded by ln 3 on 1000 random triples") {
  Rng rng(23);
  const double bound = std::log(3.0) + 1e-9;
  for (int trial = 0; trial < 1000; ++trial) {
    const Tensor a = simplex_rows(1, 3, rng);
    const Tensor b = simplex_rows(1, 3, rng);
    const Tensor c = simplex_rows(1, 3, rng);
    const double v = losses::jsd_consistency(a, b, c);
    CHECK(v >= 0.0);
    CHECK(v <= bound);
  }
}

TEST_CASE("supcon_loss: all-identical features cost 2B ln(2B-1)") {
  ContrastiveBatch batch;
  Tensor f({2, 3}, 0.0);
  f.at(0, 0) = 1.0;
  f.at(1, 0) = 1.0;
  batch.original_features = f;
  batch.simple_features = f;
  batch.complex_features = f;
  batch.labels = {0, 0};
  const double v = losses::supcon_loss(batch, 0.2);
  CHECK(v == doctest::Approx(4.0 * std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("supcon_loss: orthogonal two-class case has the closed form") {
  ContrastiveBatch batch;
  Tensor f({2, 2}, 0.0);
  f.at(0, 0) = 1.0;  // class 0 along e1
  f.at(1, 1) = 1.0;  // class 1 along e2
  batch.original_features = f;
  batch.simple_features = f;  // f''_i = f_i
  batch.complex_features = f;
  batch.labels = {0, 1};
  const double per_anchor = std::log1p(2.0 * std::exp(-5.0));  // tau_c = 0.2
  const double v = losses::supcon_loss(batch, 0.2);
  CHECK(v == doctest::Approx(4.0 * per_anchor).epsilon(1e-9));
}

TEST_CASE("supcon: scaling raw features by 7 changes nothing") {
  Rng rng(24);
  const Tensor orig = unit_rows(3, 4, rng);
  const Tensor simple = unit_rows(3, 4, rng);
  const std::vector<int> labels = {0, 1, 0};
  const double base = losses::supcon_from_raw(ad::Var::constant(orig), ad::Var::constant(simple),
                                              labels, 0.2)
                          .scalar();
  Tensor orig7 = orig, simple7 = simple;
  for (auto& v : orig7.data()) v *= 7.0;
  for (auto& v : simple7.data()) v *= 7.0;
  const double scaled = losses::supcon_from_raw(ad::Var::constant(orig7),
                                                ad::Var::constant(simple7), labels, 0.2)
                            .scalar();
  CHECK(scaled == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("supcon: invariant under a common orthogonal rotation") {
  Rng rng(25);
  ContrastiveBatch batch = random_batch(4, 6, 2, rng);
  const double base = losses::supcon_loss(batch, 0.2);
  const Tensor q = random_orthogonal(6, rng);
  ContrastiveBatch rotated = batch;
  rotated.original_features = matmul_plain(batch.original_features, q);
  rotated.simple_features = matmul_plain(batch.simple_features, q);
  rotated.complex_features = matmul_plain(batch.complex_features, q);
  // rotation preserves norms up to fp error; renormalize to satisfy the batch contract
  rotated.original_features = losses::detail::normalize_rows_value(rotated.original_features);
  rotated.simple_features = losses::detail::normalize_rows_value(rotated.simple_features);
  rotated.complex_features = losses::detail::normalize_rows_value(rotated.complex_features);
  CHECK(std::abs(losses::supcon_loss(rotated, 0.2) - base) <= 1e-9);
}

TEST_CASE("similarity_distribution: identical features give the uniform row") {
  ContrastiveBatch batch;
  Tensor f({3, 2}, 0.0);
  for (std::size_t i = 0; i < 3; ++i) f.at(i, 0) = 1.0;
  batch.original_features = f;
  batch.simple_features = f;
  batch.complex_features = f;
  batch.labels = {0, 1, 2};
  const Tensor row = losses::similarity_distribution(f.row_copy(0), batch, 0, 0.2);
  REQUIRE(row.size() == 5);  // 2B - 1
  for (std::size_t j = 0; j < row.size(); ++j) {
    CHECK(row[j] == doctest::Approx(1.0 / 5.0).epsilon(1e-12));
  }
}

TEST_CASE("similarity_distribution: sums to 1 and matches a brute-force loop") {
  Rng rng(26);
  ContrastiveBatch batch = random_batch(2, 3, 2, rng);
  const double tau = 0.2;
  for (std::size_t anchor = 0; anchor < 2; ++anchor) {
    const Tensor anchor_feat = batch.complex_features.row_copy(anchor);
    const Tensor row = losses::similarity_distribution(anchor_feat, batch, anchor, tau);
    double sum = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) sum += row[j];
    CHECK(std::abs(sum - 1.0) < 1e-12);

    // brute force over the 3 support elements (I order minus the simple view)
    std::vector<double> raw;
    for (std::size_t j = 0; j < 4; ++j) {
      if (j == 2 + anchor) continue;
      const Tensor& src = j < 2 ? batch.original_features : batch.simple_features;
      const std::size_t r = j < 2 ? j : j - 2;
      double dot = 0.0;
      for (std::size_t l = 0; l < 3; ++l) dot += anchor_feat[l] * src.at(r, l);
      raw.push_back(std::exp(dot / tau));
    }
    double den = 0.0;
    for (double v : raw) den += v;
    for (std::size_t j = 0; j < raw.size(); ++j) {
      CHECK(std::abs(row[j] - raw[j] / den) < 1e-12);
    }
  }
}

TEST_CASE("dcl_regularizer: exactly zero when complex equals simple") {
  Rng rng(27);
  ContrastiveBatch batch = random_batch(3, 5, 2, rng);
  batch.complex_features = batch.simple_features;
  CHECK(losses::dcl_regularizer(batch, 0.2) == 0.0);
}

TEST_CASE("dcl_regularizer: nonnegative on 100 random batches") {
  Rng rng(28);
  for (int trial = 0; trial < 100; ++trial) {
    Rng trng = rng.split(trial);
    ContrastiveBatch batch = random_batch(2 + trial % 4, 3 + trial % 3, 3, trng);
    CHECK(losses::dcl_regularizer(batch, 0.2) >= 0.0);
  }
}

TEST_CASE("dcl_regularizer: equals the composed per-anchor KL oracle") {
  Rng rng(29);
  ContrastiveBatch batch = random_batch(2, 4, 2, rng);
  const double tau = 0.2;
  double expected = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    const Tensor p =
        losses::similarity_distribution(batch.simple_features.row_copy(i), batch, i, tau);
    const Tensor q =
        losses::similarity_distribution(batch.complex_features.row_copy(i), batch, i, tau);
    expected += losses::kl_divergence(p, q);
  }
  CHECK(losses::dcl_regularizer(batch, tau) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("dcl: gradient hits only the complex features") {
  Rng rng(30);
  const Tensor orig = unit_rows(3, 4, rng);
  const Tensor simple = unit_rows(3, 4, rng);
  const Tensor complex_raw = unit_rows(3, 4, rng);
  ad::Var vo = ad::Var::leaf(orig);
  ad::Var vs = ad::Var::leaf(simple);
  ad::Var vc = ad::Var::leaf(complex_raw);
  const losses::DclTargets targets = losses::make_dcl_targets(vo.value(), vs.value(), 0.2);
  ad::Var loss = losses::dcl_from_raw(vc, targets, 0.2);
  ad::backward(loss);
  const Tensor go = vo.grad();
  const Tensor gs = vs.grad();
  const Tensor gc = vc.grad();
  for (double v : go.data()) CHECK(v == 0.0);
  for (double v : gs.data()) CHECK(v == 0.0);
  double complex_grad_norm = 0.0;
  for (double v : gc.data()) complex_grad_norm += std::abs(v);
  CHECK(complex_grad_norm > 0.0);
}

TEST_CASE("dcl: analytic gradient matches finite differences") {
  Rng rng(31);
  const Tensor orig = unit_rows(3, 4, rng);
  const Tensor simple = unit_rows(3, 4, rng);
  const Tensor complex_raw = unit_rows(3, 4, rng);
  const losses::DclTargets targets = losses::make_dcl_targets(orig, simple, 0.2);

  ad::Var vc = ad::Var::leaf(complex_raw);
  ad::backward(losses::dcl_from_raw(vc, targets, 0.2));
  const Tensor analytic = vc.grad();

  auto loss_fn = [&](const std::vector<double>& flat) {
    const Tensor t = Tensor::from({3, 4}, flat);
    return losses::dcl_from_raw(ad::Var::constant(t), targets, 0.2).scalar();
  };
  const auto numeric = ad::finite_diff_grad(loss_fn, complex_raw.data(), 1e-5);
  CHECK(ad::max_rel_error(std::vector<double>(analytic.data()), numeric) <= 1e-4);
}

TEST_CASE("collaborative_loss: all-zero row costs nothing") {
  Rng rng(32);
  std::vector<Tensor> outputs = {simplex_rows(4, 3, rng), simplex_rows(4, 3, rng)};
  const std::vector<std::vector<int>> m = {{0, 0}, {0, 0}};
  CHECK(losses::collaborative_loss(0, outputs, m) == 0.0);
}

TEST_CASE("collaborative_loss: zero against an identical source, exactly") {
  Rng rng(33);
  const Tensor own = simplex_rows(4, 3, rng);
  std::vector<Tensor> outputs = {own, own};
  const std::vector<std::vector<int>> m = {{0, 1}, {0, 0}};
  CHECK(losses::collaborative_loss(0, outputs, m) == 0.0);
}

TEST_CASE("collaborative_loss: K=3 hand case composes the kl oracle") {
  Rng rng(34);
  std::vector<Tensor> outputs = {simplex_rows(1, 4, rng), simplex_rows(1, 4, rng),
                                 simplex_rows(1, 4, rng)};
  const std::vector<std::vector<int>> m = {{0, 0, 0}, {1, 0, 1}, {0, 0, 0}};
  const double expected = losses::kl_divergence(outputs[0], outputs[1]) +
                          losses::kl_divergence(outputs[2], outputs[1]);
  CHECK(losses::collaborative_loss(1, outputs, m) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("collaborative_loss: wrong matrix row length rejected") {
  Rng rng(35);
  std::vector<Tensor> outputs = {simplex_rows(2, 3, rng), simplex_rows(2, 3, rng)};
  const std::vector<std::vector<int>> m = {{0, 1, 1}, {1, 0, 0}};
  CHECK_THROWS_AS((void)losses::collaborative_loss(0, outputs, m), std::invalid_argument);
}

TEST_CASE("collaborative gradients reach only the learner") {
  Rng rng(36);
  const Tensor src = simplex_rows(3, 4, rng);
  Tensor logits({3, 4});
  for (auto& v : logits.data()) v = rng.normal();
  ad::Var learner = ad::Var::leaf(logits);
  ad::Var loss = losses::collaborative_from_probs(ad::softmax_rows(learner), {&src});
  ad::backward(loss);
  const Tensor gl = learner.grad();
  double grad_norm = 0.0;
  for (double v : gl.data()) grad_norm += std::abs(v);
  CHECK(grad_norm > 0.0);  // sources are plain tensors: structurally detached
}

TEST_CASE("local_loss: degenerate identical-feature batch gives ce + ln(2B-1)") {
  // Model outputs engineered so every feature row is the same unit vector.
  // The raw contrastive sum is 2B ln(2B-1); the composite divides by |I| = 2B.
  const std::size_t b = 2, d = 3, c = 2;
  Tensor feat({b, d}, 0.0);
  for (std::size_t i = 0; i < b; ++i) feat.at(i, 0) = 1.0;
  Rng rng(37);
  Tensor logits({b, c});
  for (auto& v : logits.data()) v = rng.normal();
  const std::vector<int> labels = {0, 0};

  losses::LocalLossOptions opt;
  opt.weights.mu = 0.0;
  opt.weights.gamma = 0.0;
  opt.aug_enabled = true;
  opt.dcl_enabled = true;
  const auto result = losses::local_loss(
      ad::Var::constant(logits), ad::Var::constant(feat), ad::Var::constant(logits),
      ad::Var::constant(logits), ad::Var::constant(feat), ad::Var::constant(feat), labels, opt);
  const double raw_supcon = 2.0 * b * std::log(2.0 * b - 1.0);
  const double expected =
      losses::cross_entropy(logits, labels) + raw_supcon / (2.0 * static_cast<double>(b));
  CHECK(result.total.scalar() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("local_loss: total is exactly the weighted sum of its parts") {
  Rng rng(38);
  const std::size_t b = 3, d = 4, c = 3;
  Tensor logits_x({b, c}), logits_x1({b, c}), logits_x2({b, c});
  for (auto* t : {&logits_x, &logits_x1, &logits_x2}) {
    for (auto& v : t->data()) v = rng.normal();
  }
  const Tensor fx = unit_rows(b, d, rng);
  const Tensor fc = unit_rows(b, d, rng);
  const Tensor fs = unit_rows(b, d, rng);
  const std::vector<int> labels = {0, 2, 1};

  losses::LocalLossOptions opt;
  opt.weights.mu = 12.0;
  opt.weights.gamma = 1.0;
  const auto result = losses::local_loss(
      ad::Var::constant(logits_x), ad::Var::constant(fx), ad::Var::constant(logits_x1),
      ad::Var::constant(logits_x2), ad::Var::constant(fc), ad::Var::constant(fs), labels, opt);
  const double recomposed =
      result.ce + opt.weights.mu * result.jsd + result.supcon + opt.weights.gamma * result.dcl;
  CHECK(result.total.scalar() == doctest::Approx(recomposed).epsilon(1e-12));
  CHECK(result.ce >= 0.0);
  CHECK(result.jsd >= 0.0);
  CHECK(result.dcl >= 0.0);
}

TEST_CASE("local_loss: full composite matches finite differences on a tiny model") {
  Rng rng(39);
  const std::size_t b = 4, in_dim = 6;
  ModelSpec spec{in_dim, {8}, 3};
  Model model = Model::init(spec, rng.split("init"));
  Tensor x({b, in_dim}), x1({b, in_dim}), x2({b, in_dim}), xpp({b, in_dim});
  for (auto* t : {&x, &x1, &x2, &xpp}) {
    for (auto& v : t->data()) v = rng.uniform(0.0, 1.0);
  }
  const std::vector<int> labels = {0, 1, 2, 0};
  losses::LocalLossOptions opt;

  // Freeze the DCL supervisory signal at the base point, as the optimizer does.
  const ForwardResult base_x = model.forward(x);
  const ForwardResult base_xpp = model.forward(xpp);
  const losses::DclTargets targets =
      losses::make_dcl_targets(base_x.features, base_xpp.features, opt.weights.tau_d);

  auto build = [&](const Model& m) {
    std::vector<ad::Var> params = m.leaf_param_vars();
    ForwardVars on_x = Model::forward_vars(spec, params, ad::Var::constant(x));
    ForwardVars on_x1 = Model::forward_vars(spec, params, ad::Var::constant(x1));
    ForwardVars on_x2 = Model::forward_vars(spec, params, ad::Var::constant(x2));
    ForwardVars on_xpp = Model::forward_vars(spec, params, ad::Var::constant(xpp));
    auto result = losses::local_loss(on_x.logits, on_x.features, on_x1.logits, on_x2.logits,
                                     on_x1.features, on_xpp.features, labels, opt, &targets);
    return std::make_pair(result.total, params);
  };

  auto [loss, params] = build(model);
  ad::backward(loss);
  std::vector<double> analytic;
  for (const auto& p : params) {
    const Tensor g = p.grad();
    analytic.insert(analytic.end(), g.data().begin(), g.data().end());
  }

  Model probe = model;
  auto loss_fn = [&](const std::vector<double>& flat) {
    probe.unflatten_params(flat);
    return build(probe).first.scalar();
  };
  const auto numeric = ad::finite_diff_grad(loss_fn, model.flatten_params(), 1e-5);
  CHECK(ad::max_rel_error(analytic, numeric) <= 1e-4);
}
