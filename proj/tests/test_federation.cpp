#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rahfl/config.hpp"
#include "rahfl/federation.hpp"
#include "rahfl/losses.hpp"
#include "rahfl/rng.hpp"

using namespace rahfl;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.clients = 2;
  cfg.image_side = 16;
  cfg.num_classes = 4;
  cfg.private_size = 60;
  cfg.public_size = 40;
  cfg.eval_size = 40;
  cfg.test_size = 80;
  cfg.rounds = 2;
  cfg.batch_size = 16;
  cfg.pretrain_epochs = 1;
  cfg.arch_list = {"24-12", "16"};
  cfg.corruption_rate = 0.5;
  return cfg;
}

ClientState make_client(int id, std::size_t n, const ModelSpec& spec, double lr,
                        std::uint64_t seed, double xi = 0.0) {
  ClientState c;
  c.id = id;
  c.model = Model::init(spec, Rng(seed).split("init").split(static_cast<std::uint64_t>(id)));
  c.adam = AdamState::init_for(c.model, lr);
  Dataset d = make_synthetic_dataset(n, spec.num_classes, 16, Rng(seed).split("data").split(static_cast<std::uint64_t>(id)));
  c.private_data = xi > 0.0 ? corrupt_dataset(d, xi, Rng(seed).split("corrupt")) : d;
  c.local_epochs = 1;
  return c;
}

bool params_equal(const Model& a, const Model& b) { return a.flatten_params() == b.flatten_params(); }

}  // namespace

TEST_CASE("build_transfer_matrix: the worked three-client example") {
  const KnowledgeMatrix m = build_transfer_matrix({0.8, 0.6, 0.7});
  const std::vector<std::vector<int>> expected = {{0, 0, 0}, {1, 0, 1}, {1, 0, 0}};
  CHECK(m.entries == expected);
}

TEST_CASE("build_transfer_matrix: equal accuracies give all off-diagonal ones") {
  const KnowledgeMatrix m = build_transfer_matrix({0.5, 0.5, 0.5, 0.5});
  for (std::size_t p = 0; p < 4; ++p) {
    for (std::size_t q = 0; q < 4; ++q) CHECK(m.entries[p][q] == (p == q ? 0 : 1));
  }
  CHECK(m.ones_count() == 12);
}

TEST_CASE("build_transfer_matrix: distinct accuracies give K(K-1)/2 ones") {
  const KnowledgeMatrix m = build_transfer_matrix({0.31, 0.62, 0.18, 0.95, 0.44, 0.73});
  CHECK(m.ones_count() == 15);  // 6*5/2
  // strict maximum: learns from no one, everyone learns from it
  for (int v : m.entries[3]) CHECK(v == 0);
  for (std::size_t p = 0; p < 6; ++p) {
    if (p != 3) CHECK(m.entries[p][3] == 1);
  }
}

TEST_CASE("build_transfer_matrix: t tied pairs add t extra ones") {
  // ties: (0,1) and (2,3) -> K(K-1)/2 + 2 = 8
  const KnowledgeMatrix m = build_transfer_matrix({0.5, 0.5, 0.7, 0.7});
  CHECK(m.ones_count() == 4 * 3 / 2 + 2);
  m.validate();
}

TEST_CASE("build_transfer_matrix: random vectors keep the antisymmetry count") {
  Rng rng(100);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t K = 2 + static_cast<std::size_t>(rng.uniform_int(0, 18));
    std::vector<double> accs(K);
    for (auto& a : accs) a = rng.next_double();
    bool distinct = true;
    for (std::size_t i = 0; i < K && distinct; ++i) {
      for (std::size_t j = i + 1; j < K; ++j) {
        if (accs[i] == accs[j]) distinct = false;
      }
    }
    if (!distinct) continue;
    const KnowledgeMatrix m = build_transfer_matrix(accs);
    CHECK(m.ones_count() == static_cast<long>(K * (K - 1) / 2));
    m.validate();
  }
}

TEST_CASE("auto_local_epochs: floor(N0/Nk) with a floor of one") {
  CHECK(auto_local_epochs(400, 600) == 1);
  CHECK(auto_local_epochs(5000, 10000) == 1);
  CHECK(auto_local_epochs(10000, 2000) == 5);
}

TEST_CASE("evaluate: a memorizing model scores 1.0") {
  ModelSpec spec{256, {32}, 4};
  ClientState c = make_client(0, 10, spec, 0.01, 101);
  TrainContext ctx;
  ctx.master = Rng(101);
  ctx.batch_size = 10;
  pretrain(c, 120, ctx, false);
  CHECK(evaluate(c.model, c.private_data) == 1.0);
}

TEST_CASE("evaluate: random init sits near chance on balanced data") {
  ModelSpec spec{256, {32}, 4};
  Model m = Model::init(spec, Rng(102));
  const Dataset d = make_synthetic_dataset(2000, 4, 16, Rng(103));
  const double acc = evaluate(m, d);
  CHECK(acc >= 0.20);
  CHECK(acc <= 0.30);
}

TEST_CASE("evaluate: constant logits predict the lowest class index") {
  ModelSpec spec{256, {8}, 4};
  Model m = Model::init(spec, Rng(104));
  for (Tensor* t : m.param_list()) {
    for (auto& v : t->data()) v = 0.0;
  }
  // make class 0 modal: counts 5,2,3,2
  Dataset d = make_synthetic_dataset(12, 4, 16, Rng(105));
  d.examples[1].label = 0;
  d.examples[11].label = 0;
  std::vector<int> counts(4, 0);
  for (const auto& e : d.examples) counts[static_cast<std::size_t>(e.label)] += 1;
  const double max_freq = *std::max_element(counts.begin(), counts.end()) / 12.0;
  CHECK(evaluate(m, d) == doctest::Approx(max_freq));
}

TEST_CASE("evaluate: unlabeled data is rejected") {
  ModelSpec spec{256, {8}, 4};
  Model m = Model::init(spec, Rng(106));
  const Dataset d = make_synthetic_dataset(10, 4, 16, Rng(107)).without_labels();
  CHECK_THROWS_AS((void)evaluate(m, d), std::invalid_argument);
}

TEST_CASE("pretrain: zero epochs leave parameters untouched") {
  ModelSpec spec{256, {16}, 4};
  ClientState c = make_client(0, 20, spec, 0.001, 108);
  const auto before = c.model.flatten_params();
  TrainContext ctx;
  ctx.master = Rng(108);
  pretrain(c, 0, ctx, false);
  CHECK(c.model.flatten_params() == before);
  CHECK(c.adam.step_count == 0);
}

TEST_CASE("pretrain: 40 epochs on 200 clean examples memorize to 90 percent") {
  ModelSpec spec{256, {64, 32}, 4};
  ClientState c = make_client(0, 200, spec, 0.001, 109);
  TrainContext ctx;
  ctx.master = Rng(109);
  ctx.batch_size = 32;
  pretrain(c, 40, ctx, false);
  CHECK(evaluate(c.model, c.private_data) >= 0.90);
}

TEST_CASE("pretrain: per-epoch loss is mostly non-increasing") {
  for (std::uint64_t seed : {110ull, 111ull, 112ull}) {
    ModelSpec spec{256, {24}, 4};
    ClientState c = make_client(0, 96, spec, 0.001, seed);
    TrainContext ctx;
    ctx.master = Rng(seed);
    ctx.batch_size = 32;
    std::vector<EpochStats> per_epoch;
    pretrain(c, 15, ctx, false, &per_epoch);
    REQUIRE(per_epoch.size() == 15);
    int non_increasing = 0;
    for (std::size_t e = 1; e < per_epoch.size(); ++e) {
      if (per_epoch[e].ce <= per_epoch[e - 1].ce) ++non_increasing;
    }
    CHECK(static_cast<double>(non_increasing) / 14.0 >= 0.8);
  }
}

TEST_CASE("local_update: disabled toggles reduce to plain cross-entropy training") {
  ModelSpec spec{256, {16}, 4};
  ClientState trained = make_client(0, 48, spec, 0.001, 113, 0.5);
  ClientState oracle = trained;  // identical start

  TrainContext ctx;
  ctx.master = Rng(7101);
  ctx.batch_size = 16;
  ctx.aug_enabled = false;
  ctx.dcl_enabled = false;
  local_update(trained, "local", 3, 2, ctx);

  // independent CE-only loop driven by the same stream layout
  for (long e = 0; e < 2; ++e) {
    Rng estream = epoch_stream(ctx.master, "local", oracle.id, 3, e);
    std::vector<std::size_t> order(oracle.private_data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = estream.split("shuffle");
    shuffle_rng.shuffle(order);
    for (std::size_t lo = 0; lo < order.size(); lo += ctx.batch_size) {
      const std::size_t hi = std::min(lo + ctx.batch_size, order.size());
      Tensor batch({hi - lo, 256});
      std::vector<int> labels(hi - lo);
      for (std::size_t r = lo; r < hi; ++r) {
        write_image_row(oracle.private_data.image(order[r]), batch, r - lo);
        labels[r - lo] = oracle.private_data.label(order[r]);
      }
      std::vector<ad::Var> params = oracle.model.leaf_param_vars();
      ForwardVars out = Model::forward_vars(spec, params, ad::Var::constant(batch));
      ad::Var loss = losses::ce_from_logits(out.logits, labels);
      ad::backward(loss);
      std::vector<Tensor> grads;
      for (const auto& p : params) grads.push_back(p.grad());
      oracle.adam.step(oracle.model.param_list(), grads);
    }
  }
  CHECK(params_equal(trained.model, oracle.model));
}

TEST_CASE("local_update: batch of one runs the full composite") {
  ModelSpec spec{256, {12}, 4};
  ClientState c = make_client(0, 4, spec, 0.001, 114);
  TrainContext ctx;
  ctx.master = Rng(114);
  ctx.batch_size = 1;
  ctx.aug_enabled = true;
  ctx.dcl_enabled = true;
  const EpochStats stats = local_update(c, "local", 0, 1, ctx);
  CHECK(stats.batches == 4);
  CHECK(std::isfinite(stats.ce));
  CHECK(std::isfinite(stats.dcl));
  for (const Tensor* t : c.model.param_list()) CHECK(t->all_finite());
}

TEST_CASE("local_update: composite loss decreases over five epochs") {
  for (std::uint64_t seed : {115ull, 116ull, 117ull}) {
    ModelSpec spec{256, {24}, 4};
    ClientState c = make_client(0, 64, spec, 0.001, seed, 0.5);
    TrainContext ctx;
    ctx.master = Rng(seed);
    ctx.batch_size = 32;
    ctx.aug_enabled = true;
    ctx.dcl_enabled = true;
    std::vector<double> totals;
    for (long round = 0; round < 5; ++round) {
      const EpochStats s = local_update(c, "local", round, 1, ctx);
      totals.push_back(s.ce + ctx.weights.mu * s.jsd + s.supcon + ctx.weights.gamma * s.dcl);
    }
    CHECK(totals.back() < totals.front());
  }
}

TEST_CASE("private data instrumentation counts foreign readers") {
  ModelSpec spec{256, {8}, 4};
  ClientState c = make_client(3, 10, spec, 0.001, 118);
  Counters counters;
  (void)private_data_of(c, 3, counters);
  CHECK(counters.cross_private_reads.load() == 0);
  (void)private_data_of(c, 1, counters);
  CHECK(counters.cross_private_reads.load() == 1);
}

TEST_CASE("collaborative_round: K=1 reduces to the local update") {
  ModelSpec spec{256, {12}, 4};
  FederationState st;
  st.mode = Mode::asym_hfl;
  st.aug_enabled = false;
  st.dcl_enabled = false;
  st.batch_size = 16;
  st.master = Rng(119);
  st.clients.push_back(make_client(0, 24, spec, 0.001, 119));
  st.public_data = make_synthetic_dataset(16, 4, 16, Rng(120)).without_labels();
  st.eval_split = make_synthetic_dataset(16, 4, 16, Rng(121));
  st.test_clean = make_synthetic_dataset(16, 4, 16, Rng(122));
  st.test_corrupted = corrupt_dataset(st.test_clean, 1.0, Rng(123));

  ClientState oracle = st.clients[0];
  const RoundMetrics rm = collaborative_round(st, 0);
  CHECK(rm.matrix_ones == 0);
  CHECK(st.counters.kl_terms_total.load() == 0);
  CHECK(rm.loss_col[0] == 0.0);

  TrainContext ctx;
  ctx.master = Rng(119);
  ctx.batch_size = 16;
  local_update(oracle, "local", 0, 1, ctx);
  CHECK(params_equal(st.clients[0].model, oracle.model));
}

TEST_CASE("collaborative_round: symmetric mode evaluates K(K-1) KL terms per batch") {
  ModelSpec spec{256, {12}, 4};
  FederationState st;
  st.mode = Mode::hfl_symmetric;
  st.aug_enabled = false;
  st.dcl_enabled = false;
  st.batch_size = 16;
  st.master = Rng(124);
  for (int k = 0; k < 3; ++k) st.clients.push_back(make_client(k, 24, spec, 0.001, 124));
  st.public_data = make_synthetic_dataset(48, 4, 16, Rng(125)).without_labels();
  st.eval_split = make_synthetic_dataset(16, 4, 16, Rng(126));
  st.test_clean = make_synthetic_dataset(16, 4, 16, Rng(127));
  st.test_corrupted = corrupt_dataset(st.test_clean, 1.0, Rng(128));

  const RoundMetrics rm = collaborative_round(st, 0);
  const long batches = st.counters.public_batches_last_round.load();
  CHECK(batches == 3);  // 48 / 16
  CHECK(rm.matrix_ones == 6);
  CHECK(st.counters.kl_terms_last_round.load() == 6 * batches);
  CHECK(st.counters.snapshot_mutations.load() == 0);
}

TEST_CASE("collaborative_round: asymmetric KL count equals the matrix ones count") {
  ModelSpec specs[4] = {{256, {24, 12}, 4}, {256, {32}, 4}, {256, {16}, 4}, {256, {20, 10}, 4}};
  FederationState st;
  st.mode = Mode::asym_hfl;
  st.aug_enabled = false;
  st.dcl_enabled = false;
  st.batch_size = 16;
  st.master = Rng(129);
  for (int k = 0; k < 4; ++k) st.clients.push_back(make_client(k, 24, specs[k], 0.001, 129));
  st.public_data = make_synthetic_dataset(32, 4, 16, Rng(130)).without_labels();
  st.eval_split = make_synthetic_dataset(64, 4, 16, Rng(131));
  st.test_clean = make_synthetic_dataset(16, 4, 16, Rng(132));
  st.test_corrupted = corrupt_dataset(st.test_clean, 1.0, Rng(133));

  const RoundMetrics rm = collaborative_round(st, 0);
  const long batches = st.counters.public_batches_last_round.load();
  CHECK(st.counters.kl_terms_last_round.load() == rm.matrix_ones * batches);
  CHECK(rm.matrix_ones <= 12);
  CHECK(st.counters.snapshot_mutations.load() == 0);
  st.matrix.validate();
}

TEST_CASE("run_experiment: local_only never touches foreign outputs or data") {
  ExperimentConfig cfg = tiny_config();
  cfg.mode = "local_only";
  cfg.aug = false;
  cfg.dcl = false;
  const ExperimentResult result = run_experiment(cfg);
  CHECK(result.counters.source_output_reads == 0);
  CHECK(result.counters.kl_terms_total == 0);
  CHECK(result.counters.cross_private_reads == 0);
  REQUIRE(result.metrics.size() == 2);
  for (const auto& rm : result.metrics) {
    CHECK(rm.matrix_ones == 0);
    for (double v : rm.loss_col) CHECK(v == 0.0);
  }
}

TEST_CASE("run_experiment: identical config and seed give identical metrics") {
  ExperimentConfig cfg = tiny_config();
  cfg.mode = "rahfl";
  const ExperimentResult a = run_experiment(cfg);
  const ExperimentResult b = run_experiment(cfg);
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t r = 0; r < a.metrics.size(); ++r) {
    CHECK(a.metrics[r].acc_clean == b.metrics[r].acc_clean);
    CHECK(a.metrics[r].acc_corrupt == b.metrics[r].acc_corrupt);
    CHECK(a.metrics[r].loss_ce == b.metrics[r].loss_ce);
    CHECK(a.metrics[r].loss_col == b.metrics[r].loss_col);
    CHECK(a.metrics[r].matrix_ones == b.metrics[r].matrix_ones);
  }
  CHECK(a.data_checksum == b.data_checksum);
}

TEST_CASE("pretrain: full composite loss is exercised when requested") {
  ModelSpec spec{256, {16}, 4};
  ClientState c = make_client(0, 16, spec, 0.001, 134, 0.5);
  TrainContext ctx;
  ctx.master = Rng(134);
  ctx.batch_size = 8;
  ctx.aug_enabled = true;
  ctx.dcl_enabled = true;
  const EpochStats s = pretrain(c, 1, ctx, true);
  CHECK(s.jsd > 0.0);
  CHECK(s.supcon > 0.0);
  for (const Tensor* t : c.model.param_list()) CHECK(t->all_finite());

  // plain pretraining from the same start must take a different trajectory
  ClientState plain = make_client(0, 16, spec, 0.001, 134, 0.5);
  const EpochStats sp = pretrain(plain, 1, ctx, false);
  CHECK(sp.jsd == 0.0);
  CHECK_FALSE(params_equal(c.model, plain.model));
}

TEST_CASE("run_experiment: repeated architectures scale to more clients") {
  ExperimentConfig cfg = tiny_config();
  cfg.mode = "asym_hfl";
  cfg.aug = false;
  cfg.dcl = false;
  cfg.clients = 6;
  cfg.private_size = 24;
  cfg.arch_list = {"24-12", "16", "20"};
  cfg.arch_repeats = {2, 2, 2};
  cfg.rounds = 1;
  const ExperimentResult result = run_experiment(cfg);
  REQUIRE(result.client_archs.size() == 6);
  CHECK(result.client_archs[0] == "24-12");
  CHECK(result.client_archs[1] == "24-12");
  CHECK(result.client_archs[2] == "16");
  CHECK(result.client_archs[5] == "20");
  CHECK(result.metrics.back().matrix_ones <= 30);
  CHECK(result.counters.cross_private_reads == 0);
}

TEST_CASE("run_experiment: counters are clean on a full rahfl run") {
  ExperimentConfig cfg = tiny_config();
  cfg.mode = "rahfl";
  const ExperimentResult result = run_experiment(cfg);
  CHECK(result.counters.cross_private_reads == 0);
  CHECK(result.counters.snapshot_mutations == 0);
  CHECK(result.counters.kl_terms_total > 0);
  REQUIRE(result.summary.size() == 3);  // 2 clients + avg
  const double mean = (result.summary[0].acc_clean_final + result.summary[1].acc_clean_final) / 2.0;
  CHECK(result.summary[2].acc_clean_final == doctest::Approx(mean).epsilon(1e-12));
}
