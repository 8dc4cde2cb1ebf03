#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "rahfl/augment.hpp"
#include "rahfl/config.hpp"
#include "rahfl/datagen.hpp"
#include "rahfl/losses.hpp"
#include "rahfl/model.hpp"
#include "rahfl/rng.hpp"

namespace rahfl {

enum class Mode { local_only, hfl_symmetric, asym_hfl, rahfl };

inline Mode mode_from_string(const std::string& s) {
  if (s == "local_only") return Mode::local_only;
  if (s == "hfl_symmetric") return Mode::hfl_symmetric;
  if (s == "asym_hfl") return Mode::asym_hfl;
  if (s == "rahfl") return Mode::rahfl;
  throw std::invalid_argument("unknown mode '" + s + "'");
}

inline void parallel_for(std::size_t n, unsigned threads,
                         const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const unsigned workers = std::min<unsigned>(threads, static_cast<unsigned>(n));
  std::vector<std::exception_ptr> errors(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= n) return;
          fn(i);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------
// Knowledge transfer matrix
// ---------------------------------------------------------------------------

struct KnowledgeMatrix {
  std::vector<std::vector<int>> entries;  // K x K, values in {0,1}, zero diagonal
  long round_index = 0;

  std::size_t num_clients() const { return entries.size(); }

  long ones_count() const {
    long n = 0;
    for (const auto& row : entries) {
      for (int v : row) n += v;
    }
    return n;
  }

  bool row_all_zero(std::size_t k) const {
    for (int v : entries[k]) {
      if (v != 0) return false;
    }
    return true;
  }

  void validate() const {
    for (std::size_t p = 0; p < entries.size(); ++p) {
      if (entries[p].size() != entries.size()) {
        throw std::logic_error("KnowledgeMatrix: not square");
      }
      for (std::size_t q = 0; q < entries.size(); ++q) {
        if (p == q && entries[p][q] != 0) throw std::logic_error("KnowledgeMatrix: nonzero diagonal");
        if (entries[p][q] != 0 && entries[p][q] != 1) {
          throw std::logic_error("KnowledgeMatrix: entry not in {0,1}");
        }
      }
    }
  }
};

/// M[p][q] = 1 iff p != q and ACC_p <= ACC_q: client p learns from q only
/// when q performs at least as well.
inline KnowledgeMatrix build_transfer_matrix(const std::vector<double>& accuracies) {
  const std::size_t k = accuracies.size();
  if (k == 0) throw std::invalid_argument("build_transfer_matrix: no clients");
  KnowledgeMatrix m;
  m.entries.assign(k, std::vector<int>(k, 0));
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t q = 0; q < k; ++q) {
      if (p != q && accuracies[p] <= accuracies[q]) m.entries[p][q] = 1;
    }
  }
  m.validate();
  return m;
}

inline KnowledgeMatrix symmetric_matrix(std::size_t k) {
  KnowledgeMatrix m;
  m.entries.assign(k, std::vector<int>(k, 1));
  for (std::size_t i = 0; i < k; ++i) m.entries[i][i] = 0;
  return m;
}

// ---------------------------------------------------------------------------
// Clients and instrumentation
// ---------------------------------------------------------------------------

struct ClientState {
  int id = 0;
  Model model;
  AdamState adam;
  Dataset private_data;
  long local_epochs = 1;  // T_l
};

inline long auto_local_epochs(std::size_t public_size, std::size_t private_size) {
  const long t = static_cast<long>(public_size / std::max<std::size_t>(1, private_size));
  return std::max(1L, t);
}

/// Protocol counters checked by the acceptance suite.
struct Counters {
  std::atomic<long> cross_private_reads{0};
  std::atomic<long> kl_terms_last_round{0};
  std::atomic<long> kl_terms_total{0};
  std::atomic<long> public_batches_last_round{0};
  std::atomic<long> snapshot_mutations{0};
  std::atomic<long> source_output_reads{0};
};

struct CounterSnapshot {
  long cross_private_reads = 0;
  long kl_terms_last_round = 0;
  long kl_terms_total = 0;
  long public_batches_last_round = 0;
  long snapshot_mutations = 0;
  long source_output_reads = 0;
};

inline CounterSnapshot snapshot(const Counters& c) {
  return {c.cross_private_reads.load(),    c.kl_terms_last_round.load(),
          c.kl_terms_total.load(),         c.public_batches_last_round.load(),
          c.snapshot_mutations.load(),     c.source_output_reads.load()};
}

/// Every read of a client's private dataset goes through here; a reader other
/// than the owner trips the counter.
inline const Dataset& private_data_of(const ClientState& client, int reader_id,
                                      Counters& counters) {
  if (reader_id != client.id) ++counters.cross_private_reads;
  return client.private_data;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor images_to_batch(const Dataset& d, const std::vector<std::size_t>& idx,
                              std::size_t lo, std::size_t hi) {
  const std::size_t dim = d.image(0).size();
  Tensor batch({hi - lo, dim});
  for (std::size_t r = lo; r < hi; ++r) write_image_row(d.image(idx[r]), batch, r - lo);
  return batch;
}

}  // namespace detail

/// Fraction of argmax(logits) == label; argmax ties break to the lowest class.
inline double evaluate(const Model& model, const Dataset& data,
                       std::size_t eval_batch = 256) {
  if (!data.has_labels) throw std::invalid_argument("evaluate: dataset is unlabeled");
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::size_t correct = 0;
  for (std::size_t lo = 0; lo < data.size(); lo += eval_batch) {
    const std::size_t hi = std::min(lo + eval_batch, data.size());
    const ForwardResult out = model.forward(detail::images_to_batch(data, idx, lo, hi));
    for (std::size_t r = 0; r < hi - lo; ++r) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < out.logits.cols(); ++j) {
        if (out.logits.at(r, j) > out.logits.at(r, best)) best = j;
      }
      if (static_cast<int>(best) == data.label(idx[lo + r])) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Local update
// ---------------------------------------------------------------------------

struct TrainContext {
  Rng master{0};
  losses::LossWeights weights;
  MixConfig mix;
  std::size_t batch_size = 32;
  bool aug_enabled = false;
  bool dcl_enabled = false;
  bool supcon_substitute = false;
  Counters* counters = nullptr;
};

struct EpochStats {
  double ce = 0.0;
  double jsd = 0.0;
  double supcon = 0.0;
  double dcl = 0.0;
  long batches = 0;

  void add(const losses::LocalLossResult& r) {
    ce += r.ce;
    jsd += r.jsd;
    supcon += r.supcon;
    dcl += r.dcl;
    ++batches;
  }
  void finalize() {
    if (batches == 0) return;
    const double inv = 1.0 / static_cast<double>(batches);
    ce *= inv;
    jsd *= inv;
    supcon *= inv;
    dcl *= inv;
  }
};

/// Stream layout for one training epoch. Exposed so tests can reproduce the
/// exact batch schedule.
inline Rng epoch_stream(const Rng& master, std::string_view phase, int client_id, long round,
                        long epoch) {
  return master.split(phase)
      .split(static_cast<std::uint64_t>(client_id))
      .split(static_cast<std::uint64_t>(round + 1))
      .split(static_cast<std::uint64_t>(epoch));
}

/// Composite-loss training epochs over the client's private data. Complex views are
/// generated whenever DCL needs them, even if the JSD term is off.
inline EpochStats local_update(ClientState& client, std::string_view phase, long round,
                               long epochs, const TrainContext& ctx,
                               std::vector<EpochStats>* per_epoch = nullptr) {
  static Counters null_counters;
  Counters& counters = ctx.counters ? *ctx.counters : null_counters;
  const Dataset& data = private_data_of(client, client.id, counters);
  const std::size_t n = data.size();
  const std::size_t dim = data.image(0).size();
  const bool need_complex = ctx.aug_enabled || ctx.dcl_enabled;

  EpochStats stats;
  for (long e = 0; e < epochs; ++e) {
    EpochStats epoch_stats;
    Rng estream = epoch_stream(ctx.master, phase, client.id, round, e);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng = estream.split("shuffle");
    shuffle_rng.shuffle(order);

    std::size_t batch_index = 0;
    for (std::size_t lo = 0; lo < n; lo += ctx.batch_size, ++batch_index) {
      const std::size_t hi = std::min(lo + ctx.batch_size, n);
      const std::size_t b = hi - lo;
      Rng bstream = estream.split(batch_index);

      Tensor x({b, dim});
      Tensor x1, x2, xpp;
      if (need_complex) x1 = Tensor({b, dim});
      if (ctx.aug_enabled) x2 = Tensor({b, dim});
      if (ctx.dcl_enabled) xpp = Tensor({b, dim});
      std::vector<int> labels(b);

      for (std::size_t r = 0; r < b; ++r) {
        const auto& ex = data.examples[order[lo + r]];
        labels[r] = ex.label;
        write_image_row(ex.image, x, r);
        if (need_complex) {
          Rng rng1 = bstream.split("aug1").split(r);
          write_image_row(augmix(ex.image, ctx.mix, rng1), x1, r);
        }
        if (ctx.aug_enabled) {
          Rng rng2 = bstream.split("aug2").split(r);
          write_image_row(augmix(ex.image, ctx.mix, rng2), x2, r);
        }
        if (ctx.dcl_enabled) {
          Rng rng3 = bstream.split("simple").split(r);
          write_image_row(simple_augment(ex.image, rng3), xpp, r);
        }
      }

      std::vector<ad::Var> params = client.model.leaf_param_vars();
      const ModelSpec& spec = client.model.spec;
      ForwardVars on_x = Model::forward_vars(spec, params, ad::Var::constant(x));
      ad::Var logits_x1, logits_x2, feat_complex, feat_simple;
      if (need_complex) {
        ForwardVars fx1 = Model::forward_vars(spec, params, ad::Var::constant(x1));
        logits_x1 = fx1.logits;
        feat_complex = fx1.features;
      }
      if (ctx.aug_enabled) {
        logits_x2 = Model::forward_vars(spec, params, ad::Var::constant(x2)).logits;
      }
      if (ctx.dcl_enabled) {
        feat_simple = Model::forward_vars(spec, params, ad::Var::constant(xpp)).features;
      }

      losses::LocalLossOptions opt;
      opt.weights = ctx.weights;
      opt.aug_enabled = ctx.aug_enabled;
      opt.dcl_enabled = ctx.dcl_enabled;
      opt.supcon_substitute_complex = ctx.supcon_substitute;
      losses::LocalLossResult loss = losses::local_loss(on_x.logits, on_x.features, logits_x1,
                                                        logits_x2, feat_complex, feat_simple,
                                                        labels, opt);
      ad::backward(loss.total);
      std::vector<Tensor> grads;
      grads.reserve(params.size());
      for (const auto& p : params) grads.push_back(p.grad());
      client.adam.step(client.model.param_list(), grads);
      stats.add(loss);
      epoch_stats.add(loss);
    }
    if (per_epoch) {
      epoch_stats.finalize();
      per_epoch->push_back(epoch_stats);
    }
  }
  stats.finalize();
  return stats;
}

/// Pre-collaboration warmup; plain cross-entropy unless the full composite is
/// requested.
inline EpochStats pretrain(ClientState& client, long epochs, const TrainContext& ctx,
                           bool full_loss, std::vector<EpochStats>* per_epoch = nullptr) {
  TrainContext pre = ctx;
  if (!full_loss) {
    pre.aug_enabled = false;
    pre.dcl_enabled = false;
    pre.supcon_substitute = false;
  }
  return local_update(client, "pretrain", 0, epochs, pre, per_epoch);
}

// ---------------------------------------------------------------------------
// Collaborative round
// ---------------------------------------------------------------------------

struct RoundMetrics {
  long round = 0;
  std::vector<double> acc_clean;
  std::vector<double> acc_corrupt;
  std::vector<double> loss_ce;
  std::vector<double> loss_jsd;
  std::vector<double> loss_supcon;
  std::vector<double> loss_dcl;
  std::vector<double> loss_col;
  long matrix_ones = 0;
};

struct FederationState {
  std::vector<ClientState> clients;
  Dataset public_data;     // unlabeled D_0
  Dataset eval_split;      // labeled, drives the transfer matrix
  Dataset test_clean;
  Dataset test_corrupted;  // frozen corrupted copy of test_clean
  Mode mode = Mode::rahfl;
  bool aug_enabled = true;
  bool dcl_enabled = true;
  bool supcon_substitute = false;
  long rounds = 10;          // T_c
  long matrix_period = 1;    // T_f
  bool collab_then_local = true;
  std::size_t batch_size = 32;
  losses::LossWeights weights;
  MixConfig mix;
  Rng master{0};
  unsigned threads = 1;
  KnowledgeMatrix matrix;
  Counters counters;
};

namespace detail {

inline Tensor public_batch(const Dataset& pub, std::size_t lo, std::size_t hi) {
  const std::size_t dim = pub.image(0).size();
  Tensor batch({hi - lo, dim});
  for (std::size_t r = lo; r < hi; ++r) write_image_row(pub.image(r), batch, r - lo);
  return batch;
}

inline Tensor slice_rows(const Tensor& t, std::size_t lo, std::size_t hi) {
  Tensor out({hi - lo, t.cols()});
  for (std::size_t r = lo; r < hi; ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) out.at(r - lo, c) = t.at(r, c);
  return out;
}

}  // namespace detail

/// Softmax outputs of every client on the public set, computed before any
/// model is updated this round.
inline std::vector<Tensor> compute_public_snapshots(FederationState& st) {
  const std::size_t K = st.clients.size();
  std::vector<Tensor> snaps(K);
  parallel_for(K, st.threads, [&](std::size_t k) {
    const Dataset& pub = st.public_data;
    Tensor probs({pub.size(), st.clients[k].model.spec.num_classes});
    for (std::size_t lo = 0; lo < pub.size(); lo += st.batch_size) {
      const std::size_t hi = std::min(lo + st.batch_size, pub.size());
      const ForwardResult out = st.clients[k].model.forward(detail::public_batch(pub, lo, hi));
      const Tensor p = softmax(out.logits);
      for (std::size_t r = 0; r < hi - lo; ++r)
        for (std::size_t c = 0; c < p.cols(); ++c) probs.at(lo + r, c) = p.at(r, c);
    }
    snaps[k] = std::move(probs);
  });
  return snaps;
}

/// One full collaborative + local round. Phases: (1) snapshot public outputs,
/// (2) rebuild or reuse the transfer matrix, (3) matrix-gated distillation
/// over the public set, (4) local updates, (5) evaluation.
inline RoundMetrics collaborative_round(FederationState& st, long round) {
  const std::size_t K = st.clients.size();
  RoundMetrics rm;
  rm.round = round;
  rm.loss_ce.assign(K, 0.0);
  rm.loss_jsd.assign(K, 0.0);
  rm.loss_supcon.assign(K, 0.0);
  rm.loss_dcl.assign(K, 0.0);
  rm.loss_col.assign(K, 0.0);

  st.counters.kl_terms_last_round = 0;
  st.counters.public_batches_last_round = 0;

  auto run_local_phase = [&] {
    parallel_for(K, st.threads, [&](std::size_t k) {
      TrainContext ctx;
      ctx.master = st.master;
      ctx.weights = st.weights;
      ctx.mix = st.mix;
      ctx.batch_size = st.batch_size;
      ctx.aug_enabled = st.aug_enabled;
      ctx.dcl_enabled = st.dcl_enabled;
      ctx.supcon_substitute = st.supcon_substitute;
      ctx.counters = &st.counters;
      const EpochStats s =
          local_update(st.clients[k], "local", round, st.clients[k].local_epochs, ctx);
      rm.loss_ce[k] = s.ce;
      rm.loss_jsd[k] = s.jsd;
      rm.loss_supcon[k] = s.supcon;
      rm.loss_dcl[k] = s.dcl;
    });
  };

  auto run_collab_phase = [&] {
    if (st.mode == Mode::local_only) return;

    const std::vector<Tensor> snaps = compute_public_snapshots(st);
    std::vector<std::uint64_t> sums(K);
    for (std::size_t k = 0; k < K; ++k) sums[k] = checksum(snaps[k]);

    if (st.mode == Mode::hfl_symmetric) {
      st.matrix = symmetric_matrix(K);
    } else if (round % st.matrix_period == 0 || st.matrix.entries.empty()) {
      std::vector<double> accs(K);
      parallel_for(K, st.threads,
                   [&](std::size_t k) { accs[k] = evaluate(st.clients[k].model, st.eval_split); });
      st.matrix = build_transfer_matrix(accs);
    }
    st.matrix.round_index = round;
    st.matrix.validate();

    const std::size_t n0 = st.public_data.size();
    std::size_t num_batches = 0;
    for (std::size_t lo = 0; lo < n0; lo += st.batch_size) ++num_batches;
    st.counters.public_batches_last_round = static_cast<long>(num_batches);

    parallel_for(K, st.threads, [&](std::size_t k) {
      if (st.matrix.row_all_zero(k)) return;  // best client exits this phase
      ClientState& client = st.clients[k];
      std::vector<std::size_t> source_ids;
      for (std::size_t i = 0; i < K; ++i) {
        if (st.matrix.entries[k][i] != 0) source_ids.push_back(i);
      }
      double loss_sum = 0.0;
      std::size_t batches = 0;
      for (std::size_t lo = 0; lo < n0; lo += st.batch_size, ++batches) {
        const std::size_t hi = std::min(lo + st.batch_size, n0);
        std::vector<Tensor> source_chunks;
        source_chunks.reserve(source_ids.size());
        for (std::size_t i : source_ids) {
          source_chunks.push_back(detail::slice_rows(snaps[i], lo, hi));
          ++st.counters.source_output_reads;
        }
        std::vector<const Tensor*> sources;
        for (const auto& t : source_chunks) sources.push_back(&t);

        std::vector<ad::Var> params = client.model.leaf_param_vars();
        ForwardVars out = Model::forward_vars(client.model.spec, params,
                                              ad::Var::constant(detail::public_batch(st.public_data, lo, hi)));
        ad::Var loss = losses::collaborative_from_probs(ad::softmax_rows(out.logits), sources);
        st.counters.kl_terms_last_round += static_cast<long>(sources.size());
        st.counters.kl_terms_total += static_cast<long>(sources.size());
        ad::backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(params.size());
        for (const auto& p : params) grads.push_back(p.grad());
        client.adam.step(client.model.param_list(), grads);
        loss_sum += loss.scalar();
      }
      rm.loss_col[k] = loss_sum / static_cast<double>(std::max<std::size_t>(1, batches));
    });

    for (std::size_t k = 0; k < K; ++k) {
      if (checksum(snaps[k]) != sums[k]) ++st.counters.snapshot_mutations;
    }
    rm.matrix_ones = st.matrix.ones_count();
  };

  if (st.collab_then_local) {
    run_collab_phase();
    run_local_phase();
  } else {
    run_local_phase();
    run_collab_phase();
  }

  rm.acc_clean.assign(K, 0.0);
  rm.acc_corrupt.assign(K, 0.0);
  parallel_for(K, st.threads, [&](std::size_t k) {
    rm.acc_clean[k] = evaluate(st.clients[k].model, st.test_clean);
    rm.acc_corrupt[k] = evaluate(st.clients[k].model, st.test_corrupted);
  });
  return rm;
}

// ---------------------------------------------------------------------------
// Whole experiment
// ---------------------------------------------------------------------------

struct SummaryRow {
  std::string client_id;  // "0".."K-1" or "avg"
  std::string arch;
  double acc_clean_final = 0.0;
  double acc_corrupt_final = 0.0;
};

struct ExperimentResult {
  std::vector<RoundMetrics> metrics;
  std::vector<SummaryRow> summary;
  CounterSnapshot counters;
  std::vector<CounterSnapshot> round_counters;  // one snapshot per round
  std::uint64_t data_checksum = 0;
  std::vector<std::string> client_archs;
};

inline unsigned worker_threads_from_env() {
  const char* env = std::getenv("RAHFL_THREADS");
  if (env == nullptr) return 1;
  const long v = std::strtol(env, nullptr, 10);
  return v < 1 ? 1u : static_cast<unsigned>(v);
}

/// Build datasets and clients, pretrain, run T_c rounds, evaluate each round
/// on a clean test split and one frozen randomly corrupted copy of it.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const Rng master(cfg.seed);
  FederationState st;
  st.mode = mode_from_string(cfg.mode);
  st.aug_enabled = cfg.effective_aug();
  st.dcl_enabled = cfg.effective_dcl();
  st.supcon_substitute = cfg.supcon_variant;
  st.rounds = cfg.rounds;
  st.matrix_period = cfg.matrix_period;
  st.collab_then_local = cfg.collab_then_local;
  st.batch_size = cfg.batch_size;
  st.weights.mu = cfg.mu;
  st.weights.gamma = cfg.gamma;
  st.weights.tau_c = cfg.tau_c;
  st.weights.tau_d = cfg.tau_d;
  st.mix.num_sequences = cfg.sequences;
  st.mix.alpha = cfg.alpha;
  st.master = master;
  st.threads = worker_threads_from_env();

  // Data. Each consumer gets its own named stream so toggling one feature
  // never shifts another's randomness.
  const std::size_t K = cfg.clients;
  Dataset private_pool;
  if (cfg.source == "manifest") {
    private_pool = load_manifest_dataset(cfg.manifest_path);
    if (private_pool.image(0).height != cfg.image_side ||
        private_pool.image(0).width != cfg.image_side ||
        private_pool.num_classes != cfg.num_classes) {
      throw std::invalid_argument(
          "config key 'manifest_path': manifest dimensions do not match image_side/num_classes");
    }
    if (private_pool.size() < K * cfg.private_size) {
      throw std::invalid_argument("config key 'private_size': manifest has too few examples");
    }
  } else {
    private_pool = make_synthetic_dataset(K * cfg.private_size, cfg.num_classes, cfg.image_side,
                                          master.split("data"));
  }

  PartitionPlan plan;
  plan.scheme = cfg.partition == "iid" ? PartitionScheme::iid : PartitionScheme::dirichlet;
  plan.beta = cfg.dirichlet_beta;
  plan.client_sizes.assign(K, cfg.private_size);
  std::vector<Dataset> shards = partition(private_pool, plan, master.split("partition"));

  Dataset public_clean = make_synthetic_dataset(cfg.public_size, cfg.num_classes, cfg.image_side,
                                                master.split("public"));
  st.public_data = cfg.public_clean
                       ? public_clean.without_labels()
                       : corrupt_dataset(public_clean, 1.0, master.split("public_corrupt"))
                             .without_labels();
  st.eval_split =
      make_synthetic_dataset(cfg.eval_size, cfg.num_classes, cfg.image_side, master.split("eval"));
  st.test_clean =
      make_synthetic_dataset(cfg.test_size, cfg.num_classes, cfg.image_side, master.split("test"));
  st.test_corrupted = corrupt_dataset(st.test_clean, 1.0, master.split("test_corrupt"));

  ExperimentResult result;
  result.data_checksum = checksum(private_pool);

  const std::vector<ModelSpec> specs = cfg.client_specs();
  const long t_l = cfg.local_epochs > 0
                       ? cfg.local_epochs
                       : auto_local_epochs(cfg.public_size, cfg.private_size);
  st.clients.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    ClientState c;
    c.id = static_cast<int>(k);
    c.model = Model::init(specs[k], master.split("init").split(k));
    c.adam = AdamState::init_for(c.model, cfg.learning_rate);
    c.private_data = corrupt_dataset(shards[k], cfg.corruption_rate, master.split("corrupt").split(k));
    c.local_epochs = t_l;
    st.clients.push_back(std::move(c));
    result.client_archs.push_back(specs[k].arch_string());
  }

  parallel_for(K, st.threads, [&](std::size_t k) {
    TrainContext ctx;
    ctx.master = st.master;
    ctx.weights = st.weights;
    ctx.mix = st.mix;
    ctx.batch_size = st.batch_size;
    ctx.aug_enabled = st.aug_enabled;
    ctx.dcl_enabled = st.dcl_enabled;
    ctx.supcon_substitute = st.supcon_substitute;
    ctx.counters = &st.counters;
    pretrain(st.clients[k], cfg.pretrain_epochs, ctx, cfg.pretrain_full_loss);
  });

  for (long round = 0; round < cfg.rounds; ++round) {
    result.metrics.push_back(collaborative_round(st, round));
    result.round_counters.push_back(snapshot(st.counters));
  }

  if (!result.metrics.empty()) {
    const RoundMetrics& last = result.metrics.back();
    double sum_clean = 0.0, sum_corrupt = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      SummaryRow row;
      row.client_id = std::to_string(k);
      row.arch = result.client_archs[k];
      row.acc_clean_final = last.acc_clean[k];
      row.acc_corrupt_final = last.acc_corrupt[k];
      sum_clean += row.acc_clean_final;
      sum_corrupt += row.acc_corrupt_final;
      result.summary.push_back(std::move(row));
    }
    SummaryRow avg;
    avg.client_id = "avg";
    avg.arch = "-";
    avg.acc_clean_final = sum_clean / static_cast<double>(K);
    avg.acc_corrupt_final = sum_corrupt / static_cast<double>(K);
    result.summary.push_back(std::move(avg));
  }
  result.counters = snapshot(st.counters);
  return result;
}

}  // namespace rahfl
