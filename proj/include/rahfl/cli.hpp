#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rahfl/config.hpp"
#include "rahfl/federation.hpp"
#include "rahfl/metrics.hpp"

namespace rahfl {

namespace cli_detail {

struct CommonOpts {
  std::string config_path;
  std::string preset;
  std::string mode;
  std::string out;
  long seed = -1;
};

inline ExperimentConfig build_config(const CommonOpts& opts) {
  ExperimentConfig cfg;
  if (!opts.preset.empty()) {
    if (opts.preset != "desk") throw std::invalid_argument("unknown preset '" + opts.preset + "'");
    apply_desk_preset(cfg);
  }
  if (!opts.config_path.empty()) cfg = parse_config(opts.config_path, cfg);
  if (!opts.mode.empty()) cfg.mode = opts.mode;
  if (opts.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed);
  if (!opts.out.empty()) cfg.out_dir = opts.out;
  if (const char* env = std::getenv("RAHFL_SEED")) {
    cfg.seed = std::strtoull(env, nullptr, 10);
  }
  cfg.validate();
  return cfg;
}

inline void write_effective_config(const ExperimentConfig& cfg,
                                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "effective_config.toml");
  if (!out) throw std::runtime_error("cannot write effective_config.toml");
  out << serialize_config(cfg);
}

inline void run_one(const ExperimentConfig& cfg) {
  const ExperimentResult result = run_experiment(cfg);
  write_effective_config(cfg, cfg.out_dir);
  emit_metrics(result.metrics, result.summary, cfg.mode, cfg.seed, cfg.out_dir);
  emit_run_info(result, cfg.mode, cfg.seed, cfg.out_dir);
  if (!result.summary.empty()) {
    const SummaryRow& avg = result.summary.back();
    std::cout << cfg.mode << " seed=" << cfg.seed << " final avg acc clean=" << avg.acc_clean_final
              << " corrupted=" << avg.acc_corrupt_final << "\n";
  } else {
    std::cout << cfg.mode << " seed=" << cfg.seed << " (no rounds)\n";
  }
}

/// Grid cell: a mode name with optional +aug / +dcl / +supcon suffixes,
/// e.g. "asym_hfl+aug+dcl". Cells start from all toggles off.
inline ExperimentConfig apply_cell(const ExperimentConfig& base, const std::string& cell) {
  ExperimentConfig cfg = base;
  cfg.aug = false;
  cfg.dcl = false;
  cfg.supcon_variant = false;
  std::string mode;
  std::istringstream in(cell);
  std::string token;
  bool first = true;
  while (std::getline(in, token, '+')) {
    if (first) {
      mode = token;
      first = false;
    } else if (token == "aug") {
      cfg.aug = true;
    } else if (token == "dcl") {
      cfg.dcl = true;
    } else if (token == "supcon") {
      cfg.dcl = true;
      cfg.supcon_variant = true;
    } else {
      throw std::invalid_argument("grid cell '" + cell + "': unknown toggle '+" + token + "'");
    }
  }
  cfg.mode = mode;
  cfg.validate();
  return cfg;
}

inline std::string sanitize_cell_name(const std::string& cell) {
  std::string s = cell;
  for (auto& c : s) {
    if (c == '+') c = '_';
  }
  return s;
}

inline int inspect_metrics(const std::string& dir) {
  const std::filesystem::path path = std::filesystem::path(dir) / "metrics.jsonl";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("inspect-metrics: cannot open " + path.string());
  std::cout << "round  acc_clean(avg)  acc_corrupt(avg)  matrix_ones\n";
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    auto mean = [](const nlohmann::json& arr) {
      double s = 0.0;
      for (const auto& v : arr) s += v.get<double>();
      return arr.empty() ? 0.0 : s / static_cast<double>(arr.size());
    };
    std::printf("%5ld  %14.4f  %16.4f  %11ld\n", j.at("round").get<long>(),
                mean(j.at("acc_clean")), mean(j.at("acc_corrupt")),
                j.at("matrix_ones").get<long>());
  }
  const std::filesystem::path csv = std::filesystem::path(dir) / "summary.csv";
  std::ifstream cin_(csv);
  if (cin_) {
    std::cout << "\n" << cin_.rdbuf();
  }
  return 0;
}

}  // namespace cli_detail

/// Entry point behind main(); returns the process exit code.
/// 0 = success, 1 = runtime failure, 2 = bad flags.
inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"Desk-scale robust asymmetric heterogeneous federated learning simulator"};
  app.require_subcommand(1);
  app.footer(
      "Config file keys (flat key = value; [section] headers allowed):\n"
      "  mode                local_only | hfl_symmetric | asym_hfl | rahfl (default rahfl)\n"
      "  seed                master seed (default 1)\n"
      "  clients             number of clients K (default 4)\n"
      "  arch_list           comma list of hidden dims per client, e.g. 64-32,128-64,32,96-48-24\n"
      "  arch_repeats        optional repeat counts parallel to arch_list\n"
      "  source              synthetic | manifest (default synthetic)\n"
      "  manifest_path       dataset manifest when source = manifest\n"
      "  image_side          synthetic image side (default 16)\n"
      "  num_classes         classes C (default 4)\n"
      "  private_size        per-client private examples N_k (default 10000)\n"
      "  public_size         shared public examples N_0 (default 5000)\n"
      "  eval_size           held-out split that drives the transfer matrix (default 500)\n"
      "  test_size           clean test split size (default 1000)\n"
      "  corruption_rate     xi in [0,1] (default 0.5)\n"
      "  partition           iid | dirichlet (default iid)\n"
      "  dirichlet_beta      Dirichlet concentration for non-IID splits (default 1.0)\n"
      "  public_clean        keep the public set uncorrupted (default true)\n"
      "  rounds              collaborative rounds T_c (default 40)\n"
      "  matrix_period       rounds between matrix rebuilds T_f (default 1)\n"
      "  pretrain_epochs     local warmup epochs (default 40)\n"
      "  pretrain_full_loss  pretrain with the full composite loss (default false)\n"
      "  batch_size          minibatch size (default 256)\n"
      "  learning_rate       Adam learning rate (default 0.001)\n"
      "  local_epochs        T_l; 0 = max(floor(N_0/N_k), 1) (default 0)\n"
      "  collab_then_local   phase order within a round (default true)\n"
      "  aug                 mixed augmentation + JSD consistency (default true)\n"
      "  dcl                 diversity-enhanced supervised contrastive term (default true)\n"
      "  supcon_variant      substitute complex views into the contrastive batch (default false)\n"
      "  mu, gamma           JSD / regularizer weights (defaults 12, 1)\n"
      "  tau_c, tau_d        contrastive / similarity temperatures (defaults 0.2, 0.2)\n"
      "  sequences           augmentation chains S per mix (default 3)\n"
      "  alpha               Dirichlet/Beta mixing parameter (default 1.0)\n"
      "  out_dir             output directory (default out)\n"
      "Environment: RAHFL_SEED overrides the seed; RAHFL_THREADS caps worker threads.");

  cli_detail::CommonOpts run_opts;
  CLI::App* run = app.add_subcommand("run", "Run one experiment and write metrics");
  run->add_option("--config", run_opts.config_path, "Config file (flat key = value)");
  run->add_option("--preset", run_opts.preset, "Named preset applied before the config (desk)");
  run->add_option("--seed", run_opts.seed, "Override the config seed");
  run->add_option("--mode", run_opts.mode, "Override the config mode")
      ->check(CLI::IsMember({"local_only", "hfl_symmetric", "asym_hfl", "rahfl"}));
  run->add_option("--out", run_opts.out, "Output directory");

  cli_detail::CommonOpts ablate_opts;
  std::string grid = "local_only;hfl_symmetric;asym_hfl;asym_hfl+aug;asym_hfl+aug+dcl";
  CLI::App* ablate = app.add_subcommand(
      "ablate", "Run a mode/toggle grid sequentially with a shared data seed");
  ablate->add_option("--config", ablate_opts.config_path, "Config file");
  ablate->add_option("--preset", ablate_opts.preset, "Named preset (desk)");
  ablate->add_option("--seed", ablate_opts.seed, "Override the config seed");
  ablate->add_option("--out", ablate_opts.out, "Output directory (one subdir per cell)");
  ablate->add_option("--grid", grid, "Semicolon-separated cells, e.g. asym_hfl+aug+dcl");

  std::string gen_out = "data";
  std::string gen_name = "dataset";
  std::size_t gen_n = 1000, gen_classes = 4, gen_side = 16;
  long gen_seed = 1;
  CLI::App* gen = app.add_subcommand("gen-data", "Write a synthetic dataset manifest");
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--name", gen_name, "Manifest stem");
  gen->add_option("--n", gen_n, "Number of examples");
  gen->add_option("--classes", gen_classes, "Number of classes");
  gen->add_option("--side", gen_side, "Image side length");
  gen->add_option("--seed", gen_seed, "Generation seed");

  std::string cor_manifest;
  std::string cor_out = "data";
  std::string cor_name = "corrupted";
  double cor_xi = 1.0;
  long cor_seed = 1;
  CLI::App* cor = app.add_subcommand("corrupt", "Corrupt a manifest dataset at rate xi");
  cor->add_option("--manifest", cor_manifest, "Input manifest path")->required();
  cor->add_option("--xi", cor_xi, "Corruption rate in [0,1]");
  cor->add_option("--out", cor_out, "Output directory");
  cor->add_option("--name", cor_name, "Output manifest stem");
  cor->add_option("--seed", cor_seed, "Corruption seed");

  std::string inspect_dir;
  CLI::App* inspect = app.add_subcommand("inspect-metrics", "Summarize a metrics directory");
  inspect->add_option("--dir", inspect_dir, "Directory containing metrics.jsonl")->required();

  std::vector<const char*> argv;
  argv.push_back("rahfl");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (run->parsed()) {
      cli_detail::run_one(cli_detail::build_config(run_opts));
      return 0;
    }
    if (ablate->parsed()) {
      const ExperimentConfig base = cli_detail::build_config(ablate_opts);
      std::vector<std::string> cells;
      std::istringstream in(grid);
      std::string cell;
      while (std::getline(in, cell, ';')) {
        if (!cell.empty()) cells.push_back(cell);
      }
      if (cells.empty()) throw std::invalid_argument("ablate: empty grid");
      for (const auto& c : cells) {
        ExperimentConfig cfg = cli_detail::apply_cell(base, c);
        cfg.out_dir = (std::filesystem::path(base.out_dir) /
                       cli_detail::sanitize_cell_name(c)).string();
        cli_detail::run_one(cfg);
      }
      return 0;
    }
    if (gen->parsed()) {
      const Dataset d = make_synthetic_dataset(gen_n, gen_classes, gen_side,
                                               Rng(static_cast<std::uint64_t>(gen_seed)).split("data"));
      const auto manifest = std::filesystem::path(gen_out) / (gen_name + ".json");
      save_manifest_dataset(d, manifest);
      std::cout << "wrote " << manifest.string() << " (" << d.size() << " examples)\n";
      return 0;
    }
    if (cor->parsed()) {
      Dataset d = load_manifest_dataset(cor_manifest);
      if (cor_xi < 0.0 || cor_xi > 1.0) throw std::invalid_argument("corrupt: xi must be in [0,1]");
      d = corrupt_dataset(d, cor_xi, Rng(static_cast<std::uint64_t>(cor_seed)).split("corrupt"));
      const auto manifest = std::filesystem::path(cor_out) / (cor_name + ".json");
      save_manifest_dataset(d, manifest);
      std::size_t flagged = 0;
      for (const auto& e : d.examples) flagged += e.corrupted ? 1 : 0;
      std::cout << "wrote " << manifest.string() << " (" << flagged << "/" << d.size()
                << " corrupted)\n";
      return 0;
    }
    if (inspect->parsed()) {
      return cli_detail::inspect_metrics(inspect_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace rahfl
