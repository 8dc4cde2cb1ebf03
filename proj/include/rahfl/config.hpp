#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rahfl/model.hpp"

namespace rahfl {

/// Full description of one experiment run. Field defaults are the reference
/// training setup; `apply_desk_preset` shrinks them to laptop scale.
struct ExperimentConfig {
  std::string mode = "rahfl";  // local_only | hfl_symmetric | asym_hfl | rahfl
  std::uint64_t seed = 1;
  std::size_t clients = 4;
  std::vector<std::string> arch_list = {"64-32", "128-64", "32", "96-48-24"};
  std::vector<std::size_t> arch_repeats;  // optional, parallel to arch_list

  std::string source = "synthetic";  // synthetic | manifest
  std::string manifest_path;
  std::size_t image_side = 16;
  std::size_t num_classes = 4;
  std::size_t private_size = 10000;  // per-client N_k
  std::size_t public_size = 5000;    // N_0
  std::size_t eval_size = 500;
  std::size_t test_size = 1000;
  double corruption_rate = 0.5;  // xi
  std::string partition = "iid";  // iid | dirichlet
  double dirichlet_beta = 1.0;
  bool public_clean = true;

  long rounds = 40;         // T_c
  long matrix_period = 1;   // T_f
  long pretrain_epochs = 40;
  bool pretrain_full_loss = false;
  std::size_t batch_size = 256;
  double learning_rate = 0.001;
  long local_epochs = 0;  // 0 = max(floor(N_0 / N_k), 1)
  bool collab_then_local = true;
  bool aug = true;
  bool dcl = true;
  bool supcon_variant = false;

  double mu = 12.0;
  double gamma = 1.0;
  double tau_c = 0.2;
  double tau_d = 0.2;

  std::size_t sequences = 3;  // S
  double alpha = 1.0;

  std::string out_dir = "out";

  void validate() const;
  std::vector<ModelSpec> client_specs() const;
  bool effective_aug() const { return mode == "rahfl" ? true : aug; }
  bool effective_dcl() const { return mode == "rahfl" ? true : dcl; }
};

inline void apply_desk_preset(ExperimentConfig& c) {
  c.clients = 4;
  c.image_side = 16;
  c.num_classes = 4;
  c.private_size = 600;
  c.public_size = 400;
  c.eval_size = 400;
  c.test_size = 1000;
  c.rounds = 10;
  c.batch_size = 32;
  c.pretrain_epochs = 5;
}

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof()) {
    throw std::invalid_argument("config key '" + key + "': cannot parse '" + value + "'");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config key '" + key + "': expected true/false, got '" + value + "'");
}

inline std::vector<std::size_t> parse_dims(const std::string& key, const std::string& arch) {
  std::vector<std::size_t> dims;
  for (const auto& part : split_list(arch, '-')) {
    dims.push_back(parse_number<std::size_t>(key, part));
  }
  if (dims.empty()) throw std::invalid_argument("config key '" + key + "': empty architecture");
  return dims;
}

}  // namespace config_detail

inline std::vector<ModelSpec> ExperimentConfig::client_specs() const {
  std::vector<std::string> archs;
  if (!arch_repeats.empty()) {
    if (arch_repeats.size() != arch_list.size()) {
      throw std::invalid_argument("config key 'arch_repeats': length must match arch_list");
    }
    for (std::size_t i = 0; i < arch_list.size(); ++i) {
      for (std::size_t r = 0; r < arch_repeats[i]; ++r) archs.push_back(arch_list[i]);
    }
  } else {
    archs = arch_list;
  }
  if (archs.empty()) throw std::invalid_argument("config key 'arch_list': no architectures");
  std::vector<ModelSpec> specs;
  const std::size_t input_dim = image_side * image_side;
  for (std::size_t k = 0; k < clients; ++k) {
    ModelSpec spec;
    spec.input_dim = input_dim;
    spec.hidden_dims = config_detail::parse_dims("arch_list", archs[k % archs.size()]);
    spec.num_classes = num_classes;
    spec.validate();
    specs.push_back(std::move(spec));
  }
  return specs;
}

inline void ExperimentConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw std::invalid_argument("config key '" + key + "': " + why);
  };
  if (mode != "local_only" && mode != "hfl_symmetric" && mode != "asym_hfl" && mode != "rahfl") {
    fail("mode", "must be one of local_only|hfl_symmetric|asym_hfl|rahfl, got '" + mode + "'");
  }
  if (clients < 1) fail("clients", "must be >= 1");
  if (source != "synthetic" && source != "manifest") {
    fail("source", "must be synthetic|manifest, got '" + source + "'");
  }
  if (source == "manifest" && manifest_path.empty()) {
    fail("manifest_path", "required when source = manifest");
  }
  if (image_side < 8) fail("image_side", "must be >= 8");
  if (num_classes < 2) fail("num_classes", "must be >= 2");
  if (private_size < 1) fail("private_size", "must be >= 1");
  if (public_size < 1) fail("public_size", "must be >= 1");
  if (eval_size < 1) fail("eval_size", "must be >= 1");
  if (test_size < 1) fail("test_size", "must be >= 1");
  if (corruption_rate < 0.0 || corruption_rate > 1.0) {
    fail("corruption_rate", "must be in [0,1]");
  }
  if (partition != "iid" && partition != "dirichlet") {
    fail("partition", "must be iid|dirichlet, got '" + partition + "'");
  }
  if (dirichlet_beta <= 0.0) fail("dirichlet_beta", "must be positive");
  if (rounds < 0) fail("rounds", "must be >= 0");
  if (matrix_period < 1) fail("matrix_period", "must be >= 1");
  if (pretrain_epochs < 0) fail("pretrain_epochs", "must be >= 0");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (learning_rate <= 0.0) fail("learning_rate", "must be positive");
  if (local_epochs < 0) fail("local_epochs", "must be >= 0 (0 = auto)");
  if (mu < 0.0) fail("mu", "must be >= 0");
  if (gamma < 0.0) fail("gamma", "must be >= 0");
  if (tau_c <= 0.0) fail("tau_c", "must be positive");
  if (tau_d <= 0.0) fail("tau_d", "must be positive");
  if (sequences < 1) fail("sequences", "must be >= 1");
  if (alpha <= 0.0) fail("alpha", "must be positive");
  if (out_dir.empty()) fail("out_dir", "must not be empty");
  client_specs();  // validates arch_list / arch_repeats
}

/// Parse a flat key = value file onto `base`. '#' comments and [section]
/// headers are allowed; keys live in one flat namespace and unknown keys are
/// rejected. Returns the fully validated config.
inline ExperimentConfig parse_config(const std::filesystem::path& path,
                                     ExperimentConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("parse_config: cannot open " + path.string());
  ExperimentConfig cfg = base;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad section header");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = config_detail::trim(line.substr(0, eq));
    const std::string value = config_detail::trim(line.substr(eq + 1));
    using namespace config_detail;
    if (key == "mode") cfg.mode = value;
    else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "clients") cfg.clients = parse_number<std::size_t>(key, value);
    else if (key == "arch_list") cfg.arch_list = split_list(value, ',');
    else if (key == "arch_repeats") {
      cfg.arch_repeats.clear();
      for (const auto& part : split_list(value, ',')) {
        cfg.arch_repeats.push_back(parse_number<std::size_t>(key, part));
      }
    } else if (key == "source") cfg.source = value;
    else if (key == "manifest_path") cfg.manifest_path = value;
    else if (key == "image_side") cfg.image_side = parse_number<std::size_t>(key, value);
    else if (key == "num_classes") cfg.num_classes = parse_number<std::size_t>(key, value);
    else if (key == "private_size") cfg.private_size = parse_number<std::size_t>(key, value);
    else if (key == "public_size") cfg.public_size = parse_number<std::size_t>(key, value);
    else if (key == "eval_size") cfg.eval_size = parse_number<std::size_t>(key, value);
    else if (key == "test_size") cfg.test_size = parse_number<std::size_t>(key, value);
    else if (key == "corruption_rate") cfg.corruption_rate = parse_number<double>(key, value);
    else if (key == "partition") cfg.partition = value;
    else if (key == "dirichlet_beta") cfg.dirichlet_beta = parse_number<double>(key, value);
    else if (key == "public_clean") cfg.public_clean = parse_bool(key, value);
    else if (key == "rounds") cfg.rounds = parse_number<long>(key, value);
    else if (key == "matrix_period") cfg.matrix_period = parse_number<long>(key, value);
    else if (key == "pretrain_epochs") cfg.pretrain_epochs = parse_number<long>(key, value);
    else if (key == "pretrain_full_loss") cfg.pretrain_full_loss = parse_bool(key, value);
    else if (key == "batch_size") cfg.batch_size = parse_number<std::size_t>(key, value);
    else if (key == "learning_rate") cfg.learning_rate = parse_number<double>(key, value);
    else if (key == "local_epochs") cfg.local_epochs = parse_number<long>(key, value);
    else if (key == "collab_then_local") cfg.collab_then_local = parse_bool(key, value);
    else if (key == "aug") cfg.aug = parse_bool(key, value);
    else if (key == "dcl") cfg.dcl = parse_bool(key, value);
    else if (key == "supcon_variant") cfg.supcon_variant = parse_bool(key, value);
    else if (key == "mu") cfg.mu = parse_number<double>(key, value);
    else if (key == "gamma") cfg.gamma = parse_number<double>(key, value);
    else if (key == "tau_c") cfg.tau_c = parse_number<double>(key, value);
    else if (key == "tau_d") cfg.tau_d = parse_number<double>(key, value);
    else if (key == "sequences") cfg.sequences = parse_number<std::size_t>(key, value);
    else if (key == "alpha") cfg.alpha = parse_number<double>(key, value);
    else if (key == "out_dir") cfg.out_dir = value;
    else throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

namespace config_detail {

inline std::string fmt(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace config_detail

/// Canonical serialization; parse(serialize(c)) == c.
inline std::string serialize_config(const ExperimentConfig& c) {
  using config_detail::fmt;
  std::ostringstream out;
  out << "mode = " << c.mode << "\n";
  out << "seed = " << c.seed << "\n";
  out << "clients = " << c.clients << "\n";
  out << "arch_list = ";
  for (std::size_t i = 0; i < c.arch_list.size(); ++i) out << (i ? "," : "") << c.arch_list[i];
  out << "\n";
  if (!c.arch_repeats.empty()) {
    out << "arch_repeats = ";
    for (std::size_t i = 0; i < c.arch_repeats.size(); ++i) out << (i ? "," : "") << c.arch_repeats[i];
    out << "\n";
  }
  out << "out_dir = " << c.out_dir << "\n";
  out << "\n[data]\n";
  out << "source = " << c.source << "\n";
  if (!c.manifest_path.empty()) out << "manifest_path = " << c.manifest_path << "\n";
  out << "image_side = " << c.image_side << "\n";
  out << "num_classes = " << c.num_classes << "\n";
  out << "private_size = " << c.private_size << "\n";
  out << "public_size = " << c.public_size << "\n";
  out << "eval_size = " << c.eval_size << "\n";
  out << "test_size = " << c.test_size << "\n";
  out << "corruption_rate = " << fmt(c.corruption_rate) << "\n";
  out << "partition = " << c.partition << "\n";
  out << "dirichlet_beta = " << fmt(c.dirichlet_beta) << "\n";
  out << "public_clean = " << (c.public_clean ? "true" : "false") << "\n";
  out << "\n[train]\n";
  out << "rounds = " << c.rounds << "\n";
  out << "matrix_period = " << c.matrix_period << "\n";
  out << "pretrain_epochs = " << c.pretrain_epochs << "\n";
  out << "pretrain_full_loss = " << (c.pretrain_full_loss ? "true" : "false") << "\n";
  out << "batch_size = " << c.batch_size << "\n";
  out << "learning_rate = " << fmt(c.learning_rate) << "\n";
  out << "local_epochs = " << c.local_epochs << "\n";
  out << "collab_then_local = " << (c.collab_then_local ? "true" : "false") << "\n";
  out << "aug = " << (c.aug ? "true" : "false") << "\n";
  out << "dcl = " << (c.dcl ? "true" : "false") << "\n";
  out << "supcon_variant = " << (c.supcon_variant ? "true" : "false") << "\n";
  out << "\n[loss]\n";
  out << "mu = " << fmt(c.mu) << "\n";
  out << "gamma = " << fmt(c.gamma) << "\n";
  out << "tau_c = " << fmt(c.tau_c) << "\n";
  out << "tau_d = " << fmt(c.tau_d) << "\n";
  out << "\n[augmix]\n";
  out << "sequences = " << c.sequences << "\n";
  out << "alpha = " << fmt(c.alpha) << "\n";
  return out.str();
}

}  // namespace rahfl
