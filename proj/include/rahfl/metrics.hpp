#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rahfl/federation.hpp"

namespace rahfl {

namespace detail {

/// Shortest round-trip decimal form, shared by jsonl and csv output.
inline std::string num(double v) { return nlohmann::json(v).dump(); }

}  // namespace detail

/// metrics.jsonl: one object per round with the fixed schema
/// {"round","acc_clean","acc_corrupt","loss_ce","loss_jsd","loss_supcon",
///  "loss_dcl","loss_col","matrix_ones"}.
/// summary.csv: mode, seed, client_id, arch, acc_clean_final,
/// acc_corrupt_final, with a trailing avg row.
inline void emit_metrics(const std::vector<RoundMetrics>& metrics,
                         const std::vector<SummaryRow>& summary, const std::string& mode,
                         std::uint64_t seed, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "metrics.jsonl");
    if (!out) throw std::runtime_error("emit_metrics: cannot write metrics.jsonl");
    for (const auto& rm : metrics) {
      nlohmann::ordered_json j;
      j["round"] = rm.round;
      j["acc_clean"] = rm.acc_clean;
      j["acc_corrupt"] = rm.acc_corrupt;
      j["loss_ce"] = rm.loss_ce;
      j["loss_jsd"] = rm.loss_jsd;
      j["loss_supcon"] = rm.loss_supcon;
      j["loss_dcl"] = rm.loss_dcl;
      j["loss_col"] = rm.loss_col;
      j["matrix_ones"] = rm.matrix_ones;
      out << j.dump() << "\n";
    }
  }
  {
    std::ofstream out(out_dir / "summary.csv");
    if (!out) throw std::runtime_error("emit_metrics: cannot write summary.csv");
    out << "mode,seed,client_id,arch,acc_clean_final,acc_corrupt_final\n";
    for (const auto& row : summary) {
      out << mode << "," << seed << "," << row.client_id << "," << row.arch << ","
          << detail::num(row.acc_clean_final) << "," << detail::num(row.acc_corrupt_final) << "\n";
    }
  }
}

inline void emit_run_info(const ExperimentResult& result, const std::string& mode,
                          std::uint64_t seed, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  nlohmann::ordered_json j;
  j["mode"] = mode;
  j["seed"] = seed;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(result.data_checksum));
  j["data_checksum"] = std::string(buf);
  j["client_archs"] = result.client_archs;
  j["cross_private_reads"] = result.counters.cross_private_reads;
  j["source_output_reads"] = result.counters.source_output_reads;
  j["snapshot_mutations"] = result.counters.snapshot_mutations;
  std::ofstream out(out_dir / "run_info.json");
  if (!out) throw std::runtime_error("emit_run_info: cannot write run_info.json");
  out << j.dump(2) << "\n";
}

}  // namespace rahfl
