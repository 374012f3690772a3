#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "disperse/eval.hpp"
#include "disperse/unlearn.hpp"

namespace disperse::report {

nlohmann::json metrics_to_json(const eval::MetricsReport& r);
eval::MetricsReport metrics_from_json(const nlohmann::json& j);

/// Machine-readable before/after report. `meta` is merged in verbatim
/// (config hash, seed, method, tool version).
nlohmann::json pair_to_json(const eval::ReportPair& pair,
                            const nlohmann::json& meta);

/// Human-readable table with the same numbers (mAP/R@1/accuracy to two
/// decimals, compactness to three) plus the before/after deltas.
std::string pair_to_markdown(const eval::ReportPair& pair,
                             const std::string& title);

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // population stddev; 0 for a single run
};

Aggregate aggregate(const std::vector<double>& values);

/// Mean +- std across per-seed report pairs, one row per metric.
nlohmann::json aggregate_to_json(const std::vector<eval::ReportPair>& pairs,
                                 const nlohmann::json& meta);
std::string aggregate_to_markdown(const std::vector<eval::ReportPair>& pairs,
                                  const std::string& title);

/// Per-run record for an unlearning execution: config echo, loss trace,
/// timing, abort reason when present.
nlohmann::json run_record(const unlearn::UnlearnResult& res,
                          const nlohmann::json& meta);

/// One sweep row in the appendix-table column layout.
struct SweepRow {
  std::string cell_label;
  std::uint64_t cell_hash = 0;
  bool failed = false;
  std::string failure_reason;
  double map_f = 0.0, r1_f = 0.0, r1_retain = 0.0;
  double cs_f = 0.0, cs_r = 0.0, acc_f = 0.0, acc_r = 0.0;
};

nlohmann::json sweep_to_json(const std::vector<SweepRow>& rows,
                             const nlohmann::json& meta);
std::string sweep_to_markdown(const std::vector<SweepRow>& rows);

}  // namespace disperse::report
