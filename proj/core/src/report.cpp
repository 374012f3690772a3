#include "disperse/report.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "disperse/config.hpp"

namespace disperse::report {

namespace {

using nlohmann::json;

std::string fmt(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

struct MetricColumn {
  const char* name;
  int decimals;
  double eval::MetricsReport::* field;
};

constexpr MetricColumn kColumns[] = {
    {"map_forget", 2, &eval::MetricsReport::map_forget},
    {"r1_forget", 2, &eval::MetricsReport::r1_forget},
    {"map_retain", 2, &eval::MetricsReport::map_retain},
    {"r1_retain", 2, &eval::MetricsReport::r1_retain},
    {"cs_forget", 3, &eval::MetricsReport::cs_forget},
    {"cs_retain", 3, &eval::MetricsReport::cs_retain},
    {"acc_forget", 2, &eval::MetricsReport::acc_forget},
    {"acc_retain", 2, &eval::MetricsReport::acc_retain},
};

}  // namespace

json metrics_to_json(const eval::MetricsReport& r) {
  json j;
  for (const auto& col : kColumns) j[col.name] = r.*(col.field);
  j["dropped_forget_queries"] = r.dropped_forget_queries;
  j["dropped_retain_queries"] = r.dropped_retain_queries;
  return j;
}

eval::MetricsReport metrics_from_json(const json& j) {
  eval::MetricsReport r;
  for (const auto& col : kColumns) r.*(col.field) = j.at(col.name).get<double>();
  r.dropped_forget_queries = j.at("dropped_forget_queries").get<std::size_t>();
  r.dropped_retain_queries = j.at("dropped_retain_queries").get<std::size_t>();
  return r;
}

json pair_to_json(const eval::ReportPair& pair, const json& meta) {
  json j;
  j["before"] = metrics_to_json(pair.before);
  j["after"] = metrics_to_json(pair.after);
  json deltas;
  for (const auto& col : kColumns)
    deltas[col.name] = pair.before.*(col.field) - pair.after.*(col.field);
  j["delta"] = deltas;
  for (const auto& [k, v] : meta.items()) j[k] = v;
  return j;
}

std::string pair_to_markdown(const eval::ReportPair& pair,
                             const std::string& title) {
  std::ostringstream out;
  out << "## " << title << "\n\n";
  out << "| Metric | Before | After | Delta |\n";
  out << "|---|---:|---:|---:|\n";
  for (const auto& col : kColumns) {
    const double b = pair.before.*(col.field);
    const double a = pair.after.*(col.field);
    out << "| " << col.name << " | " << fmt(b, col.decimals) << " | "
        << fmt(a, col.decimals) << " | " << fmt(b - a, col.decimals) << " |\n";
  }
  out << "\nDropped queries (after): forget " << pair.after.dropped_forget_queries
      << ", retain " << pair.after.dropped_retain_queries << "\n";
  return out.str();
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  if (values.empty()) return a;
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - a.mean) * (v - a.mean);
  a.stddev = std::sqrt(sq / static_cast<double>(values.size()));
  return a;
}

json aggregate_to_json(const std::vector<eval::ReportPair>& pairs,
                       const json& meta) {
  json j;
  for (const char* phase : {"before", "after"}) {
    json section;
    for (const auto& col : kColumns) {
      std::vector<double> vals;
      for (const auto& p : pairs) {
        const auto& rep = std::string(phase) == "before" ? p.before : p.after;
        vals.push_back(rep.*(col.field));
      }
      const Aggregate a = aggregate(vals);
      section[col.name] = {{"mean", a.mean}, {"std", a.stddev}};
    }
    j[phase] = section;
  }
  j["runs"] = pairs.size();
  for (const auto& [k, v] : meta.items()) j[k] = v;
  return j;
}

std::string aggregate_to_markdown(const std::vector<eval::ReportPair>& pairs,
                                  const std::string& title) {
  std::ostringstream out;
  out << "## " << title << " (mean ± std over " << pairs.size()
      << " forget-set draws)\n\n";
  out << "| Metric | Before | After |\n";
  out << "|---|---:|---:|\n";
  for (const auto& col : kColumns) {
    std::vector<double> before, after;
    for (const auto& p : pairs) {
      before.push_back(p.before.*(col.field));
      after.push_back(p.after.*(col.field));
    }
    const Aggregate b = aggregate(before);
    const Aggregate a = aggregate(after);
    out << "| " << col.name << " | " << fmt(b.mean, col.decimals) << " ± "
        << fmt(b.stddev, col.decimals) << " | " << fmt(a.mean, col.decimals)
        << " ± " << fmt(a.stddev, col.decimals) << " |\n";
  }
  return out.str();
}

json run_record(const unlearn::UnlearnResult& res, const json& meta) {
  json j;
  j["config"] = config::unlearn_to_json(res.config);
  j["loss_trace"] = res.loss_trace;
  j["iterations_completed"] = res.loss_trace.size();
  j["wall_time_sec"] = res.wall_time_sec;
  j["aborted"] = !res.abort_reason.empty();
  if (!res.abort_reason.empty()) j["abort_reason"] = res.abort_reason;
  j["empty_positive_batches"] = res.empty_positive_batches;
  for (const auto& [k, v] : meta.items()) j[k] = v;
  return j;
}

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

// Compactness tracks retrieval quality; the reports log how strongly, for
// mAP and R@1 separately, across the completed cells.
json cs_correlations(const std::vector<SweepRow>& rows) {
  std::vector<double> cs, map, r1;
  for (const auto& r : rows) {
    if (r.failed) continue;
    cs.push_back(r.cs_f);
    map.push_back(r.map_f);
    r1.push_back(r.r1_f);
  }
  if (cs.size() < 3) return nullptr;
  return json{{"cs_vs_map_forget", pearson(cs, map)},
              {"cs_vs_r1_forget", pearson(cs, r1)},
              {"rows_used", cs.size()}};
}

}  // namespace

json sweep_to_json(const std::vector<SweepRow>& rows, const json& meta) {
  json arr = json::array();
  for (const auto& r : rows) {
    json row;
    row["cell"] = r.cell_label;
    row["cell_hash"] = config::hash_hex(r.cell_hash);
    row["failed"] = r.failed;
    if (r.failed) {
      row["failure_reason"] = r.failure_reason;
    } else {
      row["map_f"] = r.map_f;
      row["r1_f"] = r.r1_f;
      row["r1_retain"] = r.r1_retain;
      row["cs_f"] = r.cs_f;
      row["cs_r"] = r.cs_r;
      row["acc_f"] = r.acc_f;
      row["acc_r"] = r.acc_r;
    }
    arr.push_back(row);
  }
  json j;
  j["rows"] = arr;
  const json corr = cs_correlations(rows);
  if (!corr.is_null()) j["correlations"] = corr;
  for (const auto& [k, v] : meta.items()) j[k] = v;
  return j;
}

std::string sweep_to_markdown(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "| Cell | mAP_f | R@1_f | R@1_retain | CS_f | CS_r | Acc_f | Acc_r |\n";
  out << "|---|---:|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& r : rows) {
    out << "| " << r.cell_label << " | ";
    if (r.failed) {
      out << "failed: " << r.failure_reason << " | | | | | | |\n";
    } else {
      out << fmt(r.map_f, 1) << " | " << fmt(r.r1_f, 1) << " | "
          << fmt(r.r1_retain, 1) << " | " << fmt(r.cs_f, 3) << " | "
          << fmt(r.cs_r, 3) << " | " << fmt(r.acc_f, 1) << " | "
          << fmt(r.acc_r, 1) << " |\n";
    }
  }
  const json corr = cs_correlations(rows);
  if (!corr.is_null()) {
    out << "\nForget-CS correlation across cells: mAP "
        << fmt(corr.at("cs_vs_map_forget").get<double>(), 3) << ", R@1 "
        << fmt(corr.at("cs_vs_r1_forget").get<double>(), 3) << "\n";
  }
  return out.str();
}

}  // namespace disperse::report
