#include "vrt/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "vrt/io.hpp"

namespace vrt {

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  return out;
}

}  // namespace

// --- io helpers -------------------------------------------------------------

std::uint64_t fnv1a64_str(const std::string& s) {
  return fnv1a64(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

std::uint64_t fnv1a64_file(const std::string& path) {
  return fnv1a64_str(read_text_file(path));
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  auto out = open_out(path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

// --- json -------------------------------------------------------------------

void write_json_file(const OrderedJson& doc, const std::string& path) {
  auto out = open_out(path);
  out << doc.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

OrderedJson load_json_file(const std::string& path) {
  return OrderedJson::parse(read_text_file(path));
}

OrderedJson eval_report_json(const EvalReport& report) {
  OrderedJson j;
  j["schema_version"] = kReportSchemaVersion;
  j["per_dimension_rate"] = report.per_dimension_rate;
  j["overall_rate"] = report.overall_rate;
  j["mean_iterations_per_success"] = report.mean_iterations_per_success;
  j["mean_seconds_per_success"] = report.mean_seconds_per_success;
  j["n_targets"] = report.n_targets;
  j["n_success"] = report.n_success;
  return j;
}

OrderedJson single_step_json(const SingleStepEval& eval,
                             const std::string& model_name) {
  OrderedJson j;
  j["schema_version"] = kReportSchemaVersion;
  j["model"] = model_name;
  j["report"] = eval_report_json(eval.report);
  OrderedJson records = OrderedJson::array();
  for (const auto& r : eval.records) {
    OrderedJson rec;
    rec["dim"] = r.entry.dim;
    rec["bin"] = r.entry.bin;
    rec["success"] = r.success;
    rec["iterations"] = r.iterations;
    rec["seconds"] = r.seconds;
    rec["matched_mask"] = r.matched_mask;
    rec["final_loss"] = r.final_loss;
    rec["final_tokens"] = r.final_tokens;
    records.push_back(std::move(rec));
  }
  j["records"] = std::move(records);
  return j;
}

void write_single_step_csv(const SingleStepEval& eval,
                           const std::string& path) {
  auto out = open_out(path);
  out << "dim,bin,success,iterations,seconds,matched_mask,final_loss\n";
  for (const auto& r : eval.records)
    out << r.entry.dim << ',' << r.entry.bin << ',' << (r.success ? 1 : 0)
        << ',' << r.iterations << ',' << fmt(r.seconds) << ','
        << r.matched_mask << ',' << fmt(r.final_loss) << '\n';
}

void write_eval_summary_csv(
    std::span<const std::pair<std::string, EvalReport>> rows,
    const std::string& path) {
  auto out = open_out(path);
  out << "model,overall_rate,mean_iterations_per_success,"
         "mean_seconds_per_success,n_targets,n_success";
  int dims = rows.empty() ? 0
                          : static_cast<int>(rows[0].second.per_dimension_rate.size());
  for (int d = 0; d < dims; ++d) out << ",dim" << d << "_rate";
  out << '\n';
  for (const auto& [name, rep] : rows) {
    out << name << ',' << fmt(rep.overall_rate) << ','
        << fmt(rep.mean_iterations_per_success) << ','
        << fmt(rep.mean_seconds_per_success) << ',' << rep.n_targets << ','
        << rep.n_success;
    for (double v : rep.per_dimension_rate) out << ',' << fmt(v);
    out << '\n';
  }
}

void write_budget_ablation_csv(const BudgetAblation& ablation,
                               const std::string& model_name,
                               const std::string& path) {
  auto out = open_out(path);
  out << "model,budget,overall_rate,mean_iterations_per_success,n_targets,"
         "n_success\n";
  for (std::size_t i = 0; i < ablation.budgets.size(); ++i) {
    const EvalReport& rep = ablation.reports[i];
    out << model_name << ',' << ablation.budgets[i] << ','
        << fmt(rep.overall_rate) << ',' << fmt(rep.mean_iterations_per_success)
        << ',' << rep.n_targets << ',' << rep.n_success << '\n';
  }
}

void write_persistence_csv(const PersistenceReport& report,
                           const std::string& model_name,
                           const std::string& path) {
  auto out = open_out(path);
  out << "model,r,strategy,attack_success,iterations,seen_match_rate,"
         "unseen_match_rate,baseline,ratio_to_baseline,seen_steps\n";
  for (const auto& c : report.cells)
    out << model_name << ',' << c.r << ',' << to_string(c.strategy) << ','
        << (c.attack_success ? 1 : 0) << ',' << c.iterations << ','
        << fmt(c.seen_match_rate) << ',' << fmt(c.unseen_match_rate) << ','
        << fmt(c.baseline) << ',' << fmt(c.ratio_to_baseline) << ','
        << c.seen_steps << '\n';
}

OrderedJson persistence_json(const PersistenceReport& report,
                             const std::string& model_name) {
  OrderedJson j;
  j["schema_version"] = kReportSchemaVersion;
  j["model"] = model_name;
  j["target_tokens"] = report.target;
  j["baseline"] = report.baseline;
  OrderedJson cells = OrderedJson::array();
  for (const auto& c : report.cells) {
    OrderedJson cj;
    cj["r"] = c.r;
    cj["strategy"] = to_string(c.strategy);
    cj["attack_success"] = c.attack_success;
    cj["iterations"] = c.iterations;
    cj["seen_match_rate"] = c.seen_match_rate;
    cj["unseen_match_rate"] = c.unseen_match_rate;
    cj["ratio_to_baseline"] = std::isinf(c.ratio_to_baseline)
                                  ? OrderedJson("inf")
                                  : OrderedJson(c.ratio_to_baseline);
    cj["seen_steps"] = c.seen_steps;
    cells.push_back(std::move(cj));
  }
  j["cells"] = std::move(cells);
  return j;
}

void write_transfer_records_jsonl(const TransferEval& eval,
                                  const std::string& path) {
  auto out = open_out(path);
  for (const auto& rec : eval.records) {
    OrderedJson j;
    j["target_bins"] = rec.target_bins;
    j["source_success"] = rec.source_success;
    j["target_model"] = rec.target_model;
    auto probe = [](const TransferProbe& p) {
      OrderedJson pj;
      pj["decoded"] = p.decoded;
      pj["l2_first6"] = p.l2_first6;
      return pj;
    };
    j["nominal"] = probe(rec.nominal);
    j["optimized"] = probe(rec.optimized);
    j["random"] = probe(rec.random);
    out << j.dump() << '\n';
  }
}

OrderedJson transfer_summary_json(const TransferEval& eval) {
  auto kind = [](const TransferKindSummary& s) {
    OrderedJson j;
    j["mean_action_converged"] = s.mean_action_converged;
    j["mean_action_unconverged"] = s.mean_action_unconverged;
    j["mean_l2_converged"] = s.mean_l2_converged;
    j["mean_l2_unconverged"] = s.mean_l2_unconverged;
    j["n_converged"] = s.n_converged;
    j["n_unconverged"] = s.n_unconverged;
    return j;
  };
  OrderedJson j;
  j["schema_version"] = kReportSchemaVersion;
  j["n_source_success"] = eval.n_source_success;
  j["n_records"] = eval.records.size();
  j["nominal"] = kind(eval.nominal);
  j["optimized"] = kind(eval.optimized);
  j["random"] = kind(eval.random);
  return j;
}

void write_defense_csv(
    std::span<const std::pair<std::string, DefenseEval>> per_model,
    const std::string& path) {
  auto out = open_out(path);
  out << "model,defense,asr,undefended_asr,nominal_pass_rate,threshold,auc\n";
  for (const auto& [name, eval] : per_model)
    for (const auto& cell : eval.cells)
      out << name << ',' << to_string(cell.mode) << ',' << fmt(cell.asr) << ','
          << fmt(eval.undefended_asr) << ',' << fmt(cell.nominal_pass_rate)
          << ',' << fmt(cell.threshold) << ',' << fmt(cell.auc) << '\n';
}

void write_comparison_csv(std::span<const ModelComparison> rows,
                          const std::string& path) {
  auto out = open_out(path);
  out << "model,overall_asr,pct_change_vs_base\n";
  for (const auto& row : rows)
    out << row.name << ',' << fmt(row.asr) << ','
        << fmt(row.pct_change_vs_base) << '\n';
}

void write_failure_grid_csv(std::span<const FailureCell> cells,
                            const std::string& path) {
  auto out = open_out(path);
  out << "dim,bin,success,at_quantile_edge,zero_dim_clamped\n";
  for (const auto& c : cells)
    out << c.dim << ',' << c.bin << ',' << (c.success ? 1 : 0) << ','
        << (c.at_quantile_edge ? 1 : 0) << ',' << (c.zero_dim_clamped ? 1 : 0)
        << '\n';
}

}  // namespace vrt
