#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vrt/harness.hpp"

namespace vrt {

// All emitted documents carry this schema marker.
inline constexpr int kReportSchemaVersion = 1;

using OrderedJson = nlohmann::ordered_json;

void write_json_file(const OrderedJson& doc, const std::string& path);
OrderedJson load_json_file(const std::string& path);

OrderedJson eval_report_json(const EvalReport& report);
OrderedJson single_step_json(const SingleStepEval& eval,
                             const std::string& model_name);

// Per-target rows: dim, bin, success, iterations, seconds, matched_mask.
void write_single_step_csv(const SingleStepEval& eval, const std::string& path);

// Summary table: one row per (model, report).
void write_eval_summary_csv(
    std::span<const std::pair<std::string, EvalReport>> rows,
    const std::string& path);

// Long format for the token-budget figure: model, budget, rate columns.
void write_budget_ablation_csv(const BudgetAblation& ablation,
                               const std::string& model_name,
                               const std::string& path);

// Long format for the persistence figure: r, strategy, seen/unseen rates.
void write_persistence_csv(const PersistenceReport& report,
                           const std::string& model_name,
                           const std::string& path);
OrderedJson persistence_json(const PersistenceReport& report,
                             const std::string& model_name);

void write_transfer_records_jsonl(const TransferEval& eval,
                                  const std::string& path);
OrderedJson transfer_summary_json(const TransferEval& eval);

void write_defense_csv(
    std::span<const std::pair<std::string, DefenseEval>> per_model,
    const std::string& path);

void write_comparison_csv(std::span<const ModelComparison> rows,
                          const std::string& path);

void write_failure_grid_csv(std::span<const FailureCell> cells,
                            const std::string& path);

}  // namespace vrt
