#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "vrt/attack.hpp"
#include "vrt/defense.hpp"
#include "vrt/env.hpp"
#include "vrt/harness.hpp"
#include "vrt/io.hpp"
#include "vrt/model.hpp"
#include "vrt/report.hpp"
#include "vrt/threadpool.hpp"
#include "vrt/trainer.hpp"

namespace vrt_cli {

namespace {

namespace fs = std::filesystem;
using namespace vrt;
using OrderedJson = nlohmann::ordered_json;

struct CommonOpts {
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
};

std::string out_path(const CommonOpts& o, const std::string& name) {
  fs::create_directories(o.out_dir);
  return (fs::path(o.out_dir) / name).string();
}

// Every run records its exact configuration and input hashes.
void write_manifest(const CommonOpts& o, const std::string& subcommand,
                    const OrderedJson& config,
                    const std::vector<std::string>& checkpoint_paths) {
  OrderedJson m;
  m["schema_version"] = kReportSchemaVersion;
  m["tool_version"] = kToolVersion;
  m["subcommand"] = subcommand;
  m["seed"] = o.seed;
  m["threads"] = o.threads > 0 ? o.threads
                               : static_cast<int>(default_thread_count());
  m["config"] = config;
  m["config_hash"] = hex64(fnv1a64_str(config.dump()));
  OrderedJson hashes = OrderedJson::object();
  for (const auto& p : checkpoint_paths)
    hashes[p] = hex64(fnv1a64_file(p));
  m["checkpoint_hashes"] = std::move(hashes);
  write_json_file(m, out_path(o, "manifest.json"));
}

std::vector<int> task_set_by_name(const std::string& name) {
  if (name == "base") return base_task_set();
  if (name.rfind("ft", 0) == 0 && name.size() == 3)
    return finetune_task_set(name[2] - '0');
  throw std::invalid_argument("unknown task set: " + name +
                              " (expected base|ft0..ft3)");
}

TargetGrid grid_from_spec(const std::string& spec, std::uint64_t seed) {
  if (spec == "full") return TargetGrid::full();
  if (spec.rfind("sample:", 0) == 0)
    return TargetGrid::subsample(std::stoi(spec.substr(7)), seed);
  throw std::invalid_argument("bad grid spec: " + spec +
                              " (expected full|sample:N)");
}

TargetEntry parse_target(const std::string& s) {
  // "dim=3,bin=255"
  TargetEntry e;
  bool have_dim = false, have_bin = false;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    auto eq = part.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("bad target spec: " + s);
    std::string key = part.substr(0, eq);
    int value = std::stoi(part.substr(eq + 1));
    if (key == "dim") {
      e.dim = value;
      have_dim = true;
    } else if (key == "bin") {
      e.bin = value;
      have_bin = true;
    } else {
      throw std::invalid_argument("bad target key: " + key);
    }
  }
  if (!have_dim || !have_bin)
    throw std::invalid_argument("target spec needs dim= and bin=: " + s);
  return e;
}

ActionVector parse_action(const std::string& s) {
  ActionVector a;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) a.push_back(std::stod(part));
  if (a.size() != 7)
    throw std::invalid_argument("target action needs 7 comma-separated values");
  return a;
}

VLAModel load_model(const std::string& path) {
  return load_checkpoint(path).model;
}

// --- gen-data ------------------------------------------------------------------

int cmd_gen_data(const CommonOpts& o, const std::string& tasks_name, int n) {
  auto tasks = task_set_by_name(tasks_name);
  auto dataset = generate_dataset(tasks, n, o.seed);
  save_dataset(dataset, out_path(o, "dataset.jsonl"));
  NormalizationStats stats = compute_norm_stats(dataset);
  OrderedJson sj;
  sj["schema_version"] = kReportSchemaVersion;
  sj["q01"] = stats.q01;
  sj["q99"] = stats.q99;
  write_json_file(sj, out_path(o, "stats.json"));

  OrderedJson cfg;
  cfg["tasks"] = tasks_name;
  cfg["n_trajectories"] = n;
  write_manifest(o, "gen-data", cfg, {});
  std::cout << "wrote " << out_path(o, "dataset.jsonl") << " (" << dataset.size()
            << " trajectories)\n";
  return 0;
}

// --- train / finetune ------------------------------------------------------------

int cmd_train(const CommonOpts& o, TrainConfig tc, const std::string& base) {
  tc.seed = o.seed;
  tc.threads = o.threads;
  tc.out_checkpoint = out_path(o, "checkpoint.bin");
  tc.metrics_path = out_path(o, "metrics.csv");
  if (!base.empty()) {
    tc.init_checkpoint = base;
    tc.recompute_stats = true;
  }
  TrainResult result = train(tc);

  OrderedJson cfg;
  cfg["dataset"] = tc.dataset_path;
  cfg["dataset_hash"] = hex64(fnv1a64_file(tc.dataset_path));
  cfg["epochs"] = tc.epochs;
  cfg["lr"] = tc.lr;
  cfg["batch_size"] = tc.batch_size;
  cfg["lm_weight"] = tc.lm_weight;
  cfg["init_checkpoint"] = base;
  write_manifest(o, base.empty() ? "train" : "finetune", cfg,
                 {tc.out_checkpoint});
  std::cout << "final holdout accuracy "
            << result.final_holdout_accuracy << "\n";
  return 0;
}

// --- attack ------------------------------------------------------------------------

int cmd_attack(const CommonOpts& o, const std::string& ckpt,
               const std::string& target_spec, const std::string& action_spec,
               AttackConfig acfg, int env_task, std::uint64_t env_seed,
               const std::string& instruction_override) {
  VLAModel model = load_model(ckpt);
  HarnessContext ctx;
  ctx.env_task = env_task;
  ctx.env_seed = env_seed;
  ctx.workers = o.threads;
  acfg.seed = o.seed;
  acfg.eval_threads = o.threads;

  ActionVector target_action;
  if (!action_spec.empty()) {
    target_action = parse_action(action_spec);
  } else {
    target_action =
        realize_target(parse_target(target_spec), model.stats, model.vocab);
  }
  std::string instruction = instruction_override.empty()
                                ? task_catalog()[env_task].instruction
                                : instruction_override;

  Tensor z = attack_image(model, ctx);
  AttackResult result =
      single_step_attack(model, z, target_action, instruction, acfg);
  write_attack_log(result, out_path(o, "attack_log.jsonl"));

  OrderedJson rj;
  rj["schema_version"] = kReportSchemaVersion;
  rj["success"] = result.success;
  rj["iterations_used"] = result.iterations_used;
  rj["wall_seconds"] = result.wall_seconds;
  rj["matched_mask"] = result.matched_mask;
  rj["final_tokens"] = result.prompt.tokens;
  rj["prompt_text"] = prompt_text(model.vocab, result.prompt);
  write_json_file(rj, out_path(o, "result.json"));

  OrderedJson cfg;
  cfg["checkpoint"] = ckpt;
  cfg["target"] = target_spec.empty() ? action_spec : target_spec;
  cfg["budget"] = acfg.token_budget;
  cfg["mode"] = to_string(acfg.mode);
  cfg["max_iters"] = acfg.max_iters;
  cfg["top_k"] = acfg.top_k;
  cfg["candidate_batch"] = acfg.candidate_batch;
  cfg["env_task"] = env_task;
  cfg["env_seed"] = env_seed;
  cfg["instruction"] = instruction;
  write_manifest(o, "attack", cfg, {ckpt});
  std::cout << (result.success ? "success" : "no match") << " after "
            << result.iterations_used << " iterations\n";
  return 0;
}

// --- rollout -------------------------------------------------------------------------

int cmd_rollout(const CommonOpts& o, const std::string& ckpt,
                const std::string& target_spec, AttackConfig acfg, int r,
                const std::string& strategy_name, int horizon, int env_task,
                std::uint64_t env_seed) {
  VLAModel model = load_model(ckpt);
  HarnessContext ctx;
  ctx.env_task = env_task;
  ctx.env_seed = env_seed;
  ctx.workers = o.threads;
  acfg.seed = o.seed;
  acfg.eval_threads = o.threads;
  SeedStrategy strategy = seed_strategy_from_string(strategy_name);

  ActionVector target_action =
      realize_target(parse_target(target_spec), model.stats, model.vocab);
  ActionTokens target =
      action_to_tokens(target_action, model.stats, model.vocab);

  auto seeds = persistence_seed_images(model, ctx, strategy, r, target_action);
  AttackResult attack = persistence_attack(model, seeds, target_action,
                                           task_catalog()[env_task].instruction,
                                           acfg);
  write_attack_log(attack, out_path(o, "attack_log.jsonl"));

  RolloutTrace trace = attacked_rollout(model, attack.prompt, target, ctx,
                                        strategy, r, target_action, horizon);
  {
    std::ofstream out(out_path(o, "trace.jsonl"), std::ios::trunc);
    for (const auto& s : trace.steps) {
      OrderedJson j;
      j["step"] = s.step;
      j["image_hash"] = hex64(s.image_hash);
      j["decoded"] = s.decoded;
      j["match"] = s.match;
      j["seen"] = s.seen;
      j["burnin_probe"] = s.burnin_probe;
      out << j.dump() << '\n';
    }
  }
  OrderedJson rj;
  rj["schema_version"] = kReportSchemaVersion;
  rj["attack_success"] = attack.success;
  rj["seen_match_rate"] = trace.seen_match_rate;
  rj["unseen_match_rate"] = trace.unseen_match_rate;
  rj["seen_steps"] = trace.seen_steps;
  write_json_file(rj, out_path(o, "result.json"));

  OrderedJson cfg;
  cfg["checkpoint"] = ckpt;
  cfg["target"] = target_spec;
  cfg["r"] = r;
  cfg["strategy"] = strategy_name;
  cfg["horizon"] = horizon;
  cfg["env_task"] = env_task;
  cfg["env_seed"] = env_seed;
  cfg["budget"] = acfg.token_budget;
  write_manifest(o, "rollout", cfg, {ckpt});
  std::cout << "seen match rate " << trace.seen_match_rate
            << ", unseen match rate " << trace.unseen_match_rate << "\n";
  return 0;
}

// --- defend --------------------------------------------------------------------------

int cmd_defend(const CommonOpts& o, const std::string& ckpt,
               const std::string& defense_name, const std::string& instruction,
               const std::string& suffix_csv, int env_task,
               std::uint64_t env_seed) {
  VLAModel model = load_model(ckpt);
  HarnessContext ctx;
  ctx.env_task = env_task;
  ctx.env_seed = env_seed;
  Tensor z = attack_image(model, ctx);

  std::vector<int> suffix;
  if (!suffix_csv.empty()) {
    std::stringstream ss(suffix_csv);
    std::string part;
    while (std::getline(ss, part, ',')) suffix.push_back(std::stoi(part));
  }
  Prompt prompt = render_prompt(model.vocab, model.config, instruction, suffix,
                                PromptMode::kSuffix);

  DefenseConfig dc;
  dc.mode = defense_mode_from_string(defense_name);
  dc.seed = o.seed;
  if (dc.mode == DefenseMode::kLlmOnlyFilter ||
      dc.mode == DefenseMode::kMultimodalFilter) {
    std::vector<std::string> catalog;
    for (const auto& t : task_catalog()) catalog.push_back(t.instruction);
    dc.perplexity_threshold = calibrate_threshold(model, catalog, dc.mode, &z);
  }
  DefenseDecision d = defended_generate(model, prompt, z, dc);
  append_defense_log(d, out_path(o, "decisions.jsonl"));

  OrderedJson cfg;
  cfg["checkpoint"] = ckpt;
  cfg["defense"] = defense_name;
  cfg["instruction"] = instruction;
  cfg["suffix"] = suffix;
  cfg["env_task"] = env_task;
  cfg["env_seed"] = env_seed;
  write_manifest(o, "defend", cfg, {ckpt});
  std::cout << (d.accepted ? "accepted" : "rejected")
            << " (perplexity " << d.perplexity << ")\n";
  return 0;
}

// --- eval ----------------------------------------------------------------------------

AttackConfig attack_config_from_json(const OrderedJson& j) {
  AttackConfig cfg;
  cfg.token_budget = j.value("budget", 20);
  cfg.top_k = j.value("top_k", 64);
  cfg.candidate_batch = j.value("candidate_batch", 128);
  cfg.max_iters = j.value("max_iters", 500);
  cfg.mode = prompt_mode_from_string(j.value("mode", "replace"));
  cfg.seed = j.value("seed", 0);
  return cfg;
}

HarnessContext context_from_json(const OrderedJson& j, int threads) {
  HarnessContext ctx;
  ctx.env_task = j.value("env_task", 0);
  ctx.env_seed = j.value("env_seed", 0);
  ctx.burn_in_steps = j.value("burn_in", 10);
  ctx.workers = threads;
  return ctx;
}

int cmd_eval(const CommonOpts& o, const std::string& config_path) {
  OrderedJson config = load_json_file(config_path);
  const std::string experiment = config.at("experiment");
  AttackConfig acfg = attack_config_from_json(config);
  if (o.seed_set) acfg.seed = o.seed;
  HarnessContext ctx = context_from_json(config, o.threads);
  std::vector<std::string> used_ckpts;

  auto load_named = [&](const std::string& key) {
    std::map<std::string, VLAModel> models;
    for (const auto& [name, path] :
         config.at(key).get<std::map<std::string, std::string>>()) {
      models.emplace(name, load_model(path));
      used_ckpts.push_back(path);
    }
    return models;
  };

  if (experiment == "single-step") {
    std::string ckpt = config.at("checkpoint");
    used_ckpts.push_back(ckpt);
    VLAModel model = load_model(ckpt);
    TargetGrid grid = grid_from_spec(config.value("grid", "sample:128"), acfg.seed);
    SingleStepEval eval = eval_single_step(model, grid, acfg, ctx);
    write_single_step_csv(eval, out_path(o, "records.csv"));
    write_json_file(single_step_json(eval, ckpt), out_path(o, "records.json"));
    std::pair<std::string, EvalReport> row{ckpt, eval.report};
    write_eval_summary_csv(std::span(&row, 1), out_path(o, "summary.csv"));
    auto cells = failure_grid(eval.records, model.stats);
    write_failure_grid_csv(cells, out_path(o, "failure_grid.csv"));
  } else if (experiment == "budget-ablation") {
    std::string ckpt = config.at("checkpoint");
    used_ckpts.push_back(ckpt);
    VLAModel model = load_model(ckpt);
    TargetGrid grid = grid_from_spec(config.value("grid", "sample:64"), acfg.seed);
    std::vector<int> budgets =
        config.value("budgets", std::vector<int>{5, 10, 15, 20});
    BudgetAblation ab = budget_ablation(model, grid, acfg, ctx, budgets);
    write_budget_ablation_csv(ab, ckpt, out_path(o, "ablation.csv"));
  } else if (experiment == "persistence") {
    std::string ckpt = config.at("checkpoint");
    used_ckpts.push_back(ckpt);
    VLAModel model = load_model(ckpt);
    ActionVector target_action;
    if (config.contains("target")) {
      TargetEntry e{config["target"].at("dim"), config["target"].at("bin")};
      target_action = realize_target(e, model.stats, model.vocab);
    } else {
      // Census-based selection: the most frequent nominal action within the
      // configured frequency band.
      auto band = config.value("target_freq_band",
                               std::vector<double>{0.02, 0.35});
      auto census = nominal_action_census(model, ctx,
                                          config.value("census_rollouts", 10));
      const ActionCensusEntry* pick = nullptr;
      for (const auto& e : census)
        if (e.freq >= band[0] && e.freq <= band[1]) {
          pick = &e;
          break;
        }
      if (pick == nullptr && !census.empty()) pick = &census.front();
      if (pick == nullptr)
        throw std::runtime_error("persistence: empty action census");
      target_action = tokens_to_action(pick->action, model.stats, model.vocab);
    }
    std::vector<int> rs = config.value("rs", std::vector<int>{1, 2, 3});
    std::vector<SeedStrategy> strategies;
    for (const auto& s : config.value(
             "strategies", std::vector<std::string>{"burnin", "first-steps"}))
      strategies.push_back(seed_strategy_from_string(s));
    PersistenceReport rep = eval_persistence(
        model, target_action, acfg, ctx, rs, strategies,
        config.value("horizon", 80), config.value("n_baseline", 50));
    write_persistence_csv(rep, ckpt, out_path(o, "persistence.csv"));
    write_json_file(persistence_json(rep, ckpt),
                    out_path(o, "persistence.json"));
  } else if (experiment == "transfer") {
    auto models = load_named("checkpoints");
    std::vector<const VLAModel*> sources, heldout;
    std::vector<std::string> heldout_names;
    for (const auto& name : config.at("sources"))
      sources.push_back(&models.at(name.get<std::string>()));
    for (const auto& name : config.at("heldout")) {
      heldout_names.push_back(name.get<std::string>());
      heldout.push_back(&models.at(heldout_names.back()));
    }
    TargetGrid grid = grid_from_spec(config.value("grid", "sample:12"), acfg.seed);
    TransferEval eval =
        eval_transfer(sources, heldout, heldout_names, grid, acfg, ctx);
    write_transfer_records_jsonl(eval, out_path(o, "transfer_records.jsonl"));
    write_json_file(transfer_summary_json(eval),
                    out_path(o, "transfer_summary.json"));
  } else if (experiment == "defense") {
    auto models = load_named("checkpoints");
    std::vector<DefenseMode> modes;
    for (const auto& d : config.value(
             "defenses",
             std::vector<std::string>{"none", "ppl-llm", "ppl-mm", "smooth"}))
      modes.push_back(defense_mode_from_string(d));
    TargetGrid grid = grid_from_spec(config.value("grid", "sample:120"), acfg.seed);
    std::vector<std::pair<std::string, DefenseEval>> rows;
    for (const auto& [name, model] : models) {
      SingleStepEval attacks = eval_single_step(model, grid, acfg, ctx);
      rows.emplace_back(
          name, eval_defenses(model, attacks.records, acfg, ctx, modes,
                              config.value("smoothing_copies", 6),
                              config.value("perturbation_rate", 0.10)));
    }
    write_defense_csv(rows, out_path(o, "defense.csv"));
  } else if (experiment == "base-vs-finetune") {
    auto models = load_named("checkpoints");
    const VLAModel& base = models.at("base");
    std::vector<const VLAModel*> finetunes;
    std::vector<std::string> names;
    for (const auto& [name, model] : models)
      if (name != "base") {
        names.push_back(name);
        finetunes.push_back(&model);
      }
    TargetGrid grid = grid_from_spec(config.value("grid", "sample:128"), acfg.seed);
    auto rows = compare_base_vs_finetune(base, finetunes, names, grid, acfg, ctx);
    write_comparison_csv(rows, out_path(o, "comparison.csv"));
  } else if (experiment == "suffix-trials") {
    std::string ckpt = config.at("checkpoint");
    used_ckpts.push_back(ckpt);
    VLAModel model = load_model(ckpt);
    SingleStepEval eval = suffix_mode_trials(model, acfg, ctx);
    write_single_step_csv(eval, out_path(o, "suffix_trials.csv"));
    std::pair<std::string, EvalReport> row{ckpt, eval.report};
    write_eval_summary_csv(std::span(&row, 1),
                           out_path(o, "suffix_summary.csv"));
  } else {
    throw std::invalid_argument("unknown experiment: " + experiment);
  }

  write_manifest(o, "eval", config, used_ckpts);
  std::cout << "eval '" << experiment << "' written to " << o.out_dir << "\n";
  return 0;
}

// --- report ---------------------------------------------------------------------------

int cmd_report(const CommonOpts& o, const std::string& records_path) {
  OrderedJson doc = load_json_file(records_path);
  SingleStepEval eval;
  for (const auto& rec : doc.at("records")) {
    AttackRecord r;
    r.entry.dim = rec.at("dim");
    r.entry.bin = rec.at("bin");
    r.success = rec.at("success");
    r.iterations = rec.at("iterations");
    r.seconds = rec.at("seconds");
    r.matched_mask = rec.at("matched_mask");
    r.final_loss = rec.at("final_loss");
    eval.records.push_back(std::move(r));
  }
  int dof = doc.at("report").at("per_dimension_rate").size();
  eval.report = aggregate_records(eval.records, dof);
  std::pair<std::string, EvalReport> row{doc.value("model", "model"),
                                         eval.report};
  write_eval_summary_csv(std::span(&row, 1), out_path(o, "summary.csv"));
  write_single_step_csv(eval, out_path(o, "records.csv"));

  OrderedJson cfg;
  cfg["records"] = records_path;
  write_manifest(o, "report", cfg, {});
  std::cout << "re-aggregated " << eval.records.size() << " records\n";
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{std::string(kToolVersion) +
               " - token-level attacks on a toy vision-language-action stack"};
  app.require_subcommand(1);

  CommonOpts common;
  auto add_common = [&common](CLI::App* sub, bool needs_out = true) {
    if (needs_out)
      sub->add_option("--out", common.out_dir, "output directory")->required();
    sub->add_option("--seed", common.seed, "run seed (recorded in manifest)")
        ->required();
    sub->add_option("--threads", common.threads,
                    "worker threads (default: VLA_REDTEAM_THREADS or cores)");
  };

  // gen-data
  std::string tasks_name = "base";
  int n_traj = 500;
  auto* gen = app.add_subcommand("gen-data", "generate an expert dataset");
  add_common(gen);
  gen->add_option("--tasks", tasks_name, "task set: base|ft0..ft3");
  gen->add_option("--n", n_traj, "number of trajectories");

  // train / finetune
  TrainConfig tc;
  std::string base_ckpt;
  auto* train_cmd = app.add_subcommand("train", "train the base model");
  add_common(train_cmd);
  train_cmd->add_option("--data", tc.dataset_path, "dataset JSONL")->required();
  train_cmd->add_option("--epochs", tc.epochs);
  train_cmd->add_option("--lr", tc.lr);
  train_cmd->add_option("--batch", tc.batch_size);
  train_cmd->add_option("--lm-weight", tc.lm_weight);

  auto* ft = app.add_subcommand("finetune", "continue training on a narrow set");
  add_common(ft);
  ft->add_option("--base", base_ckpt, "base checkpoint")->required();
  ft->add_option("--data", tc.dataset_path, "narrow dataset JSONL")->required();
  ft->add_option("--epochs", tc.epochs);
  ft->add_option("--lr", tc.lr);
  ft->add_option("--batch", tc.batch_size);
  ft->add_option("--lm-weight", tc.lm_weight);

  // attack
  std::string ckpt, target_spec, action_spec, instruction_override;
  AttackConfig acfg;
  std::string mode_name = "replace";
  int env_task = 0;
  std::uint64_t env_seed = 0;
  auto* atk = app.add_subcommand("attack", "single-step GCG attack");
  add_common(atk);
  atk->add_option("--ckpt", ckpt, "model checkpoint")->required();
  atk->add_option("--target", target_spec, "one-hot target, e.g. dim=3,bin=255");
  atk->add_option("--target-action", action_spec,
                  "environment-units action, 7 comma-separated values");
  atk->add_option("--budget", acfg.token_budget);
  atk->add_option("--mode", mode_name, "suffix|replace");
  atk->add_option("--max-iters", acfg.max_iters);
  atk->add_option("--top-k", acfg.top_k);
  atk->add_option("--candidate-batch", acfg.candidate_batch);
  atk->add_option("--task", env_task);
  atk->add_option("--env-seed", env_seed);
  atk->add_option("--instruction", instruction_override);

  // rollout
  int r_images = 1, horizon = 80;
  std::string strategy_name = "burnin";
  auto* roll = app.add_subcommand("rollout", "persistence attack + rollout");
  add_common(roll);
  roll->add_option("--ckpt", ckpt, "model checkpoint")->required();
  roll->add_option("--target", target_spec, "one-hot target")->required();
  roll->add_option("--r", r_images, "seed image count (1..3)");
  roll->add_option("--strategy", strategy_name, "burnin|first-steps");
  roll->add_option("--horizon", horizon);
  roll->add_option("--budget", acfg.token_budget);
  roll->add_option("--mode", mode_name, "suffix|replace");
  roll->add_option("--max-iters", acfg.max_iters);
  roll->add_option("--task", env_task);
  roll->add_option("--env-seed", env_seed);

  // defend
  std::string defense_name = "none", instruction, suffix_csv;
  auto* def = app.add_subcommand("defend", "defended decoding of one prompt");
  add_common(def);
  def->add_option("--ckpt", ckpt, "model checkpoint")->required();
  def->add_option("--defense", defense_name, "none|ppl-llm|ppl-mm|smooth");
  def->add_option("--instruction", instruction)->required();
  def->add_option("--suffix-tokens", suffix_csv, "comma-separated token ids");
  def->add_option("--task", env_task);
  def->add_option("--env-seed", env_seed);

  // eval
  std::string config_path;
  auto* ev = app.add_subcommand("eval", "run a configured experiment");
  add_common(ev);
  ev->add_option("--config", config_path, "experiment config JSON")->required();

  // report
  std::string records_path;
  auto* rep = app.add_subcommand("report", "re-aggregate recorded results");
  add_common(rep);
  rep->add_option("--records", records_path, "records.json from an eval run")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  common.seed_set = true;

  try {
    if (gen->parsed()) return cmd_gen_data(common, tasks_name, n_traj);
    if (train_cmd->parsed()) return cmd_train(common, tc, "");
    if (ft->parsed()) return cmd_train(common, tc, base_ckpt);
    if (atk->parsed()) {
      if (target_spec.empty() == action_spec.empty())
        throw std::invalid_argument(
            "attack: exactly one of --target / --target-action is required");
      acfg.mode = prompt_mode_from_string(mode_name);
      return cmd_attack(common, ckpt, target_spec, action_spec, acfg, env_task,
                        env_seed, instruction_override);
    }
    if (roll->parsed()) {
      acfg.mode = prompt_mode_from_string(mode_name);
      return cmd_rollout(common, ckpt, target_spec, acfg, r_images,
                         strategy_name, horizon, env_task, env_seed);
    }
    if (def->parsed())
      return cmd_defend(common, ckpt, defense_name, instruction, suffix_csv,
                        env_task, env_seed);
    if (ev->parsed()) return cmd_eval(common, config_path);
    if (rep->parsed()) return cmd_report(common, records_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace vrt_cli
