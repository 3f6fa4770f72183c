#include "vrt/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "vrt/rng.hpp"

namespace vrt {

namespace {

using json = nlohmann::ordered_json;

double clamp1(double v) { return std::min(1.0, std::max(-1.0, v)); }

double dist3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

std::array<double, 3> ee_pos(const SceneState& s) {
  return {s.pose[0], s.pose[1], s.pose[2]};
}

// Unit-gain clamped step snapped to an eighth-of-limit grid: saturates at
// +-max_step while far, then lands within max_step/16 of the target. The
// coarse grid keeps expert actions exactly classifiable from the rendered
// observation.
double controller_step(double delta, double max_step) {
  double clamped = std::min(max_step, std::max(-max_step, delta));
  const double g = max_step / 8.0;
  return std::floor(clamped / g + 0.5) * g;
}

// Per-dimension command ranges for dialed calibration steps: the widest step
// limits across the task set, so a dataset's dial actions span exactly its
// own action range and the dial level coincides with the trained bin index.
std::array<double, 7> dial_ranges(std::span<const int> tasks) {
  std::array<double, 7> r{};
  for (int id : tasks) {
    const TaskSpec& t = task_catalog().at(id);
    for (int k = 0; k < 3; ++k) r[k] = std::max(r[k], t.max_step);
    for (int k = 3; k < 6; ++k) r[k] = std::max(r[k], t.max_rot_step);
  }
  r[6] = 0.8;
  return r;
}

double dial_value(int level, double range) {
  return -range + static_cast<double>(level) * 2.0 * range / 255.0;
}

}  // namespace

const std::vector<TaskSpec>& task_catalog() {
  // Spawn boxes scale with the step limit so trajectory lengths stay similar
  // across tasks. The widest translation limit (0.26) appears in regimes 0
  // and 1, the widest rotation limit (0.20) in regimes 2 and 3; every regime
  // is strictly narrower than the base pool in at least one dimension group.
  static const std::vector<TaskSpec> catalog = [] {
    auto width = [](double s) { return std::min(0.65, 2.6 * s); };
    std::vector<TaskSpec> t(8);
    t[0] = {0, "pick up the red block", width(0.26),
            {1.2, -1.0, 0.8}, {0.1, -0.1, 0.0}, 0.26, 0.12};
    t[1] = {1, "lift the blue ball from the tray", width(0.18),
            {-0.9, 1.1, -0.7}, {0.0, 0.1, -0.1}, 0.18, 0.10};
    t[2] = {2, "move the green cube to the left bin", width(0.26),
            {1.0, 0.8, -1.2}, {-0.1, 0.0, 0.1}, 0.26, 0.13};
    t[3] = {3, "push the yellow disk to the right plate", width(0.14),
            {-0.8, -1.2, 1.0}, {0.1, 0.1, 0.0}, 0.14, 0.09};
    t[4] = {4, "place the white peg in the round slot", width(0.20),
            {1.3, 0.9, 1.1}, {0.0, -0.1, 0.1}, 0.20, 0.20};
    t[5] = {5, "stack the small brick on the tall tower", width(0.12),
            {-1.1, -0.8, 0.9}, {-0.1, 0.0, 0.0}, 0.12, 0.11};
    t[6] = {6, "slide the orange chip into the near corner", width(0.24),
            {0.9, 1.2, -1.0}, {0.1, 0.0, -0.1}, 0.24, 0.20};
    t[7] = {7, "drop the purple token in the far basket", width(0.16),
            {-1.0, 0.7, 1.2}, {0.0, 0.1, 0.1}, 0.16, 0.14};
    return t;
  }();
  return catalog;
}

std::vector<int> base_task_set() { return {0, 1, 2, 3, 4, 5, 6, 7}; }

std::vector<int> finetune_task_set(int regime) {
  if (regime < 0 || regime > 3)
    throw std::invalid_argument("finetune_task_set: regime must be 0..3");
  return {2 * regime, 2 * regime + 1};
}

SceneState reset(int task_id, std::uint64_t seed) {
  if (task_id < 0 || task_id >= static_cast<int>(task_catalog().size()))
    throw std::invalid_argument("reset: unknown task " +
                                std::to_string(task_id));
  const TaskSpec& task = task_catalog()[task_id];
  Rng rng = Rng(seed).fork(0x9e57 + static_cast<std::uint64_t>(task_id));

  SceneState s;
  s.pose[0] = rng.uniform(-0.15, 0.15);
  s.pose[1] = rng.uniform(-0.15, 0.15);
  s.pose[2] = rng.uniform(0.3, 0.8);
  for (int k = 3; k < 6; ++k) s.pose[k] = rng.uniform(-0.7, 0.7);
  s.gripper = 0.0;
  s.grasped = false;
  const double hw = task.spawn_half_width;
  s.object_pos = {rng.uniform(-hw, hw), rng.uniform(-hw, hw), kTableZ};
  // Keep the goal separated from the object so every trajectory has a real
  // carry leg.
  for (int tries = 0; tries < 100; ++tries) {
    s.goal_pos = {rng.uniform(-hw, hw), rng.uniform(-hw, hw), kGoalZ};
    double dx = s.goal_pos[0] - s.object_pos[0];
    double dy = s.goal_pos[1] - s.object_pos[1];
    if (dx * dx + dy * dy >= 0.64 * hw * hw) break;
  }
  s.step_count = 0;
  return s;
}

SceneState step(const SceneState& state, const ActionVector& a) {
  if (a.size() != 7) throw std::invalid_argument("step: action must have 7 dims");
  for (double v : a)
    if (!std::isfinite(v)) throw std::invalid_argument("step: non-finite action");

  SceneState s = state;
  for (int k = 0; k < 6; ++k) s.pose[k] = clamp1(s.pose[k] + a[k]);
  if (a[6] > 0.5) s.gripper = 1.0;
  else if (a[6] < -0.5) s.gripper = 0.0;

  if (s.gripper > 0.5) {
    if (!s.grasped && dist3(ee_pos(s), s.object_pos) <= kGraspRadius)
      s.grasped = true;
  } else {
    s.grasped = false;
  }
  if (s.grasped) s.object_pos = ee_pos(s);
  s.step_count += 1;
  return s;
}

Image render(const SceneState& s) {
  Image img;
  img.size = 16;
  img.pixels.assign(256, 0.0);

  // Blobs over rows 0..13: x -> columns, y -> rows.
  auto blob = [&img](double x, double y, double amp) {
    double cx = (x + 1.0) / 2.0 * 15.0;
    double cy = (y + 1.0) / 2.0 * 13.0;
    const double inv2s2 = 1.0 / (2.0 * 1.3 * 1.3);
    for (int r = 0; r < 14; ++r)
      for (int c = 0; c < 16; ++c) {
        double d2 = (c - cx) * (c - cx) + (r - cy) * (r - cy);
        img.pixels[r * 16 + c] += amp * std::exp(-d2 * inv2s2);
      }
  };
  blob(s.goal_pos[0], s.goal_pos[1], 0.35);
  blob(s.object_pos[0], s.object_pos[1], 0.65);
  blob(s.pose[0], s.pose[1], 1.0);

  // Gauge strip. Row 14: end-effector deltas to object and goal at coarse
  // scale ([-2,2] onto [0,1]) plus wrapped fine-scale copies for sub-pixel
  // readout. Row 15: z / rotations / gripper state, with fine rotation
  // channels.
  auto unit = [](double v) { return std::min(1.0, std::max(0.0, v)); };
  // Continuous triangle wave (8 periods over [0,1]): a fine-scale channel
  // with no wrap discontinuity, so interpolation between nearby states stays
  // meaningful.
  auto fine = [](double v) {
    double t = v * 8.0 - std::floor(v * 8.0);
    return 1.0 - std::abs(2.0 * t - 1.0);
  };
  for (int k = 0; k < 3; ++k) {
    double dobj = (s.object_pos[k] - s.pose[k] + 2.0) / 4.0;
    double dgoal = (s.goal_pos[k] - s.pose[k] + 2.0) / 4.0;
    img.pixels[14 * 16 + k] = unit(dobj);
    img.pixels[14 * 16 + 3 + k] = unit(dgoal);
    img.pixels[14 * 16 + 6 + k] = fine(unit(dobj));
    img.pixels[14 * 16 + 9 + k] = fine(unit(dgoal));
  }
  img.pixels[15 * 16 + 0] = unit((s.pose[2] + 1.0) / 2.0);
  for (int k = 0; k < 3; ++k) {
    double rot = (s.pose[3 + k] + 1.0) / 2.0;
    img.pixels[15 * 16 + 1 + k] = unit(rot);
    img.pixels[15 * 16 + 7 + k] = fine(unit(rot));
  }
  img.pixels[15 * 16 + 4] = s.gripper;
  img.pixels[15 * 16 + 5] = s.grasped ? 1.0 : 0.0;
  img.pixels[15 * 16 + 6] = unit((s.object_pos[2] + 1.0) / 2.0);
  img.pixels[15 * 16 + 10] = fine(unit((s.pose[2] + 1.0) / 2.0));

  // Calibration dial channels. In dial mode row 14 carries the commanded
  // levels instead of the delta gauges: a coarse code (level/255) and a fine
  // 16-cycle code so the level is readable exactly.
  img.pixels[15 * 16 + 15] = s.dial_active ? 1.0 : 0.0;
  if (s.dial_active) {
    for (int k = 0; k < 7; ++k) {
      double coarse = s.dial_levels[k] / 255.0;
      img.pixels[14 * 16 + k] = coarse;
      img.pixels[14 * 16 + 7 + k] = fine(coarse);
    }
    img.pixels[14 * 16 + 14] = 0.0;
    img.pixels[14 * 16 + 15] = 0.0;
  }

  for (double& p : img.pixels) p = unit(p);
  return img;
}

ActionVector scripted_expert(const SceneState& s, const TaskSpec& task) {
  ActionVector a(7, 0.0);
  const std::array<double, 3>& target = s.grasped ? s.goal_pos : s.object_pos;
  for (int k = 0; k < 3; ++k)
    a[k] = controller_step(target[k] - s.pose[k], task.max_step);
  for (int k = 0; k < 3; ++k) {
    double desired = task.rot_coef[k] * (target[k] - s.pose[k]) +
                     task.rot_offset[k];
    desired = std::min(0.85, std::max(-0.85, desired));
    a[3 + k] = controller_step(desired - s.pose[3 + k], task.max_rot_step);
  }

  bool near_object = dist3(ee_pos(s), s.object_pos) <= kGraspRadius * 0.8;
  bool delivered = dist3(s.object_pos, s.goal_pos) <= kDoneRadius;
  bool at_goal = s.grasped && dist3(s.object_pos, s.goal_pos) <= kDoneRadius * 0.7;
  if (!s.grasped && near_object && s.gripper < 0.5 && !delivered) a[6] = 0.8;
  else if (at_goal) a[6] = -0.8;
  else a[6] = -0.2;
  return a;
}

bool task_complete(const SceneState& s, const TaskSpec&) {
  return !s.grasped && s.gripper < 0.5 &&
         dist3(s.object_pos, s.goal_pos) <= kDoneRadius && s.step_count > 0;
}

std::vector<Trajectory> generate_dataset(std::span<const int> tasks,
                                         int n_trajectories,
                                         std::uint64_t seed) {
  if (n_trajectories < 1)
    throw std::invalid_argument("generate_dataset: n_trajectories must be >= 1");
  if (tasks.empty())
    throw std::invalid_argument("generate_dataset: empty task set");

  std::vector<Trajectory> out;
  out.reserve(n_trajectories);
  const std::array<double, 7> ranges = dial_ranges(tasks);
  Rng rng(seed);
  for (int i = 0; i < n_trajectories; ++i) {
    Trajectory traj;
    traj.task_id = tasks[i % tasks.size()];
    traj.seed = rng.fork(static_cast<std::uint64_t>(i)).next_u64();
    const TaskSpec& task = task_catalog()[traj.task_id];

    SceneState s = reset(traj.task_id, traj.seed);
    Rng dial_rng = Rng(traj.seed).fork(0xd1a1);
    int hold = 0;
    for (int t = 0; t < 56 && hold < 2; ++t) {
      ActionVector a = scripted_expert(s, task);
      traj.steps.emplace_back(s, a);
      s = step(s, a);
      if (task_complete(s, task)) ++hold;
    }
    // Two dialed calibration steps close every trajectory so the datasets
    // cover the full bin range in every dimension.
    for (int t = 0; t < 2; ++t) {
      s.dial_active = true;
      ActionVector a(7, 0.0);
      for (int k = 0; k < 7; ++k) {
        s.dial_levels[k] = static_cast<int>(dial_rng.next_below(256));
        a[k] = dial_value(s.dial_levels[k], ranges[k]);
      }
      traj.steps.emplace_back(s, a);
      s = step(s, a);
    }
    out.push_back(std::move(traj));
  }
  return out;
}

namespace {

json state_to_json(const SceneState& s) {
  json j;
  j["pose"] = s.pose;
  j["gripper"] = s.gripper;
  j["grasped"] = s.grasped;
  j["object"] = s.object_pos;
  j["goal"] = s.goal_pos;
  j["step"] = s.step_count;
  if (s.dial_active) j["dial"] = s.dial_levels;
  return j;
}

SceneState state_from_json(const json& j) {
  SceneState s;
  auto pose = j.at("pose").get<std::vector<double>>();
  std::copy_n(pose.begin(), 6, s.pose.begin());
  s.gripper = j.at("gripper");
  s.grasped = j.at("grasped");
  auto obj = j.at("object").get<std::vector<double>>();
  std::copy_n(obj.begin(), 3, s.object_pos.begin());
  auto goal = j.at("goal").get<std::vector<double>>();
  std::copy_n(goal.begin(), 3, s.goal_pos.begin());
  s.step_count = j.at("step");
  if (j.contains("dial")) {
    s.dial_active = true;
    auto dial = j.at("dial").get<std::vector<int>>();
    std::copy_n(dial.begin(), 7, s.dial_levels.begin());
  }
  return s;
}

}  // namespace

void save_dataset(std::span<const Trajectory> dataset, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  for (const auto& traj : dataset) {
    json j;
    j["task"] = traj.task_id;
    j["seed"] = traj.seed;
    json steps = json::array();
    for (const auto& [state, action] : traj.steps)
      steps.push_back({{"state", state_to_json(state)}, {"action", action}});
    j["steps"] = std::move(steps);
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("save_dataset: write failed: " + path);
}

std::vector<Trajectory> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  std::vector<Trajectory> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    Trajectory traj;
    traj.task_id = j.at("task");
    traj.seed = j.at("seed");
    for (const auto& st : j.at("steps"))
      traj.steps.emplace_back(state_from_json(st.at("state")),
                              st.at("action").get<std::vector<double>>());
    out.push_back(std::move(traj));
  }
  return out;
}

NormalizationStats compute_norm_stats(std::span<const Trajectory> dataset,
                                      int dof) {
  std::vector<std::vector<double>> values(dof);
  for (const auto& traj : dataset)
    for (const auto& [state, action] : traj.steps) {
      if (static_cast<int>(action.size()) != dof)
        throw std::invalid_argument("compute_norm_stats: action dof mismatch");
      for (int k = 0; k < dof; ++k) values[k].push_back(action[k]);
    }
  for (int k = 0; k < dof; ++k)
    if (values[k].size() < 100)
      throw std::invalid_argument(
          "compute_norm_stats: need >= 100 actions per dimension, have " +
          std::to_string(values[k].size()));

  auto quantile = [](std::vector<double>& v, double p) {
    std::sort(v.begin(), v.end());
    double pos = p * static_cast<double>(v.size() - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] * (1.0 - frac) + v[lo + 1] * frac;
  };

  NormalizationStats stats;
  stats.q01.resize(dof);
  stats.q99.resize(dof);
  for (int k = 0; k < dof; ++k) {
    stats.q01[k] = quantile(values[k], 0.01);
    stats.q99[k] = quantile(values[k], 0.99);
    if (!(stats.q01[k] < stats.q99[k]))
      throw std::invalid_argument(
          "compute_norm_stats: degenerate dimension " + std::to_string(k) +
          " (q01 == q99)");
  }
  return stats;
}

BurnInResult burn_in(const SceneState& start, int length, std::uint64_t seed,
                     const NormalizationStats& stats, const Vocabulary& vocab) {
  if (length < 0) throw std::invalid_argument("burn_in: negative length");
  BurnInResult res;
  res.state = start;
  Rng rng = Rng(seed).fork(0xb17);
  for (int t = 0; t < length; ++t) {
    ActionTokens tokens(stats.q01.size());
    for (auto& id : tokens)
      id = vocab.action_id_for_bin(static_cast<int>(rng.next_below(256)));
    ActionVector a = tokens_to_action(tokens, stats, vocab);
    res.state = step(res.state, a);
    res.images.push_back(render(res.state));
  }
  return res;
}

}  // namespace vrt
