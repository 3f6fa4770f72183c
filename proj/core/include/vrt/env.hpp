#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vrt/model.hpp"

namespace vrt {

// One reach-and-grasp task: instruction text plus placement and controller
// parameters. Step limits vary per task, and each base-wide extreme is
// carried by two tasks from different fine-tune regimes, so every narrow
// subset's action quantiles nest inside the pooled base quantiles.
struct TaskSpec {
  int id = 0;
  std::string instruction;
  double spawn_half_width = 0.5;  // object/goal xy sampled in +-this box
  // Desired wrist rotation tracks the remaining travel:
  //   desired[k] = clamp(rot_coef[k] * (target[k] - pose[k]) + rot_offset[k]),
  // so rotation commands stay active (and saturate) for most of a rollout.
  std::array<double, 3> rot_coef;
  std::array<double, 3> rot_offset;
  double max_step = 0.2;      // translation clamp, env units per step
  double max_rot_step = 0.15;
};

const std::vector<TaskSpec>& task_catalog();  // 8 base tasks
std::vector<int> base_task_set();             // {0..7}
// Narrow 2-task subsets for the four fine-tune regimes (0..3).
std::vector<int> finetune_task_set(int regime);

struct SceneState {
  std::array<double, 6> pose{};  // x, y, z, rx, ry, rz in [-1,1]
  double gripper = 0.0;          // 0 open, 1 closed
  bool grasped = false;
  std::array<double, 3> object_pos{};
  std::array<double, 3> goal_pos{};
  int step_count = 0;
  // Calibration dial: when active, the expert emits the dialed levels and the
  // renderer exposes them as gauge pixels. Dataset trajectories end with two
  // dialed steps so every action bin appears in training data.
  bool dial_active = false;
  std::array<int, 7> dial_levels{};  // 0..255 per dimension
};

constexpr double kGraspRadius = 0.15;
constexpr double kDoneRadius = 0.12;
constexpr double kTableZ = -0.5;
constexpr double kGoalZ = 0.1;

SceneState reset(int task_id, std::uint64_t seed);
// Kinematic update: pose += a[0:6] (clamped to the workspace), gripper
// toggles when |a[6]| crosses 0.5, grasped object follows the end effector.
SceneState step(const SceneState& state, const ActionVector& a);
// 16x16 grayscale: gaussian blobs for goal/object/end-effector over rows
// 0..13 plus a state gauge strip in rows 14..15 (deltas, z, rotations,
// gripper). The gauges make the scene fully observable at this resolution.
Image render(const SceneState& state);
// Deadzone P-controller with unit gain: move to the object, grasp, carry to
// the goal, release. Emits per-dimension steps clamped to the task limits.
ActionVector scripted_expert(const SceneState& state, const TaskSpec& task);
bool task_complete(const SceneState& state, const TaskSpec& task);

struct Trajectory {
  int task_id = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<SceneState, ActionVector>> steps;
};

// Expert rollouts, balanced across tasks, fully determined by the seed.
std::vector<Trajectory> generate_dataset(std::span<const int> tasks,
                                         int n_trajectories,
                                         std::uint64_t seed);

// JSON-lines, one trajectory per line; images are re-rendered on load.
void save_dataset(std::span<const Trajectory> dataset, const std::string& path);
std::vector<Trajectory> load_dataset(const std::string& path);

// Per-dimension empirical 1st/99th percentiles (linear interpolation).
// Degenerate dimensions (q01 == q99) raise.
NormalizationStats compute_norm_stats(std::span<const Trajectory> dataset,
                                      int dof = 7);

struct BurnInResult {
  SceneState state;
  std::vector<Image> images;  // one render after each burn-in action
};

// Pre-rollout actuation with uniformly random action bins (detokenized via
// the stats, so random actuation stays inside the trained action range).
BurnInResult burn_in(const SceneState& start, int length, std::uint64_t seed,
                     const NormalizationStats& stats, const Vocabulary& vocab);

}  // namespace vrt
