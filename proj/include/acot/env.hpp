#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "acot/backbone.hpp"
#include "acot/rng.hpp"

namespace acot {

constexpr int kActionDim = 3;  // (dx, dy, gripper command)

struct EnvParams {
  int n_objects = 3;
  int bins = 24;
  double delta_max = 0.05;
  double grab_radius = 0.07;
  int max_steps = 200;
  double expert_noise = 0.004;
  double min_separation = 0.12;

  void validate() const;
};

struct Zone {
  std::string name;
  double x0, y0, x1, y1;
  bool contains(double x, double y, double margin = 0.0) const {
    return x >= x0 + margin && x <= x1 - margin && y >= y0 + margin &&
           y <= y1 - margin;
  }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
};

const std::vector<Zone>& zones();

struct SceneObject {
  int color = 0;  // red, green, blue
  int shape = 0;  // circle, square, triangle
  double x = 0.0, y = 0.0;
};

struct EnvState {
  double agent_x = 0.5, agent_y = 0.5;
  double grip = 0.0;  // 0 open, 1 closed
  int held = -1;      // object index or -1
  std::vector<SceneObject> objects;
};

enum class Verb { pick, push_to, place };

struct ToyTask {
  Verb verb = Verb::pick;
  int color = 0;
  int shape = 0;
  int zone = -1;  // unused for pick
  int template_id = 0;
  std::string instruction;

  int target_index(const EnvState& s) const;
  bool success(const EnvState& s) const;
};

constexpr int kNumTaskTemplates = 8;
ToyTask make_task(int template_id);

// Kinematics: clip deltas, move, threshold the grip, attach on a closing
// grip within grab radius, held object tracks the agent. Pure and total.
EnvState env_step(const EnvState& s, const std::array<double, 3>& action,
                  const EnvParams& p);

struct Episode {
  ToyTask task;
  std::vector<int> instr_tokens;
  std::vector<EnvState> states;
  std::vector<std::array<double, 3>> actions;
  bool success = false;

  int n_steps() const { return static_cast<int>(actions.size()); }
};

EnvState sample_scene(const ToyTask& task, const EnvParams& p, Rng& rng);

// Phase-based controller: approach, grasp, transport, release. Throws
// DataError if the task is not completed within the step budget.
Episode script_expert(const ToyTask& task, const EnvState& initial,
                      const EnvParams& p, Rng& rng);

// ---- observation tokenization ----

struct TokenLayout {
  static constexpr int kPad = 0;
  static constexpr int kWordBase = 1;
  static constexpr int kAgentX = 64;
  static constexpr int kAgentY = 88;
  static constexpr int kGrip = 112;
  static constexpr int kHeld = 114;
  static constexpr int kObjColor = 120;
  static constexpr int kObjShape = 126;
  static constexpr int kObjX = 130;
  static constexpr int kObjY = 154;
  static constexpr int kVocabSize = 256;
};

class Tokenizer {
 public:
  explicit Tokenizer(const EnvParams& p) : params_(p) {}

  std::vector<int> encode_instruction(const std::string& text) const;
  std::vector<int> encode_observation(const EnvState& s) const;
  MultimodalInput tokenize(const EnvState& s,
                           const std::vector<int>& instr_tokens) const;
  MultimodalInput tokenize_text(const EnvState& s,
                                const std::string& instruction) const;
  int quantize(double v) const;

 private:
  EnvParams params_;
};

// ---- perturbations (seven categories) ----

enum class PerturbCategory {
  camera = 0,
  robot,
  language,
  light,
  background,
  noise,
  layout,
};
constexpr int kNumPerturbCategories = 7;

const char* category_name(PerturbCategory c);
PerturbCategory category_from_name(const std::string& name);

struct PerturbationSuite {
  std::optional<PerturbCategory> category;  // nullopt = clean
  double camera_max_rot = 0.35;   // radians
  double camera_max_shift = 0.06;
  double light_lo = 0.85, light_hi = 1.15;
  double noise_sigma = 0.02;
};

// Scene-side application (robot / layout / background / language); the
// remaining categories only transform observations and leave the scene
// untouched. Training data never goes through this.
struct PerturbedScene {
  ToyTask task;
  EnvState state;
};
PerturbedScene perturb_scene(const ToyTask& task, const EnvState& state,
                             const PerturbationSuite& suite, const EnvParams& p,
                             Rng& rng);

// Observation-side transform (camera / light / noise), fixed per episode,
// applied to the reported state before tokenization at every step.
struct ObsTransform {
  bool identity = true;
  bool camera = false;
  double rot = 0.0, shift_x = 0.0, shift_y = 0.0;
  bool light = false;
  double brightness = 1.0;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;

  EnvState apply(const EnvState& s, int step_index) const;
};

ObsTransform make_obs_transform(const PerturbationSuite& suite,
                                std::uint64_t master_seed, int episode_index);

// ---- rollout ----

struct ActionChunk {
  std::vector<std::array<double, 3>> actions;  // raw action space
  int shift = 1;
};

struct ChunkPolicy {
  virtual ActionChunk predict(const EnvState& observed,
                              const MultimodalInput& tokens, Rng& rng) = 0;
  virtual ~ChunkPolicy() = default;
};

struct RolloutOptions {
  int execute_k = 3;
  int max_steps = 200;
  ObsTransform transform;
};

struct RolloutResult {
  bool success = false;
  int steps = 0;
};

RolloutResult rollout(ChunkPolicy& policy, const ToyTask& task,
                      const EnvState& initial, const Tokenizer& tokenizer,
                      const RolloutOptions& opts, const EnvParams& p, Rng& rng);

// Scripted expert wrapped as a policy (oracle for clean suites).
class ExpertPolicy : public ChunkPolicy {
 public:
  ExpertPolicy(const ToyTask& task, const EnvParams& p, int horizon)
      : task_(task), params_(p), horizon_(horizon) {}
  ActionChunk predict(const EnvState& observed, const MultimodalInput& tokens,
                      Rng& rng) override;

 private:
  ToyTask task_;
  EnvParams params_;
  int horizon_;
};

class RandomPolicy : public ChunkPolicy {
 public:
  RandomPolicy(const EnvParams& p, int horizon) : params_(p), horizon_(horizon) {}
  ActionChunk predict(const EnvState& observed, const MultimodalInput& tokens,
                      Rng& rng) override;

 private:
  EnvParams params_;
  int horizon_;
};

// Actions are trained in a normalized space: deltas divided by delta_max,
// gripper mapped to {-1, +1}.
struct ActionNormalizer {
  double delta_max = 0.05;
  std::array<double, 3> normalize(const std::array<double, 3>& raw) const {
    return {raw[0] / delta_max, raw[1] / delta_max, 2.0 * raw[2] - 1.0};
  }
  std::array<double, 3> denormalize(const std::array<double, 3>& n) const {
    return {n[0] * delta_max, n[1] * delta_max, 0.5 * (n[2] + 1.0)};
  }
};

std::array<double, 3> expert_action(const ToyTask& task, const EnvState& s,
                                    const EnvParams& p, Rng& rng);

}  // namespace acot
