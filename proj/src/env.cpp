#include "acot/env.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

namespace acot {

namespace {

constexpr const char* kColorNames[] = {"red", "green", "blue"};
constexpr const char* kShapeNames[] = {"circle", "square", "triangle"};
constexpr int kNumColors = 3;
constexpr int kNumShapes = 3;

const std::vector<std::string>& word_list() {
  static const std::vector<std::string> words = {
      "pick", "push",  "place", "grab",   "take",   "slide",  "shift",
      "put",  "set",   "move",  "please", "the",    "a",      "to",
      "in",   "into",  "zone",  "red",    "green",  "blue",   "circle",
      "square", "triangle", "left", "right", "top", "bottom"};
  return words;
}

const std::unordered_map<std::string, int>& word_ids() {
  static const std::unordered_map<std::string, int> ids = [] {
    std::unordered_map<std::string, int> m;
    const auto& words = word_list();
    for (std::size_t i = 0; i < words.size(); ++i)
      m[words[i]] = TokenLayout::kWordBase + static_cast<int>(i);
    return m;
  }();
  return ids;
}

double clampd(double v, double lo, double hi) {
  return std::min(hi, std::max(lo, v));
}

double dist(double ax, double ay, double bx, double by) {
  return std::hypot(ax - bx, ay - by);
}

}  // namespace

void EnvParams::validate() const {
  if (n_objects < 1 || n_objects > 5)
    throw ConfigError("env.n_objects must be in [1, 5]");
  if (bins < 2 || bins > 24) throw ConfigError("env.bins must be in [2, 24]");
  if (delta_max <= 0.0 || grab_radius <= 0.0)
    throw ConfigError("env geometry parameters must be positive");
}

const std::vector<Zone>& zones() {
  static const std::vector<Zone> z = {
      {"left", 0.02, 0.30, 0.20, 0.70},
      {"right", 0.80, 0.30, 0.98, 0.70},
      {"top", 0.30, 0.80, 0.70, 0.98},
      {"bottom", 0.30, 0.02, 0.70, 0.20},
  };
  return z;
}

int ToyTask::target_index(const EnvState& s) const {
  for (std::size_t i = 0; i < s.objects.size(); ++i)
    if (s.objects[i].color == color && s.objects[i].shape == shape)
      return static_cast<int>(i);
  return -1;
}

bool ToyTask::success(const EnvState& s) const {
  const int idx = target_index(s);
  if (idx < 0) return false;
  switch (verb) {
    case Verb::pick:
      return s.held == idx;
    case Verb::push_to:
      return zones()[zone].contains(s.objects[idx].x, s.objects[idx].y);
    case Verb::place:
      return s.held != idx &&
             zones()[zone].contains(s.objects[idx].x, s.objects[idx].y);
  }
  return false;
}

ToyTask make_task(int template_id) {
  struct Spec {
    Verb verb;
    int color, shape, zone;
  };
  static const Spec specs[kNumTaskTemplates] = {
      {Verb::pick, 0, 0, -1},    {Verb::pick, 1, 1, -1},
      {Verb::pick, 2, 2, -1},    {Verb::push_to, 0, 0, 1},
      {Verb::push_to, 1, 1, 2},  {Verb::place, 2, 2, 0},
      {Verb::place, 0, 0, 3},    {Verb::place, 1, 1, 1},
  };
  if (template_id < 0 || template_id >= kNumTaskTemplates)
    throw ConfigError("task template " + std::to_string(template_id) +
                      " out of range");
  const Spec& sp = specs[template_id];
  ToyTask t;
  t.verb = sp.verb;
  t.color = sp.color;
  t.shape = sp.shape;
  t.zone = sp.zone;
  t.template_id = template_id;
  std::ostringstream os;
  const std::string noun =
      std::string(kColorNames[sp.color]) + " " + kShapeNames[sp.shape];
  switch (sp.verb) {
    case Verb::pick:
      os << "pick the " << noun;
      break;
    case Verb::push_to:
      os << "push the " << noun << " to the " << zones()[sp.zone].name << " zone";
      break;
    case Verb::place:
      os << "place the " << noun << " in the " << zones()[sp.zone].name << " zone";
      break;
  }
  t.instruction = os.str();
  return t;
}

EnvState env_step(const EnvState& s, const std::array<double, 3>& action,
                  const EnvParams& p) {
  const double dx = clampd(action[0], -p.delta_max, p.delta_max);
  const double dy = clampd(action[1], -p.delta_max, p.delta_max);
  const double gcmd = clampd(action[2], 0.0, 1.0);
  EnvState n = s;
  n.agent_x = clampd(s.agent_x + dx, 0.0, 1.0);
  n.agent_y = clampd(s.agent_y + dy, 0.0, 1.0);
  const double new_grip = gcmd >= 0.5 ? 1.0 : 0.0;
  if (new_grip == 1.0 && s.grip == 0.0 && n.held < 0) {
    int best = -1;
    double best_d = p.grab_radius;
    for (std::size_t i = 0; i < n.objects.size(); ++i) {
      const double d = dist(n.agent_x, n.agent_y, n.objects[i].x, n.objects[i].y);
      if (d <= best_d) {
        best_d = d;
        best = static_cast<int>(i);
      }
    }
    n.held = best;
  }
  if (new_grip == 0.0) n.held = -1;
  n.grip = new_grip;
  if (n.held >= 0) {
    n.objects[n.held].x = n.agent_x;
    n.objects[n.held].y = n.agent_y;
  }
  return n;
}

std::array<double, 3> expert_action(const ToyTask& task, const EnvState& s,
                                    const EnvParams& p, Rng& rng) {
  const int idx = task.target_index(s);
  if (idx < 0) throw DataError("expert: target object missing from scene");
  const SceneObject& obj = s.objects[idx];
  const double reach = 0.5 * p.grab_radius;
  double tx, ty, grip;
  if (s.held != idx) {
    // approach, then grasp on the closing edge
    const double d = dist(s.agent_x, s.agent_y, obj.x, obj.y);
    tx = obj.x;
    ty = obj.y;
    grip = d <= reach ? 1.0 : 0.0;
  } else {
    switch (task.verb) {
      case Verb::pick:
        return {0.0, 0.0, 1.0};
      case Verb::push_to:
        tx = zones()[task.zone].cx();
        ty = zones()[task.zone].cy();
        grip = 1.0;
        break;
      case Verb::place: {
        const Zone& z = zones()[task.zone];
        if (z.contains(s.agent_x, s.agent_y, 0.02)) return {0.0, 0.0, 0.0};
        tx = z.cx();
        ty = z.cy();
        grip = 1.0;
        break;
      }
      default:
        return {0.0, 0.0, 0.0};
    }
  }
  const double margin = p.delta_max - p.expert_noise;
  double ax = clampd(tx - s.agent_x, -margin, margin);
  double ay = clampd(ty - s.agent_y, -margin, margin);
  if (p.expert_noise > 0.0) {
    ax += rng.uniform(-p.expert_noise, p.expert_noise);
    ay += rng.uniform(-p.expert_noise, p.expert_noise);
  }
  return {ax, ay, grip};
}

EnvState sample_scene(const ToyTask& task, const EnvParams& p, Rng& rng) {
  EnvState s;
  s.objects.clear();
  // Distinct (color, shape) combos, target first.
  std::vector<std::pair<int, int>> combos;
  for (int c = 0; c < kNumColors; ++c)
    for (int sh = 0; sh < kNumShapes; ++sh)
      if (c != task.color || sh != task.shape) combos.emplace_back(c, sh);
  for (int i = static_cast<int>(combos.size()) - 1; i > 0; --i)
    std::swap(combos[i], combos[rng.next_below(i + 1)]);

  auto place = [&](bool is_target) {
    for (int tries = 0; tries < 1000; ++tries) {
      const double x = rng.uniform(0.12, 0.88);
      const double y = rng.uniform(0.12, 0.88);
      bool ok = true;
      for (const auto& o : s.objects)
        if (dist(x, y, o.x, o.y) < p.min_separation) ok = false;
      if (ok && is_target && task.verb != Verb::pick &&
          zones()[task.zone].contains(x, y))
        ok = false;  // goal-zone starts would be trivially solved
      if (ok) return std::make_pair(x, y);
    }
    throw DataError("scene sampling failed to place an object");
  };

  SceneObject target;
  target.color = task.color;
  target.shape = task.shape;
  std::tie(target.x, target.y) = place(true);
  s.objects.push_back(target);
  for (int i = 1; i < p.n_objects; ++i) {
    SceneObject o;
    o.color = combos[i - 1].first;
    o.shape = combos[i - 1].second;
    std::tie(o.x, o.y) = place(false);
    s.objects.push_back(o);
  }
  for (int tries = 0; tries < 1000; ++tries) {
    s.agent_x = rng.uniform(0.15, 0.85);
    s.agent_y = rng.uniform(0.15, 0.85);
    bool ok = true;
    for (const auto& o : s.objects)
      if (dist(s.agent_x, s.agent_y, o.x, o.y) < p.grab_radius + 0.02) ok = false;
    if (ok) break;
    if (tries == 999) throw DataError("scene sampling failed to place the agent");
  }
  s.grip = 0.0;
  s.held = -1;
  return s;
}

Episode script_expert(const ToyTask& task, const EnvState& initial,
                      const EnvParams& p, Rng& rng) {
  Episode ep;
  ep.task = task;
  ep.states.push_back(initial);
  EnvState s = initial;
  if (task.target_index(s) < 0)
    throw DataError("expert: scene lacks the instructed object");
  for (int step = 0; step < p.max_steps; ++step) {
    const auto a = expert_action(task, s, p, rng);
    s = env_step(s, a, p);
    ep.actions.push_back(a);
    ep.states.push_back(s);
    if (task.success(s)) {
      ep.success = true;
      break;
    }
  }
  if (!ep.success)
    throw DataError("expert failed to complete '" + task.instruction +
                    "' within " + std::to_string(p.max_steps) + " steps");
  return ep;
}

// ---- tokenization ----

int Tokenizer::quantize(double v) const {
  const int b = static_cast<int>(clampd(v, 0.0, 1.0) * params_.bins);
  return std::min(b, params_.bins - 1);
}

std::vector<int> Tokenizer::encode_instruction(const std::string& text) const {
  std::vector<int> out;
  std::istringstream is(text);
  std::string word;
  while (is >> word) {
    auto it = word_ids().find(word);
    if (it == word_ids().end())
      throw DataError("tokenizer: word '" + word + "' not in vocabulary");
    out.push_back(it->second);
  }
  return out;
}

std::vector<int> Tokenizer::encode_observation(const EnvState& s) const {
  std::vector<int> out;
  out.push_back(TokenLayout::kAgentX + quantize(s.agent_x));
  out.push_back(TokenLayout::kAgentY + quantize(s.agent_y));
  out.push_back(TokenLayout::kGrip + (s.grip >= 0.5 ? 1 : 0));
  out.push_back(TokenLayout::kHeld + 1 + s.held);
  for (const auto& o : s.objects) {
    out.push_back(TokenLayout::kObjColor + o.color);
    out.push_back(TokenLayout::kObjShape + o.shape);
    out.push_back(TokenLayout::kObjX + quantize(o.x));
    out.push_back(TokenLayout::kObjY + quantize(o.y));
  }
  return out;
}

MultimodalInput Tokenizer::tokenize(const EnvState& s,
                                    const std::vector<int>& instr_tokens) const {
  MultimodalInput in;
  in.obs_tokens = encode_observation(s);
  in.instr_tokens = instr_tokens;
  return in;
}

MultimodalInput Tokenizer::tokenize_text(const EnvState& s,
                                         const std::string& instruction) const {
  return tokenize(s, encode_instruction(instruction));
}

// ---- perturbations ----

const char* category_name(PerturbCategory c) {
  switch (c) {
    case PerturbCategory::camera: return "camera";
    case PerturbCategory::robot: return "robot";
    case PerturbCategory::language: return "language";
    case PerturbCategory::light: return "light";
    case PerturbCategory::background: return "background";
    case PerturbCategory::noise: return "noise";
    case PerturbCategory::layout: return "layout";
  }
  return "?";
}

PerturbCategory category_from_name(const std::string& name) {
  for (int i = 0; i < kNumPerturbCategories; ++i) {
    const auto c = static_cast<PerturbCategory>(i);
    if (name == category_name(c)) return c;
  }
  throw ConfigError("unknown perturbation category '" + name + "'");
}

namespace {

std::string paraphrase_instruction(const ToyTask& task, Rng& rng) {
  static const std::unordered_map<std::string, std::array<const char*, 2>>
      alt_verbs = {{"pick", {"grab", "take"}},
                   {"push", {"slide", "shift"}},
                   {"place", {"put", "set"}}};
  std::istringstream is(task.instruction);
  std::string first;
  is >> first;
  std::string rest;
  std::getline(is, rest);
  const auto& alts = alt_verbs.at(first);
  std::string out = std::string(alts[rng.next_below(2)]) + rest;
  if (rng.uniform() < 0.5) out = "please " + out;
  return out;
}

}  // namespace

PerturbedScene perturb_scene(const ToyTask& task, const EnvState& state,
                             const PerturbationSuite& suite, const EnvParams& p,
                             Rng& rng) {
  PerturbedScene out{task, state};
  if (!suite.category.has_value()) return out;
  switch (*suite.category) {
    case PerturbCategory::robot: {
      for (int tries = 0; tries < 1000; ++tries) {
        const double x = rng.uniform(0.10, 0.90);
        const double y = rng.uniform(0.10, 0.90);
        bool ok = true;
        for (const auto& o : out.state.objects)
          if (dist(x, y, o.x, o.y) < p.grab_radius + 0.02) ok = false;
        if (ok) {
          out.state.agent_x = x;
          out.state.agent_y = y;
          break;
        }
      }
      break;
    }
    case PerturbCategory::layout: {
      EnvState fresh = sample_scene(task, p, rng);
      for (std::size_t i = 0; i < out.state.objects.size(); ++i) {
        out.state.objects[i].x = fresh.objects[i].x;
        out.state.objects[i].y = fresh.objects[i].y;
      }
      break;
    }
    case PerturbCategory::background: {
      EnvState fresh = sample_scene(task, p, rng);
      for (std::size_t i = 1; i < out.state.objects.size(); ++i)
        out.state.objects[i] = fresh.objects[i];
      break;
    }
    case PerturbCategory::language:
      out.task.instruction = paraphrase_instruction(task, rng);
      break;
    case PerturbCategory::camera:
    case PerturbCategory::light:
    case PerturbCategory::noise:
      break;  // observation-side only
  }
  return out;
}

EnvState ObsTransform::apply(const EnvState& s, int step_index) const {
  if (identity) return s;
  EnvState o = s;
  auto map_pos = [&](double& x, double& y, Rng* noise_rng) {
    if (camera) {
      const double c = std::cos(rot), sn = std::sin(rot);
      const double px = x - 0.5, py = y - 0.5;
      x = c * px - sn * py + 0.5 + shift_x;
      y = sn * px + c * py + 0.5 + shift_y;
    }
    if (light) {
      x *= brightness;
      y *= brightness;
    }
    if (noise_rng != nullptr) {
      x += noise_sigma * noise_rng->normal();
      y += noise_sigma * noise_rng->normal();
    }
    x = clampd(x, 0.0, 1.0);
    y = clampd(y, 0.0, 1.0);
  };
  if (noise_sigma > 0.0) {
    Rng nr = Rng(noise_seed).derive("obs-noise", static_cast<std::uint64_t>(step_index));
    map_pos(o.agent_x, o.agent_y, &nr);
    for (auto& obj : o.objects) map_pos(obj.x, obj.y, &nr);
  } else {
    map_pos(o.agent_x, o.agent_y, nullptr);
    for (auto& obj : o.objects) map_pos(obj.x, obj.y, nullptr);
  }
  return o;
}

ObsTransform make_obs_transform(const PerturbationSuite& suite,
                                std::uint64_t master_seed, int episode_index) {
  ObsTransform t;
  if (!suite.category.has_value()) return t;
  Rng rng = Rng(master_seed).derive("obs-transform",
                                    static_cast<std::uint64_t>(episode_index));
  switch (*suite.category) {
    case PerturbCategory::camera:
      t.identity = false;
      t.camera = true;
      t.rot = rng.uniform(-suite.camera_max_rot, suite.camera_max_rot);
      t.shift_x = rng.uniform(-suite.camera_max_shift, suite.camera_max_shift);
      t.shift_y = rng.uniform(-suite.camera_max_shift, suite.camera_max_shift);
      break;
    case PerturbCategory::light:
      t.identity = false;
      t.light = true;
      t.brightness = rng.uniform(suite.light_lo, suite.light_hi);
      break;
    case PerturbCategory::noise:
      t.identity = false;
      t.noise_sigma = suite.noise_sigma;
      t.noise_seed = hash_combine(master_seed, static_cast<std::uint64_t>(episode_index));
      break;
    default:
      break;  // scene-side categories
  }
  return t;
}

// ---- rollout ----

RolloutResult rollout(ChunkPolicy& policy, const ToyTask& task,
                      const EnvState& initial, const Tokenizer& tokenizer,
                      const RolloutOptions& opts, const EnvParams& p, Rng& rng) {
  const std::vector<int> instr = tokenizer.encode_instruction(task.instruction);
  EnvState s = initial;
  int steps = 0;
  int prediction = 0;
  while (steps < opts.max_steps) {
    const EnvState observed = opts.transform.apply(s, steps);
    const MultimodalInput tokens = tokenizer.tokenize(observed, instr);
    Rng pr = rng.derive("predict", static_cast<std::uint64_t>(prediction++));
    const ActionChunk chunk = policy.predict(observed, tokens, pr);
    if (chunk.actions.empty()) throw DataError("policy returned an empty chunk");
    const int k = std::min<int>(opts.execute_k, static_cast<int>(chunk.actions.size()));
    for (int j = 0; j < k && steps < opts.max_steps; ++j) {
      s = env_step(s, chunk.actions[j], p);
      ++steps;
      if (task.success(s)) return {true, steps};
    }
  }
  return {false, steps};
}

ActionChunk ExpertPolicy::predict(const EnvState& observed,
                                  const MultimodalInput& tokens, Rng& rng) {
  ActionChunk chunk;
  chunk.shift = 1;
  EnvState s = observed;
  for (int i = 0; i < horizon_; ++i) {
    if (task_.success(s)) {
      chunk.actions.push_back({0.0, 0.0, s.grip});
      continue;
    }
    const auto a = expert_action(task_, s, params_, rng);
    chunk.actions.push_back(a);
    s = env_step(s, a, params_);
  }
  return chunk;
}

ActionChunk RandomPolicy::predict(const EnvState& observed,
                                  const MultimodalInput& tokens, Rng& rng) {
  ActionChunk chunk;
  chunk.shift = 1;
  for (int i = 0; i < horizon_; ++i) {
    chunk.actions.push_back({rng.uniform(-params_.delta_max, params_.delta_max),
                             rng.uniform(-params_.delta_max, params_.delta_max),
                             rng.uniform()});
  }
  return chunk;
}

}  // namespace acot
