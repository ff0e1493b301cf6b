#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "clfd/dataset.hpp"
#include "clfd/eval.hpp"
#include "clfd/models.hpp"
#include "clfd/rng.hpp"
#include "clfd/scene.hpp"
#include "clfd/tensor.hpp"

namespace clfd::rl {

// Observation: 32-d embedding of the evaluation camera's current frame plus
// joint angles (4), joint velocities (4), and the gripper flag.
inline constexpr std::size_t kObsDim = models::kEmbeddingDim + 4 + 4 + 1;  // 41
inline constexpr std::size_t kActionDim = 5;  // 4 joint velocities + grip

struct MDPState {
  Tensor<float> embedding;  // [32]
  std::array<double, 4> joints{};
  std::array<double, 4> velocities{};
  bool gripper_closed = false;
};

inline void write_obs(const MDPState& s, float* out) {
  std::copy(s.embedding.data.begin(), s.embedding.data.end(), out);
  for (int i = 0; i < 4; ++i) out[32 + i] = float(s.joints[i]);
  for (int i = 0; i < 4; ++i) out[36 + i] = float(s.velocities[i]);
  out[40] = s.gripper_closed ? 1.0f : 0.0f;
}

// Eq.-2 reward: negative Euclidean distance between embeddings.
inline double compute_reward(const Tensor<float>& current,
                             const Tensor<float>& goal) {
  check(current.shape == goal.shape, ErrorCategory::data,
        "compute_reward: embedding shapes differ: ", shape_str(current.shape),
        " vs ", shape_str(goal.shape));
  double acc = 0;
  for (std::size_t i = 0; i < current.numel(); ++i) {
    const double d = double(current.data[i]) - double(goal.data[i]);
    acc += d * d;
  }
  return -std::sqrt(acc);
}

// Goal embedding for a stage: the embedding (evaluation camera) of the last
// frame of that stage in the guidance demonstration.
inline Tensor<float> select_goal(const ParameterSet<float>& encoder,
                                 const Dataset& ds, std::size_t demo,
                                 Stage stage) {
  const auto& labels = ds.labels(demo);
  std::size_t last_t = 0;
  bool found = false;
  for (const auto& f : labels)
    if (f.stage == stage) {
      last_t = f.t;
      found = true;
    }
  check(found, ErrorCategory::data, "select_goal: demo ", demo,
        " has no frames in stage '", to_string(stage), "'");
  Tensor<float> frame = ds.frame<float>(demo, kEvalCamera, last_t);
  Tensor<float> batch(Shape{1, 3, kRenderSize, kRenderSize},
                      std::move(frame.data));
  Tensor<float> emb = models::desk_cnn_encode(encoder, batch);
  return Tensor<float>(Shape{models::kEmbeddingDim}, std::move(emb.data));
}

// Episode success threshold in embedding space: the 5th percentile
// (nearest-rank on the sorted values) of the guidance demonstration's
// consecutive-frame embedding distances.
inline double embedding_success_threshold(const ParameterSet<float>& encoder,
                                          const Dataset& ds, std::size_t demo) {
  const Tensor<float> embs = embed_video(encoder, ds, demo, kEvalCamera);
  const std::size_t t_count = embs.shape[0], d = embs.shape[1];
  check(t_count >= 2, ErrorCategory::data,
        "success threshold: demo must have at least 2 frames");
  std::vector<double> dists;
  dists.reserve(t_count - 1);
  for (std::size_t t = 0; t + 1 < t_count; ++t) {
    double acc = 0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff =
          double(embs.data[(t + 1) * d + k]) - double(embs.data[t * d + k]);
      acc += diff * diff;
    }
    dists.push_back(std::sqrt(acc));
  }
  std::sort(dists.begin(), dists.end());
  const std::size_t idx = std::size_t(0.05 * double(dists.size() - 1));
  return dists[idx];
}

// Goal-conditioned toy pick-and-place MDP. Observations embed the current
// front-camera render with the frozen encoder; rewards follow Eq. 2 against
// the stage goal; an episode ends on stage success (embedding distance below
// the threshold AND the geometric predicate) or at the step limit.
class PickPlaceEnv {
 public:
  PickPlaceEnv(const ParameterSet<float>* encoder, Camera camera,
               EnvParams params, Stage stage, Tensor<float> goal,
               double success_threshold)
      : encoder_(encoder), camera_(camera), params_(params), stage_(stage),
        goal_(std::move(goal)), threshold_(success_threshold) {
    check(encoder_ != nullptr, ErrorCategory::internal, "env: null encoder");
  }

  MDPState reset(Rng& rng) {
    auto sample_xy = [&] {
      return Vec3{rng.uniform(0.30, 0.70), rng.uniform(0.30, 0.70), 0.0};
    };
    scene_ = SceneState{};
    scene_.gripper = params_.home;
    scene_.box = sample_xy();
    scene_.goal = sample_xy();
    int tries = 0;
    while (distance(scene_.box, scene_.goal) < 0.15) {
      check(++tries <= 100, ErrorCategory::data,
            "env reset: no valid placement after 100 attempts");
      scene_.goal = sample_xy();
    }
    last_applied_ = {};
    steps_ = 0;
    done_ = false;
    return observe();
  }

  struct StepResult {
    MDPState state;
    double reward = 0;
    bool done = false;
  };

  StepResult step(const ActionVec& a) {
    check(!done_, ErrorCategory::usage, "env: step() after episode end");
    last_applied_ = apply_action(scene_, a, params_);
    ++steps_;
    StepResult res;
    res.state = observe();
    res.reward = compute_reward(res.state.embedding, goal_);
    const bool success = -res.reward < threshold_ &&
                         stage_success(scene_, stage_, params_);
    done_ = success || steps_ >= params_.step_limit;
    res.done = done_;
    return res;
  }

  const SceneState& scene() const { return scene_; }
  const Tensor<float>& goal() const { return goal_; }
  Stage stage() const { return stage_; }
  const EnvParams& params() const { return params_; }
  std::size_t steps() const { return steps_; }
  bool done() const { return done_; }
  bool geometric_success() const {
    return stage_success(scene_, stage_, params_);
  }

 private:
  MDPState observe() const {
    MDPState s;
    Tensor<float> img = render_view<float>(scene_, camera_);
    Tensor<float> batch(Shape{1, 3, kRenderSize, kRenderSize},
                        std::move(img.data));
    Tensor<float> emb = models::desk_cnn_encode(*encoder_, batch);
    s.embedding = Tensor<float>(Shape{models::kEmbeddingDim},
                                std::move(emb.data));
    s.joints = {scene_.gripper.x, scene_.gripper.y, scene_.gripper.z,
                scene_.grip_angle};
    s.velocities = last_applied_;
    s.gripper_closed = scene_.gripper_closed;
    return s;
  }

  const ParameterSet<float>* encoder_;
  Camera camera_;
  EnvParams params_;
  Stage stage_;
  Tensor<float> goal_;
  double threshold_;
  SceneState scene_;
  std::array<double, 4> last_applied_{};
  std::size_t steps_ = 0;
  bool done_ = true;  // reset() must be called first
};

// Maps a normalized [-1,1]^5 network/exploration action onto the env action.
inline ActionVec scale_action(const std::array<float, kActionDim>& a,
                              const EnvParams& p) {
  ActionVec out;
  for (int i = 0; i < 4; ++i)
    out.v[i] = clamp(double(a[i]), -1.0, 1.0) * p.v_max;
  out.grip = clamp(double(a[4]), -1.0, 1.0);
  return out;
}

}  // namespace clfd::rl
