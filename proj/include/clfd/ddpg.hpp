#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clfd/autodiff.hpp"
#include "clfd/checkpoint.hpp"
#include "clfd/dataset.hpp"
#include "clfd/env.hpp"
#include "clfd/models.hpp"
#include "clfd/optim.hpp"
#include "clfd/rng.hpp"
#include "clfd/threading.hpp"

namespace clfd::rl {

struct DDPGConfig {
  double gamma = 0.99;
  std::size_t hidden = 128;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  double soft_update = 0.005;
  double noise_std = 0.1;
  std::size_t buffer_capacity = 100000;
  std::size_t batch_size = 128;
  std::size_t episodes = 3000;
  std::size_t her_k = 4;       // relabeled copies per stored transition
  std::size_t warmup = 1000;   // buffered transitions before updates begin
  std::uint64_t seed = 1;
};

inline void validate(const DDPGConfig& c) {
  check(c.gamma > 0.0 && c.gamma <= 1.0, ErrorCategory::config,
        "ddpg: gamma must be in (0,1], got ", c.gamma);
  check(c.hidden >= 1 && c.batch_size >= 1 && c.buffer_capacity >= 1 &&
            c.episodes >= 1,
        ErrorCategory::config, "ddpg: sizes must be >= 1");
  check(c.noise_std >= 0 && c.soft_update >= 0 && c.soft_update <= 1,
        ErrorCategory::config, "ddpg: invalid noise/soft-update rates");
}

inline nlohmann::json ddpg_config_json(const DDPGConfig& c) {
  return nlohmann::json{{"gamma", c.gamma},
                        {"hidden", c.hidden},
                        {"actor_lr", c.actor_lr},
                        {"critic_lr", c.critic_lr},
                        {"soft_update", c.soft_update},
                        {"noise_std", c.noise_std},
                        {"buffer_capacity", c.buffer_capacity},
                        {"batch_size", c.batch_size},
                        {"episodes", c.episodes},
                        {"her_k", c.her_k},
                        {"warmup", c.warmup},
                        {"seed", c.seed}};
}

inline DDPGConfig ddpg_config_from_json(const nlohmann::json& j) {
  DDPGConfig c;
  try {
    c.gamma = j.at("gamma").get<double>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.actor_lr = j.at("actor_lr").get<double>();
    c.critic_lr = j.at("critic_lr").get<double>();
    c.soft_update = j.at("soft_update").get<double>();
    c.noise_std = j.at("noise_std").get<double>();
    c.buffer_capacity = j.at("buffer_capacity").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.episodes = j.at("episodes").get<std::size_t>();
    c.her_k = j.at("her_k").get<std::size_t>();
    c.warmup = j.at("warmup").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::config, "ddpg config: ", e.what());
  }
  return c;
}

// Flattened replay record:
//   obs[41] action[5] reward next_obs[41] done goal[32] achieved[32]
inline constexpr std::size_t kTransObs = 0;
inline constexpr std::size_t kTransAction = kObsDim;                  // 41
inline constexpr std::size_t kTransReward = kTransAction + kActionDim;  // 46
inline constexpr std::size_t kTransNext = kTransReward + 1;           // 47
inline constexpr std::size_t kTransDone = kTransNext + kObsDim;       // 88
inline constexpr std::size_t kTransGoal = kTransDone + 1;             // 89
inline constexpr std::size_t kTransAchieved =
    kTransGoal + models::kEmbeddingDim;                               // 121
inline constexpr std::size_t kTransitionDim =
    kTransAchieved + models::kEmbeddingDim;                           // 153

// Fixed-capacity FIFO ring buffer of flattened transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  void push(const float* t) {
    if (data_.size() < capacity_ * kTransitionDim) {
      data_.insert(data_.end(), t, t + kTransitionDim);
    } else {
      std::copy_n(t, kTransitionDim, data_.begin() + head_ * kTransitionDim);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return data_.size() / kTransitionDim; }
  std::size_t capacity() const { return capacity_; }
  const float* at(std::size_t i) const {
    check(i < size(), ErrorCategory::internal, "replay: index out of range");
    return data_.data() + i * kTransitionDim;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // next FIFO eviction slot once full
  std::vector<float> data_;
};

inline models::MlpSpec actor_spec(std::size_t hidden) {
  return {{kObsDim + models::kEmbeddingDim, hidden, hidden, kActionDim},
          models::Activation::relu, models::Activation::tanh};
}

inline models::MlpSpec critic_spec(std::size_t hidden) {
  return {{kObsDim + models::kEmbeddingDim + kActionDim, hidden, hidden, 1},
          models::Activation::relu, models::Activation::none};
}

inline void soft_update(ParameterSet<float>& target,
                        const ParameterSet<float>& online, double rate) {
  check(target.size() == online.size(), ErrorCategory::internal,
        "soft_update: parameter count mismatch");
  const float r = float(rate);
  for (std::size_t i = 0; i < target.size(); ++i) {
    check(target[i].value.shape == online[i].value.shape,
          ErrorCategory::internal, "soft_update: shape mismatch");
    float* t = target[i].value.data.data();
    const float* o = online[i].value.data.data();
    for (std::size_t j = 0; j < target[i].value.numel(); ++j)
      t[j] = (1.0f - r) * t[j] + r * o[j];
  }
}

// DDPG actor-critic with target networks.
class DDPGAgent {
 public:
  DDPGAgent(const DDPGConfig& cfg, std::uint64_t seed)
      : cfg_(cfg),
        actor_(make_net(seed, "init/actor", actor_spec(cfg.hidden), "actor.")),
        critic_(
            make_net(seed, "init/critic", critic_spec(cfg.hidden), "critic.")),
        actor_target_(actor_),
        critic_target_(critic_),
        actor_opt_(actor_, with_lr(cfg.actor_lr)),
        critic_opt_(critic_, with_lr(cfg.critic_lr)) {}

  // Deterministic policy action in normalized [-1,1]^5 space.
  std::array<float, kActionDim> act(const MDPState& s,
                                    const Tensor<float>& goal) const {
    Tensor<float> in(Shape{1, kObsDim + models::kEmbeddingDim});
    write_obs(s, in.data.data());
    std::copy(goal.data.begin(), goal.data.end(), in.data.begin() + kObsDim);
    const Tensor<float> out =
        models::mlp_apply(actor_, actor_spec(cfg_.hidden), in, "actor.");
    std::array<float, kActionDim> a{};
    std::copy_n(out.data.begin(), kActionDim, a.begin());
    return a;
  }

  // One critic + actor update on a uniformly sampled batch, followed by soft
  // target updates. Returns the critic loss.
  double update(const ReplayBuffer& buf, Rng& rng) {
    const std::size_t n = cfg_.batch_size;
    const std::size_t in_dim = kObsDim + models::kEmbeddingDim;
    Tensor<float> sg(Shape{n, in_dim});
    Tensor<float> sga(Shape{n, in_dim + kActionDim});
    Tensor<float> sg2(Shape{n, in_dim});
    Tensor<float> reward(Shape{n, 1});
    Tensor<float> done(Shape{n, 1});
    for (std::size_t i = 0; i < n; ++i) {
      const float* t = buf.at(rng.uniform_index(buf.size()));
      float* sgi = sg.data.data() + i * in_dim;
      std::copy_n(t + kTransObs, kObsDim, sgi);
      std::copy_n(t + kTransGoal, models::kEmbeddingDim, sgi + kObsDim);
      float* sgai = sga.data.data() + i * (in_dim + kActionDim);
      std::copy_n(sgi, in_dim, sgai);
      std::copy_n(t + kTransAction, kActionDim, sgai + in_dim);
      float* sg2i = sg2.data.data() + i * in_dim;
      std::copy_n(t + kTransNext, kObsDim, sg2i);
      std::copy_n(t + kTransGoal, models::kEmbeddingDim, sg2i + kObsDim);
      reward.data[i] = t[kTransReward];
      done.data[i] = t[kTransDone];
    }

    // Bootstrapped targets from the target networks (no gradients).
    const Tensor<float> a2 =
        models::mlp_apply(actor_target_, actor_spec(cfg_.hidden), sg2,
                          "actor.");
    Tensor<float> sg2a(Shape{n, in_dim + kActionDim});
    for (std::size_t i = 0; i < n; ++i) {
      float* row = sg2a.data.data() + i * (in_dim + kActionDim);
      std::copy_n(sg2.data.data() + i * in_dim, in_dim, row);
      std::copy_n(a2.data.data() + i * kActionDim, kActionDim, row + in_dim);
    }
    const Tensor<float> q2 =
        models::mlp_apply(critic_target_, critic_spec(cfg_.hidden), sg2a,
                          "critic.");
    Tensor<float> y(Shape{n, 1});
    for (std::size_t i = 0; i < n; ++i)
      y.data[i] = reward.data[i] +
                  float(cfg_.gamma) * (1.0f - done.data[i]) * q2.data[i];

    // Critic step: minimize mean squared TD error.
    double critic_loss;
    {
      Graph<float> g;
      const auto ids = models::bind_params(g, critic_);
      NodeId x = g.input(sga, false);
      NodeId q = models::mlp_forward(g, critic_, ids, critic_spec(cfg_.hidden),
                                     x, "critic.");
      NodeId diff = g.sub(q, g.input(y, false));
      NodeId loss = g.batch_mean(g.mul(diff, diff));
      critic_loss = g.value(loss).data[0];
      if (!std::isfinite(critic_loss)) return critic_loss;
      g.backward(loss);
      std::vector<Tensor<float>> grads;
      for (NodeId id : ids) grads.push_back(g.grad(id));
      critic_opt_.step(critic_, grads);
    }

    // Actor step: maximize the critic's value of the actor's actions.
    {
      Graph<float> g;
      const auto actor_ids = models::bind_params(g, actor_);
      const auto critic_ids = models::bind_params(g, critic_, false);
      NodeId x = g.input(sg, false);
      NodeId a = models::mlp_forward(g, actor_, actor_ids,
                                     actor_spec(cfg_.hidden), x, "actor.");
      NodeId qin = g.concat_cols(x, a);
      NodeId q = models::mlp_forward(g, critic_, critic_ids,
                                     critic_spec(cfg_.hidden), qin, "critic.");
      NodeId loss = g.scale(g.batch_mean(q), -1.0f);
      g.backward(loss);
      std::vector<Tensor<float>> grads;
      for (NodeId id : actor_ids) grads.push_back(g.grad(id));
      actor_opt_.step(actor_, grads);
    }

    soft_update(actor_target_, actor_, cfg_.soft_update);
    soft_update(critic_target_, critic_, cfg_.soft_update);
    return critic_loss;
  }

  const ParameterSet<float>& actor() const { return actor_; }
  const ParameterSet<float>& critic() const { return critic_; }
  const ParameterSet<float>& actor_target() const { return actor_target_; }
  const ParameterSet<float>& critic_target() const { return critic_target_; }
  ParameterSet<float>& mutable_actor() { return actor_; }
  ParameterSet<float>& mutable_actor_target() { return actor_target_; }
  ParameterSet<float>& mutable_critic() { return critic_; }
  ParameterSet<float>& mutable_critic_target() { return critic_target_; }
  const DDPGConfig& config() const { return cfg_; }

  void reset_targets() {
    actor_target_ = actor_;
    critic_target_ = critic_;
  }

 private:
  static ParameterSet<float> make_net(std::uint64_t seed,
                                      const std::string& stream,
                                      const models::MlpSpec& spec,
                                      const std::string& prefix) {
    ParameterSet<float> ps;
    Rng rng = Rng::stream(seed, stream);
    models::add_mlp_params(ps, rng, spec, prefix);
    return ps;
  }

  static AdamConfig with_lr(double lr) {
    AdamConfig c;
    c.lr = lr;
    return c;
  }

  DDPGConfig cfg_;
  ParameterSet<float> actor_, critic_, actor_target_, critic_target_;
  Adam<float> actor_opt_, critic_opt_;
};

struct EpisodeRow {
  std::size_t episode = 0;
  double accumulated_reward = 0;
  std::size_t steps = 0;
  bool success = false;  // geometric stage predicate reached within the limit
};

inline std::string episodes_csv(const std::vector<EpisodeRow>& rows) {
  std::string out = "episode,accumulated_reward,steps,success\n";
  char buf[48];
  for (const auto& r : rows) {
    out += std::to_string(r.episode);
    std::snprintf(buf, sizeof buf, ",%.9g,", r.accumulated_reward);
    out += buf;
    out += std::to_string(r.steps);
    out += r.success ? ",1\n" : ",0\n";
  }
  return out;
}

// Everything needed to build identical environments.
struct EnvSpec {
  const ParameterSet<float>* encoder = nullptr;
  Camera camera;
  EnvParams params;
  Stage stage = Stage::pick;
  Tensor<float> goal;
  double threshold = 0;
};

inline PickPlaceEnv make_env(const EnvSpec& spec) {
  return PickPlaceEnv(spec.encoder, spec.camera, spec.params, spec.stage,
                      spec.goal, spec.threshold);
}

struct DDPGTrainResult {
  std::vector<EpisodeRow> rows;
  std::filesystem::path policy_path, episodes_path;
};

// HER "final" strategy: appends k copies of every transition of the episode
// with the goal replaced by the episode's final achieved embedding and the
// reward recomputed via Eq. 2 against that goal.
inline void her_append_final(ReplayBuffer& buffer,
                             const std::vector<std::vector<float>>& episode,
                             std::size_t her_k) {
  check(!episode.empty(), ErrorCategory::internal, "her: empty episode");
  const float* final_achieved = episode.back().data() + kTransAchieved;
  Tensor<float> her_goal(Shape{models::kEmbeddingDim});
  std::copy_n(final_achieved, models::kEmbeddingDim, her_goal.data.begin());
  for (const auto& orig : episode) {
    std::vector<float> t = orig;
    std::copy(her_goal.data.begin(), her_goal.data.end(),
              t.data() + kTransGoal);
    Tensor<float> achieved(Shape{models::kEmbeddingDim});
    std::copy_n(orig.data() + kTransAchieved, models::kEmbeddingDim,
                achieved.data.begin());
    t[kTransReward] = float(compute_reward(achieved, her_goal));
    for (std::size_t k = 0; k < her_k; ++k) buffer.push(t.data());
  }
}

// DDPG + HER ("final" strategy): after each episode, k relabeled copies of
// every transition are appended with the goal replaced by the episode's final
// achieved embedding and the reward recomputed via Eq. 2.
inline DDPGTrainResult ddpg_train(const ParameterSet<float>& encoder,
                                  const EnvSpec& spec, const DDPGConfig& cfg,
                                  const nlohmann::json& provenance,
                                  const std::filesystem::path& out_dir) {
  validate(cfg);
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  DDPGAgent agent(cfg, cfg.seed);
  ReplayBuffer buffer(cfg.buffer_capacity);
  PickPlaceEnv env = make_env(spec);
  Rng env_rng = Rng::stream(cfg.seed, "env");
  Rng noise_rng = Rng::stream(cfg.seed, "noise");
  Rng replay_rng = Rng::stream(cfg.seed, "replay");

  std::vector<EpisodeRow> rows;
  std::deque<double> loss_tail;
  std::vector<std::vector<float>> episode;  // transitions of the episode

  for (std::size_t ep = 1; ep <= cfg.episodes; ++ep) {
    MDPState s = env.reset(env_rng);
    episode.clear();
    double acc_reward = 0;
    bool geo_success = false;
    bool done = false;
    while (!done) {
      std::array<float, kActionDim> a = agent.act(s, spec.goal);
      for (auto& v : a)
        v = float(clamp(double(v) + noise_rng.normal() * cfg.noise_std,
                        -1.0, 1.0));
      const auto res = env.step(scale_action(a, spec.params));
      acc_reward += res.reward;
      geo_success = geo_success || env.geometric_success();
      done = res.done;

      std::vector<float> t(kTransitionDim);
      write_obs(s, t.data() + kTransObs);
      std::copy_n(a.begin(), kActionDim, t.data() + kTransAction);
      t[kTransReward] = float(res.reward);
      write_obs(res.state, t.data() + kTransNext);
      t[kTransDone] = done ? 1.0f : 0.0f;
      std::copy(spec.goal.data.begin(), spec.goal.data.end(),
                t.data() + kTransGoal);
      std::copy(res.state.embedding.data.begin(),
                res.state.embedding.data.end(), t.data() + kTransAchieved);
      buffer.push(t.data());
      episode.push_back(std::move(t));
      s = res.state;

      if (buffer.size() >= cfg.warmup) {
        const double loss = agent.update(buffer, replay_rng);
        if (!std::isfinite(loss)) {
          std::ostringstream tail;
          for (double v : loss_tail) tail << v << ' ';
          fail(ErrorCategory::numeric,
               "ddpg: non-finite critic loss at episode ", ep, ", step ",
               env.steps(), "; recent losses: ", tail.str());
        }
        loss_tail.push_back(loss);
        if (loss_tail.size() > 8) loss_tail.pop_front();
      }
    }

    her_append_final(buffer, episode, cfg.her_k);

    rows.push_back(EpisodeRow{ep, acc_reward, env.steps(), geo_success});
  }

  const fs::path episodes_path = out_dir / "episodes.csv";
  detail::write_file(episodes_path, episodes_csv(rows));

  Checkpoint<float> ck;
  for (const auto& p : encoder) ck.params.add(p.name, p.value);
  for (const auto& p : agent.actor()) ck.params.add(p.name, p.value);
  for (const auto& p : agent.critic()) ck.params.add(p.name, p.value);
  for (const auto& p : agent.actor_target())
    ck.params.add("target." + p.name, p.value);
  for (const auto& p : agent.critic_target())
    ck.params.add("target." + p.name, p.value);
  ck.meta = {{"kind", "clfd-rl"},
             {"stage", to_string(spec.stage)},
             {"config", ddpg_config_json(cfg)},
             {"goal", std::vector<float>(spec.goal.data.begin(),
                                         spec.goal.data.end())},
             {"threshold", spec.threshold},
             {"camera", {{"azimuth", spec.camera.azimuth},
                         {"elevation", spec.camera.elevation},
                         {"scale", spec.camera.scale}}},
             {"provenance", provenance}};
  const fs::path policy_path = out_dir / "policy.bin";
  save_checkpoint(policy_path, ck);
  detail::write_file(out_dir / "rl_config.json",
                     ddpg_config_json(cfg).dump(2) + "\n");
  return DDPGTrainResult{std::move(rows), policy_path, episodes_path};
}

// Rebuilds an EnvSpec and actor parameters from a policy checkpoint. The
// returned parameter sets alias nothing; `encoder_out` backs the EnvSpec.
struct LoadedPolicy {
  ParameterSet<float> all;  // encoder.* actor.* critic.* target.*
  DDPGConfig config;
  Stage stage = Stage::pick;
  Tensor<float> goal;
  double threshold = 0;
  Camera camera;
};

inline LoadedPolicy load_policy(const std::filesystem::path& path) {
  Checkpoint<float> ck = load_checkpoint<float>(path);
  check(ck.meta.value("kind", "") == "clfd-rl", ErrorCategory::data,
        path.string(), ": not a policy checkpoint");
  LoadedPolicy lp;
  lp.all = std::move(ck.params);
  try {
    lp.config = ddpg_config_from_json(ck.meta.at("config"));
    lp.stage = stage_from_string(ck.meta.at("stage").get<std::string>());
    const auto g = ck.meta.at("goal").get<std::vector<float>>();
    check(g.size() == models::kEmbeddingDim, ErrorCategory::data,
          path.string(), ": bad goal embedding size");
    lp.goal = Tensor<float>(Shape{models::kEmbeddingDim},
                            std::vector<float>(g.begin(), g.end()));
    lp.threshold = ck.meta.at("threshold").get<double>();
    lp.camera = Camera{ck.meta.at("camera").at("azimuth").get<double>(),
                       ck.meta.at("camera").at("elevation").get<double>(),
                       ck.meta.at("camera").at("scale").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::data, path.string(), ": corrupt policy meta: ",
         e.what());
  }
  return lp;
}

enum class PolicyKind { actor, random, scripted };

struct RLEvalResult {
  double success_rate = 0;
  double mean_return = 0;
  std::size_t episodes = 0;
};

// Noise-free evaluation: success is the geometric stage predicate reached at
// any step within the limit. Episodes use independent derived rng streams, so
// results are identical regardless of thread count.
inline RLEvalResult evaluate_policy(
    const EnvSpec& spec, PolicyKind kind, const ParameterSet<float>* nets,
    std::size_t hidden, std::size_t episodes, std::uint64_t seed) {
  check(kind != PolicyKind::actor || nets != nullptr, ErrorCategory::internal,
        "evaluate_policy: actor parameters required");
  std::vector<double> returns(episodes, 0.0);
  std::vector<std::uint8_t> successes(episodes, 0);
  parallel_for(episodes, [&](std::size_t i) {
    Rng rng = Rng::stream(seed, "eval/ep/" + std::to_string(i));
    PickPlaceEnv env = make_env(spec);
    MDPState s = env.reset(rng);
    ScriptedController ctrl(spec.params);
    bool done = false;
    while (!done) {
      ActionVec act;
      if (kind == PolicyKind::scripted) {
        act = ctrl.act(env.scene());
      } else if (kind == PolicyKind::random) {
        std::array<float, kActionDim> a{};
        for (auto& v : a) v = float(rng.uniform(-1.0, 1.0));
        act = scale_action(a, spec.params);
      } else {
        Tensor<float> in(Shape{1, kObsDim + models::kEmbeddingDim});
        write_obs(s, in.data.data());
        std::copy(spec.goal.data.begin(), spec.goal.data.end(),
                  in.data.begin() + kObsDim);
        const Tensor<float> out =
            models::mlp_apply(*nets, actor_spec(hidden), in, "actor.");
        std::array<float, kActionDim> a{};
        std::copy_n(out.data.begin(), kActionDim, a.begin());
        act = scale_action(a, spec.params);
      }
      const auto res = env.step(act);
      returns[i] += res.reward;
      if (env.geometric_success()) successes[i] = 1;
      done = res.done;
      s = res.state;
    }
  });
  RLEvalResult out;
  out.episodes = episodes;
  for (std::size_t i = 0; i < episodes; ++i) {
    out.success_rate += successes[i];
    out.mean_return += returns[i];
  }
  out.success_rate /= double(episodes);
  out.mean_return /= double(episodes);
  return out;
}

}  // namespace clfd::rl
