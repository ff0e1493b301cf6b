#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "clfd/error.hpp"
#include "clfd/tensor.hpp"

namespace clfd {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double c) const { return {x * c, y * c, z * c}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
};

inline double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

enum class Stage { pick, place };

inline const char* to_string(Stage s) {
  return s == Stage::pick ? "pick" : "place";
}

inline Stage stage_from_string(const std::string& s) {
  if (s == "pick") return Stage::pick;
  if (s == "place") return Stage::place;
  fail(ErrorCategory::data, "unknown stage '", s, "'");
}

// The workspace is the unit cube with the table at z = 0. The robot is a
// 4-joint abstraction whose forward map is the identity: joints =
// (x, y, z, grip_angle).
struct SceneState {
  Vec3 gripper;
  Vec3 box;       // z = 0 while on the table; equals gripper while held
  Vec3 goal;      // on the table plane (z = 0)
  double grip_angle = 0.0;
  bool gripper_closed = false;
  bool holding = false;
  Stage stage = Stage::pick;
};

struct EnvParams {
  double v_max = 0.05;           // per-step joint velocity clamp
  double grasp_radius = 0.03;    // close succeeds within this 3-d distance
  double place_tolerance = 0.02; // success: box within this of the goal
  std::size_t step_limit = 100;
  Vec3 workspace_lo{0.0, 0.0, 0.0};
  Vec3 workspace_hi{1.0, 1.0, 0.5};
  Vec3 home{0.5, 0.68, 0.30};
  double grip_angle_max = 0.3;
};

// Action: 4 joint velocity commands (clamped to [-v_max, v_max]) plus a
// gripper command in [-1, 1]; command >= 0 closes the gripper.
struct ActionVec {
  std::array<double, 4> v{0, 0, 0, 0};
  double grip = 0.0;
};

inline double clamp(double v, double lo, double hi) {
  return std::min(std::max(v, lo), hi);
}

// One kinematic step, shared by the environment and the demonstration
// generator. Returns the actually applied joint deltas (after clamping),
// which the generator records as joint velocities.
inline std::array<double, 4> apply_action(SceneState& s, const ActionVec& a,
                                          const EnvParams& p) {
  std::array<double, 4> applied{};
  const Vec3 before = s.gripper;
  const double before_angle = s.grip_angle;
  s.gripper.x = clamp(s.gripper.x + clamp(a.v[0], -p.v_max, p.v_max),
                      p.workspace_lo.x, p.workspace_hi.x);
  s.gripper.y = clamp(s.gripper.y + clamp(a.v[1], -p.v_max, p.v_max),
                      p.workspace_lo.y, p.workspace_hi.y);
  s.gripper.z = clamp(s.gripper.z + clamp(a.v[2], -p.v_max, p.v_max),
                      p.workspace_lo.z, p.workspace_hi.z);
  s.grip_angle = clamp(s.grip_angle + clamp(a.v[3], -p.v_max, p.v_max), 0.0,
                       p.grip_angle_max);
  if (a.grip >= 0.0) {
    s.gripper_closed = true;
    if (!s.holding && distance(s.gripper, s.box) <= p.grasp_radius) {
      s.holding = true;
      s.stage = Stage::place;
    }
  } else {
    s.gripper_closed = false;
    if (s.holding) {
      s.holding = false;
      s.box = Vec3{s.gripper.x, s.gripper.y, 0.0};  // drops to the table
    }
  }
  if (s.holding) s.box = s.gripper;
  applied[0] = s.gripper.x - before.x;
  applied[1] = s.gripper.y - before.y;
  applied[2] = s.gripper.z - before.z;
  applied[3] = s.grip_angle - before_angle;
  return applied;
}

// Geometric stage-success predicates (used for evaluation; training episodes
// additionally gate on embedding distance).
inline bool pick_success(const SceneState& s) { return s.holding; }
inline bool place_success(const SceneState& s, const EnvParams& p) {
  return !s.holding &&
         distance(s.box, s.goal) <= p.place_tolerance;
}
inline bool stage_success(const SceneState& s, Stage stage, const EnvParams& p) {
  return stage == Stage::pick ? pick_success(s) : place_success(s, p);
}

// ---- rendering ----

struct Camera {
  double azimuth = 0.0;    // radians about the world z axis
  double elevation = 0.0;  // radians above the horizon
  double scale = 56.0;     // pixels per world unit
};

struct CameraRig {
  std::vector<Camera> cameras;
};

// Five fixed viewpoints. Cameras {0,1,2} are the "seen" set, {3,4} the
// "unseen" set; camera 1 (front) is the RL evaluation camera.
inline CameraRig default_camera_rig() {
  CameraRig rig;
  rig.cameras = {
      Camera{0.00, 1.25, 52.0},   // overhead
      Camera{0.00, 0.38, 56.0},   // front
      Camera{1.15, 0.52, 54.0},   // right side
      Camera{-1.05, 0.45, 58.0},  // left side (unseen)
      Camera{2.50, 0.80, 50.0},   // behind, raised (unseen)
  };
  return rig;
}

inline constexpr std::size_t kRenderSize = 64;
inline constexpr Vec3 kProjectionCenter{0.5, 0.5, 0.15};

// Exact u8 palette (no anti-aliasing anywhere).
inline constexpr std::array<std::uint8_t, 3> kColorBackground{255, 255, 255};
inline constexpr std::array<std::uint8_t, 3> kColorGoal{60, 180, 75};
inline constexpr std::array<std::uint8_t, 3> kColorBox{230, 40, 40};
inline constexpr std::array<std::uint8_t, 3> kColorGripperOpen{128, 128, 128};
inline constexpr std::array<std::uint8_t, 3> kColorGripperClosed{50, 50, 50};

// World-unit object extents (converted to pixels via the camera scale).
inline constexpr double kBoxHalfExtent = 0.055;
inline constexpr double kGoalHalfExtent = 0.075;
inline constexpr double kGripperRadius = 0.045;

namespace detail {
struct ScreenPoint {
  double u, v;
};

// Orthographic projection after rotating the scene by the camera's azimuth
// (about z) and elevation.
inline ScreenPoint project(const Vec3& p, const Camera& cam) {
  const double ca = std::cos(cam.azimuth), sa = std::sin(cam.azimuth);
  const double ce = std::cos(cam.elevation), se = std::sin(cam.elevation);
  const Vec3 right{-ca, sa, 0.0};
  const Vec3 up{-sa * se, -ca * se, ce};
  const Vec3 q = p - kProjectionCenter;
  const double half = (kRenderSize - 1) * 0.5;
  return {half + cam.scale * q.dot(right), half - cam.scale * q.dot(up)};
}

inline void fill_square(std::uint8_t* img, const ScreenPoint& c, double half_px,
                        const std::array<std::uint8_t, 3>& color) {
  const int lo_x = std::max(0, (int)std::ceil(c.u - half_px));
  const int hi_x = std::min((int)kRenderSize - 1, (int)std::floor(c.u + half_px));
  const int lo_y = std::max(0, (int)std::ceil(c.v - half_px));
  const int hi_y = std::min((int)kRenderSize - 1, (int)std::floor(c.v + half_px));
  for (int y = lo_y; y <= hi_y; ++y)
    for (int x = lo_x; x <= hi_x; ++x) {
      std::uint8_t* px = img + (y * kRenderSize + x) * 3;
      px[0] = color[0];
      px[1] = color[1];
      px[2] = color[2];
    }
}

inline void fill_disc(std::uint8_t* img, const ScreenPoint& c, double r_px,
                      const std::array<std::uint8_t, 3>& color) {
  const int lo_x = std::max(0, (int)std::ceil(c.u - r_px));
  const int hi_x = std::min((int)kRenderSize - 1, (int)std::floor(c.u + r_px));
  const int lo_y = std::max(0, (int)std::ceil(c.v - r_px));
  const int hi_y = std::min((int)kRenderSize - 1, (int)std::floor(c.v + r_px));
  const double r2 = r_px * r_px;
  for (int y = lo_y; y <= hi_y; ++y)
    for (int x = lo_x; x <= hi_x; ++x) {
      const double dx = x - c.u, dy = y - c.v;
      if (dx * dx + dy * dy > r2) continue;
      std::uint8_t* px = img + (y * kRenderSize + x) * 3;
      px[0] = color[0];
      px[1] = color[1];
      px[2] = color[2];
    }
}
}  // namespace detail

// Renders 64x64 RGB (HWC, u8) — white background; painter's order goal, box,
// gripper. Deterministic pixel-center rasterization.
inline void render_view_u8(const SceneState& s, const Camera& cam,
                           std::uint8_t* out) {
  for (std::size_t i = 0; i < kRenderSize * kRenderSize; ++i) {
    out[i * 3 + 0] = kColorBackground[0];
    out[i * 3 + 1] = kColorBackground[1];
    out[i * 3 + 2] = kColorBackground[2];
  }
  detail::fill_square(out, detail::project(s.goal, cam),
                      kGoalHalfExtent * cam.scale, kColorGoal);
  detail::fill_square(out, detail::project(s.box, cam),
                      kBoxHalfExtent * cam.scale, kColorBox);
  detail::fill_disc(out, detail::project(s.gripper, cam),
                    kGripperRadius * cam.scale,
                    s.gripper_closed ? kColorGripperClosed : kColorGripperOpen);
}

// Converts a stored u8 HWC frame to the encoder's [3,64,64] float layout in
// [0,1].
template <class S>
Tensor<S> frame_to_tensor(const std::uint8_t* hwc) {
  Tensor<S> t(Shape{3, kRenderSize, kRenderSize});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < kRenderSize; ++y)
      for (std::size_t x = 0; x < kRenderSize; ++x)
        t.data[(c * kRenderSize + y) * kRenderSize + x] =
            static_cast<S>(hwc[(y * kRenderSize + x) * 3 + c]) / S(255);
  return t;
}

template <class S>
Tensor<S> render_view(const SceneState& s, const Camera& cam) {
  std::array<std::uint8_t, kRenderSize * kRenderSize * 3> buf;
  render_view_u8(s, cam, buf.data());
  return frame_to_tensor<S>(buf.data());
}

// ---- scripted controller ----
// Phase-based pick-and-place behavior used by the demonstration generator and
// as the oracle policy in evaluation. Deterministic function of the scene.
class ScriptedController {
 public:
  explicit ScriptedController(const EnvParams& params, double speed = 0.045)
      : p_(params), speed_(std::min(speed, params.v_max)) {}

  ActionVec act(const SceneState& s) {
    ActionVec a;
    const double close_rate = p_.v_max;  // cosmetic grip-angle animation
    if (!s.holding) {
      const Vec3 grasp_target{s.box.x, s.box.y, s.box.z + 0.015};
      if (distance(s.gripper, grasp_target) > 0.012) {
        set_move(a, s.gripper, grasp_target);
        a.grip = -1.0;  // stay open on approach
      } else {
        a.grip = 1.0;  // close: within 0.03 of the box by construction
        a.v[3] = close_rate;
      }
      return a;
    }
    // Holding: lift, carry above the goal, lower, then release.
    const Vec3 lift_target{s.box.x, s.box.y, carry_z_};
    const Vec3 carry_target{s.goal.x, s.goal.y, carry_z_};
    const double xy_dist = std::hypot(s.gripper.x - s.goal.x, s.gripper.y - s.goal.y);
    a.grip = 1.0;
    if (s.grip_angle < p_.grip_angle_max) a.v[3] = close_rate;
    if (xy_dist > 0.012) {
      if (s.gripper.z < carry_z_ - 1e-9)
        set_move(a, s.gripper, lift_target);
      else
        set_move(a, s.gripper, carry_target);
    } else if (s.gripper.z > drop_z_ + 1e-9) {
      set_move(a, s.gripper, Vec3{s.goal.x, s.goal.y, drop_z_});
    } else {
      a.grip = -1.0;  // release over the goal
      a.v[3] = -close_rate;
    }
    return a;
  }

  // Post-release tidy-up used by the generator to fill remaining frames.
  ActionVec retreat(const SceneState& s) const {
    ActionVec a;
    a.grip = -1.0;
    set_move(a, s.gripper, Vec3{s.goal.x, s.goal.y, retreat_z_});
    if (s.grip_angle > 0.0) a.v[3] = -p_.v_max;
    return a;
  }

 private:
  void set_move(ActionVec& a, const Vec3& from, const Vec3& to) const {
    const Vec3 d = to - from;
    const double n = d.norm();
    if (n <= 1e-12) return;
    const double step = std::min(speed_, n);
    a.v[0] = d.x / n * step;
    a.v[1] = d.y / n * step;
    a.v[2] = d.z / n * step;
  }

  EnvParams p_;
  double speed_;
  double carry_z_ = 0.22;
  double drop_z_ = 0.05;
  double retreat_z_ = 0.26;
};

}  // namespace clfd
