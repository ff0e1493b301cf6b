#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "clfd/error.hpp"
#include "clfd/rng.hpp"
#include "clfd/scene.hpp"
#include "clfd/tensor.hpp"
#include "clfd/threading.hpp"

namespace clfd {

inline const std::vector<std::size_t> kSeenViews{0, 1, 2};
inline const std::vector<std::size_t> kUnseenViews{3, 4};
inline constexpr std::size_t kEvalCamera = 1;  // front view feeds the RL agent

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  fail(ErrorCategory::usage, "unknown split '", s, "' (expected train|val|test)");
}

struct FrameLabel {
  std::size_t t = 0;
  Stage stage = Stage::pick;
  std::array<double, 4> joints{};      // (x, y, z, grip_angle)
  std::array<double, 4> velocities{};  // per-step joint deltas
  bool gripper_closed = false;
};

struct GenConfig {
  std::size_t demos = 150;
  std::size_t frames = 40;
  CameraRig rig = default_camera_rig();
  EnvParams env;
};

struct DatasetManifest {
  int format_version = 1;
  std::uint64_t seed = 0;
  std::size_t demo_count = 0;
  std::vector<std::size_t> frames_per_demo;
  CameraRig rig;
  std::vector<std::size_t> train_ids, val_ids, test_ids;
  std::string content_hash;

  const std::vector<std::size_t>& ids(Split s) const {
    switch (s) {
      case Split::train: return train_ids;
      case Split::val: return val_ids;
      default: return test_ids;
    }
  }
};

// Contiguous split by demo index: ~2/3 train, remainder halved (val gets the
// odd one). 150 demos -> 100/25/25.
inline void assign_splits(DatasetManifest& m) {
  const std::size_t n = m.demo_count;
  const std::size_t train = (2 * n) / 3;
  const std::size_t val = (n - train + 1) / 2;
  m.train_ids.clear();
  m.val_ids.clear();
  m.test_ids.clear();
  for (std::size_t d = 0; d < n; ++d) {
    if (d < train) m.train_ids.push_back(d);
    else if (d < train + val) m.val_ids.push_back(d);
    else m.test_ids.push_back(d);
  }
}

namespace detail {

inline constexpr char kVideoMagic[9] = "CLFDVID1";
inline constexpr std::size_t kVideoHeaderBytes = 8 + 6 * 4;
inline constexpr std::size_t kFrameBytes = kRenderSize * kRenderSize * 3;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& s, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= std::uint32_t(std::uint8_t(s[off + i])) << (8 * i);
  return v;
}

// Full video file (header + t-major u8 HWC frames) as a byte string.
inline std::string encode_video(const std::vector<std::uint8_t>& frames,
                                std::size_t t_count) {
  check(frames.size() == t_count * kFrameBytes, ErrorCategory::internal,
        "encode_video: body size mismatch");
  std::string out(kVideoMagic, 8);
  put_u32(out, 1);  // version
  put_u32(out, std::uint32_t(t_count));
  put_u32(out, std::uint32_t(kRenderSize));
  put_u32(out, std::uint32_t(kRenderSize));
  put_u32(out, 3);
  put_u32(out, 0);  // dtype 0 = u8
  out.append(reinterpret_cast<const char*>(frames.data()), frames.size());
  return out;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string encode_labels(const std::vector<FrameLabel>& labels) {
  std::string out = "t,stage,j0,j1,j2,j3,v0,v1,v2,v3,gripper\n";
  for (const auto& f : labels) {
    out += std::to_string(f.t);
    out += ',';
    out += to_string(f.stage);
    for (double j : f.joints) { out += ','; out += format_double(j); }
    for (double v : f.velocities) { out += ','; out += format_double(v); }
    out += ',';
    out += f.gripper_closed ? '1' : '0';
    out += '\n';
  }
  return out;
}

inline std::vector<FrameLabel> parse_labels(const std::string& text,
                                            const std::string& origin) {
  std::vector<FrameLabel> out;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  check(line == "t,stage,j0,j1,j2,j3,v0,v1,v2,v3,gripper", ErrorCategory::data,
        origin, ": unexpected labels header '", line, "'");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    check(fields.size() == 11, ErrorCategory::data, origin,
          ": expected 11 fields, got ", fields.size(), " in '", line, "'");
    FrameLabel f;
    try {
      f.t = std::stoul(fields[0]);
      f.stage = stage_from_string(fields[1]);
      for (int i = 0; i < 4; ++i) f.joints[i] = std::stod(fields[2 + i]);
      for (int i = 0; i < 4; ++i) f.velocities[i] = std::stod(fields[6 + i]);
      f.gripper_closed = fields[10] == "1";
    } catch (const std::exception& e) {
      fail(ErrorCategory::data, origin, ": malformed row '", line, "': ",
           e.what());
    }
    out.push_back(f);
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  check(in.good(), ErrorCategory::io, "cannot open ", p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  check(in.good(), ErrorCategory::io, "failed reading ", p.string());
  return std::move(ss).str();
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  check(out.good(), ErrorCategory::io, "cannot open ", p.string(), " for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  out.flush();
  check(out.good(), ErrorCategory::io, "failed writing ", p.string());
}

inline std::filesystem::path video_path(const std::filesystem::path& root,
                                        std::size_t demo, std::size_t view) {
  return root / "frames" / ("demo_" + std::to_string(demo)) /
         ("view_" + std::to_string(view) + ".bin");
}

inline std::filesystem::path labels_path(const std::filesystem::path& root,
                                         std::size_t demo) {
  return root / "labels" / ("demo_" + std::to_string(demo) + ".csv");
}

}  // namespace detail

// One fully simulated demonstration held in memory before writing.
struct DemoData {
  std::vector<std::vector<std::uint8_t>> view_frames;  // [view][t*frame_bytes]
  std::vector<FrameLabel> labels;
  SceneState final_scene;
};

// Simulates one scripted pick-and-place demonstration. Returns false when the
// sampled placement cannot be completed within the frame budget (caller
// re-samples).
inline bool simulate_demo(Rng& rng, const GenConfig& cfg, DemoData& out) {
  const EnvParams& env = cfg.env;
  auto sample_xy = [&] {
    return Vec3{rng.uniform(0.30, 0.70), rng.uniform(0.30, 0.70), 0.0};
  };
  Vec3 box = sample_xy();
  Vec3 goal = sample_xy();
  int placement_tries = 0;
  while (distance(box, goal) < 0.15) {
    check(++placement_tries <= 100, ErrorCategory::data,
          "generate: no valid box/goal placement after 100 attempts");
    goal = sample_xy();
  }

  SceneState s;
  s.gripper = env.home;
  s.box = box;
  s.goal = goal;

  const std::size_t n_views = cfg.rig.cameras.size();
  out.view_frames.assign(n_views, {});
  for (auto& v : out.view_frames) v.resize(cfg.frames * detail::kFrameBytes);
  out.labels.clear();
  out.labels.reserve(cfg.frames);

  ScriptedController ctrl(env);
  std::array<double, 4> applied{};
  bool placed = false;
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    for (std::size_t v = 0; v < n_views; ++v)
      render_view_u8(s, cfg.rig.cameras[v],
                     out.view_frames[v].data() + t * detail::kFrameBytes);
    FrameLabel f;
    f.t = t;
    f.stage = s.stage;
    f.joints = {s.gripper.x, s.gripper.y, s.gripper.z, s.grip_angle};
    f.velocities = applied;
    f.gripper_closed = s.gripper_closed;
    out.labels.push_back(f);

    if (t + 1 == cfg.frames) break;
    placed = s.stage == Stage::place && !s.holding;
    const ActionVec a = placed ? ctrl.retreat(s) : ctrl.act(s);
    applied = apply_action(s, a, env);
  }
  out.final_scene = s;
  return s.stage == Stage::place && !s.holding &&
         distance(s.box, s.goal) <= env.place_tolerance;
}

inline DemoData generate_demo(std::uint64_t seed, std::size_t demo_index,
                              const GenConfig& cfg) {
  Rng rng = Rng::stream(seed, "data/demo_" + std::to_string(demo_index));
  DemoData demo;
  for (int attempt = 0; attempt < 100; ++attempt)
    if (simulate_demo(rng, cfg, demo)) return demo;
  fail(ErrorCategory::data, "generate: demo ", demo_index,
       " unreachable after 100 attempts");
}

// Generates the dataset directory (manifest.json, frames/, labels/) and
// returns the manifest. Pure function of (seed, config) down to the bytes.
inline DatasetManifest generate_dataset(std::uint64_t seed, const GenConfig& cfg,
                                        const std::filesystem::path& out_dir) {
  check(cfg.demos >= 1, ErrorCategory::config, "generate: demos must be >= 1");
  check(cfg.frames >= 4, ErrorCategory::config, "generate: frames must be >= 4");
  check(cfg.rig.cameras.size() == 5, ErrorCategory::config,
        "generate: camera rig must have exactly 5 cameras, got ",
        cfg.rig.cameras.size());

  std::vector<DemoData> demos(cfg.demos);
  parallel_for(cfg.demos,
               [&](std::size_t d) { demos[d] = generate_demo(seed, d, cfg); });

  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "frames");
  fs::create_directories(out_dir / "labels");

  std::uint64_t hash = kFnvOffset;
  for (std::size_t d = 0; d < cfg.demos; ++d) {
    fs::create_directories(out_dir / "frames" / ("demo_" + std::to_string(d)));
    for (std::size_t v = 0; v < cfg.rig.cameras.size(); ++v) {
      const std::string bytes =
          detail::encode_video(demos[d].view_frames[v], cfg.frames);
      hash = fnv1a64(bytes.data(), bytes.size(), hash);
      detail::write_file(detail::video_path(out_dir, d, v), bytes);
    }
    const std::string csv = detail::encode_labels(demos[d].labels);
    hash = fnv1a64(csv.data(), csv.size(), hash);
    detail::write_file(detail::labels_path(out_dir, d), csv);
  }

  DatasetManifest m;
  m.seed = seed;
  m.demo_count = cfg.demos;
  m.frames_per_demo.assign(cfg.demos, cfg.frames);
  m.rig = cfg.rig;
  assign_splits(m);
  {
    std::ostringstream hs;
    hs << std::hex << std::setw(16) << std::setfill('0') << hash;
    m.content_hash = hs.str();
  }

  nlohmann::json j;
  j["format_version"] = m.format_version;
  j["seed"] = m.seed;
  j["demo_count"] = m.demo_count;
  j["frames_per_demo"] = m.frames_per_demo;
  j["image"] = {{"height", kRenderSize}, {"width", kRenderSize},
                {"channels", 3}, {"dtype", "u8"}};
  nlohmann::json cams = nlohmann::json::array();
  for (const auto& c : m.rig.cameras)
    cams.push_back({{"azimuth", c.azimuth}, {"elevation", c.elevation},
                    {"scale", c.scale}});
  j["cameras"] = cams;
  j["splits"] = {{"train", m.train_ids}, {"val", m.val_ids}, {"test", m.test_ids}};
  j["content_hash"] = m.content_hash;
  detail::write_file(out_dir / "manifest.json", j.dump(2) + "\n");
  return m;
}

// Random access to a generated (or identically laid out external) dataset.
// Frames are read lazily; preload_views() pins chosen demos in memory for
// training-speed access.
class Dataset {
 public:
  static Dataset open(const std::filesystem::path& root, bool verify_hash = true) {
    Dataset ds;
    ds.root_ = root;
    const std::string text = detail::read_file(root / "manifest.json");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
      fail(ErrorCategory::data, "manifest.json: parse error: ", e.what());
    }
    try {
      DatasetManifest& m = ds.manifest_;
      m.format_version = j.at("format_version").get<int>();
      check(m.format_version == 1, ErrorCategory::data,
            "manifest.json: unsupported format_version ", m.format_version);
      m.seed = j.at("seed").get<std::uint64_t>();
      m.demo_count = j.at("demo_count").get<std::size_t>();
      m.frames_per_demo =
          j.at("frames_per_demo").get<std::vector<std::size_t>>();
      for (const auto& c : j.at("cameras"))
        m.rig.cameras.push_back(Camera{c.at("azimuth").get<double>(),
                                       c.at("elevation").get<double>(),
                                       c.at("scale").get<double>()});
      m.train_ids = j.at("splits").at("train").get<std::vector<std::size_t>>();
      m.val_ids = j.at("splits").at("val").get<std::vector<std::size_t>>();
      m.test_ids = j.at("splits").at("test").get<std::vector<std::size_t>>();
      m.content_hash = j.at("content_hash").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCategory::data, "manifest.json: ", e.what());
    }
    check(ds.manifest_.frames_per_demo.size() == ds.manifest_.demo_count,
          ErrorCategory::data, "manifest.json: frames_per_demo has ",
          ds.manifest_.frames_per_demo.size(), " entries for ",
          ds.manifest_.demo_count, " demos");
    if (verify_hash) {
      const std::string actual = ds.compute_content_hash();
      check(actual == ds.manifest_.content_hash, ErrorCategory::data,
            "dataset hash mismatch: manifest says ", ds.manifest_.content_hash,
            ", files hash to ", actual);
    }
    return ds;
  }

  const DatasetManifest& manifest() const { return manifest_; }
  std::size_t views() const { return manifest_.rig.cameras.size(); }
  std::size_t frames(std::size_t demo) const {
    check(demo < manifest_.demo_count, ErrorCategory::data,
          "dataset: demo ", demo, " out of range (", manifest_.demo_count, ")");
    return manifest_.frames_per_demo[demo];
  }

  std::string compute_content_hash() const {
    std::uint64_t hash = kFnvOffset;
    for (std::size_t d = 0; d < manifest_.demo_count; ++d) {
      for (std::size_t v = 0; v < views(); ++v) {
        const std::string bytes =
            detail::read_file(detail::video_path(root_, d, v));
        hash = fnv1a64(bytes.data(), bytes.size(), hash);
      }
      const std::string csv = detail::read_file(detail::labels_path(root_, d));
      hash = fnv1a64(csv.data(), csv.size(), hash);
    }
    std::ostringstream hs;
    hs << std::hex << std::setw(16) << std::setfill('0') << hash;
    return hs.str();
  }

  // Raw u8 HWC frame bytes.
  std::vector<std::uint8_t> frame_u8(std::size_t demo, std::size_t view,
                                     std::size_t t) const {
    check(demo < manifest_.demo_count && view < views(), ErrorCategory::data,
          "dataset: no frame (demo=", demo, ", view=", view, ", t=", t, ")");
    check(t < frames(demo), ErrorCategory::data, "dataset: missing frame (demo=",
          demo, ", view=", view, ", t=", t, "): demo has ", frames(demo),
          " frames");
    const auto key = std::make_pair(demo, view);
    auto it = cache_.find(key);
    if (it != cache_.end()) {
      const std::uint8_t* p = it->second.data() + t * detail::kFrameBytes;
      return {p, p + detail::kFrameBytes};
    }
    const std::string bytes = load_video_checked(demo, view);
    const char* p = bytes.data() + detail::kVideoHeaderBytes +
                    t * detail::kFrameBytes;
    return {reinterpret_cast<const std::uint8_t*>(p),
            reinterpret_cast<const std::uint8_t*>(p) + detail::kFrameBytes};
  }

  template <class S>
  Tensor<S> frame(std::size_t demo, std::size_t view, std::size_t t) const {
    return frame_to_tensor<S>(frame_u8(demo, view, t).data());
  }

  const std::vector<FrameLabel>& labels(std::size_t demo) const {
    check(demo < manifest_.demo_count, ErrorCategory::data, "dataset: demo ",
          demo, " out of range");
    auto it = labels_cache_.find(demo);
    if (it == labels_cache_.end()) {
      const auto path = detail::labels_path(root_, demo);
      auto parsed = detail::parse_labels(detail::read_file(path), path.string());
      check(parsed.size() == frames(demo), ErrorCategory::data, path.string(),
            ": has ", parsed.size(), " rows, manifest says ", frames(demo));
      it = labels_cache_.emplace(demo, std::move(parsed)).first;
    }
    return it->second;
  }

  // Pins (demo, view) videos in memory. Safe to call repeatedly.
  void preload(const std::vector<std::size_t>& demo_ids,
               const std::vector<std::size_t>& view_ids) {
    for (std::size_t d : demo_ids)
      for (std::size_t v : view_ids) {
        const auto key = std::make_pair(d, v);
        if (cache_.count(key)) continue;
        const std::string bytes = load_video_checked(d, v);
        const auto* body = reinterpret_cast<const std::uint8_t*>(
            bytes.data() + detail::kVideoHeaderBytes);
        cache_.emplace(key, std::vector<std::uint8_t>(
                                body, body + bytes.size() -
                                          detail::kVideoHeaderBytes));
      }
  }

 private:
  std::string load_video_checked(std::size_t demo, std::size_t view) const {
    const auto path = detail::video_path(root_, demo, view);
    const std::string bytes = detail::read_file(path);
    check(bytes.size() >= detail::kVideoHeaderBytes, ErrorCategory::data,
          path.string(), ": truncated header");
    check(bytes.compare(0, 8, detail::kVideoMagic, 8) == 0, ErrorCategory::data,
          path.string(), ": bad magic");
    check(detail::get_u32(bytes, 8) == 1, ErrorCategory::data, path.string(),
          ": unsupported version");
    const std::uint32_t t = detail::get_u32(bytes, 12);
    const std::uint32_t h = detail::get_u32(bytes, 16);
    const std::uint32_t w = detail::get_u32(bytes, 20);
    const std::uint32_t c = detail::get_u32(bytes, 24);
    const std::uint32_t dtype = detail::get_u32(bytes, 28);
    check(t == frames(demo) && h == kRenderSize && w == kRenderSize && c == 3 &&
              dtype == 0,
          ErrorCategory::data, path.string(),
          ": header (T=", t, ",H=", h, ",W=", w, ",C=", c, ",dtype=", dtype,
          ") does not match manifest");
    check(bytes.size() == detail::kVideoHeaderBytes +
                              std::size_t(t) * detail::kFrameBytes,
          ErrorCategory::data, path.string(), ": truncated body (", bytes.size(),
          " bytes)");
    return bytes;
  }

  std::filesystem::path root_;
  DatasetManifest manifest_;
  mutable std::map<std::pair<std::size_t, std::size_t>,
                   std::vector<std::uint8_t>> cache_;
  mutable std::map<std::size_t, std::vector<FrameLabel>> labels_cache_;
};

// ---- contrastive batch sampling ----

struct PairRef {
  std::size_t demo, t, view_anchor, view_positive;
};

struct ContrastiveBatch {
  std::vector<PairRef> pairs;
  Tensor<float> images;  // [2N, 3, 64, 64], interleaved anchor/positive
};

// Samples N anchor-positive pairs: uniform demo from the split, uniform
// timestamp, two distinct uniform viewpoints from `view_ids`; (demo, t)
// combinations are distinct within the batch.
inline std::vector<PairRef> sample_pair_refs(const Dataset& ds, Split split,
                                             const std::vector<std::size_t>& view_ids,
                                             std::size_t n, Rng& rng) {
  const auto& demo_ids = ds.manifest().ids(split);
  check(!demo_ids.empty(), ErrorCategory::data, "sample: split '",
        to_string(split), "' is empty");
  check(view_ids.size() >= 2, ErrorCategory::config,
        "sample: need at least 2 viewpoints, got ", view_ids.size());
  for (std::size_t v : view_ids)
    check(v < ds.views(), ErrorCategory::config, "sample: view ", v,
          " out of range (rig has ", ds.views(), ")");
  check(n >= 1, ErrorCategory::config, "sample: batch size must be >= 1");
  std::size_t combos = 0;
  for (std::size_t d : demo_ids) combos += ds.frames(d);
  check(n <= combos, ErrorCategory::data, "sample: batch of ", n,
        " pairs exceeds ", combos, " distinct (demo, t) combinations");

  std::vector<PairRef> pairs;
  std::vector<std::pair<std::size_t, std::size_t>> used;
  std::size_t guard = 0;
  while (pairs.size() < n) {
    check(++guard <= 1000 * n + 1000, ErrorCategory::internal,
          "sample: rejection sampling failed to find distinct (demo, t)");
    const std::size_t demo = demo_ids[rng.uniform_index(demo_ids.size())];
    const std::size_t t = rng.uniform_index(ds.frames(demo));
    bool dup = false;
    for (const auto& u : used)
      if (u.first == demo && u.second == t) { dup = true; break; }
    if (dup) continue;
    used.emplace_back(demo, t);
    const std::size_t a = rng.uniform_index(view_ids.size());
    std::size_t b = rng.uniform_index(view_ids.size() - 1);
    if (b >= a) ++b;
    pairs.push_back(PairRef{demo, t, view_ids[a], view_ids[b]});
  }
  return pairs;
}

inline ContrastiveBatch sample_contrastive_batch(
    const Dataset& ds, Split split, const std::vector<std::size_t>& view_ids,
    std::size_t n, Rng& rng) {
  ContrastiveBatch batch;
  batch.pairs = sample_pair_refs(ds, split, view_ids, n, rng);
  batch.images = Tensor<float>(Shape{2 * n, 3, kRenderSize, kRenderSize});
  const std::size_t stride = 3 * kRenderSize * kRenderSize;
  for (std::size_t k = 0; k < n; ++k) {
    const PairRef& p = batch.pairs[k];
    const Tensor<float> a = ds.frame<float>(p.demo, p.view_anchor, p.t);
    const Tensor<float> b = ds.frame<float>(p.demo, p.view_positive, p.t);
    std::copy(a.data.begin(), a.data.end(),
              batch.images.data.begin() + (2 * k) * stride);
    std::copy(b.data.begin(), b.data.end(),
              batch.images.data.begin() + (2 * k + 1) * stride);
  }
  return batch;
}

}  // namespace clfd
