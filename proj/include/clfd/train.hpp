#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clfd/autodiff.hpp"
#include "clfd/checkpoint.hpp"
#include "clfd/dataset.hpp"
#include "clfd/eval.hpp"
#include "clfd/losses.hpp"
#include "clfd/models.hpp"
#include "clfd/optim.hpp"
#include "clfd/rng.hpp"

namespace clfd {

enum class Objective { ntxent, triplet };

inline const char* to_string(Objective o) {
  return o == Objective::ntxent ? "ntxent" : "triplet";
}

inline Objective objective_from_string(const std::string& s) {
  if (s == "ntxent") return Objective::ntxent;
  if (s == "triplet") return Objective::triplet;
  fail(ErrorCategory::usage, "unknown objective '", s,
       "' (expected ntxent|triplet)");
}

struct TrainConfig {
  Objective objective = Objective::ntxent;
  std::size_t batch_size = 32;  // N anchor-positive pairs per batch
  std::size_t epochs = 200;
  double tau = 0.5;
  double margin = 0.2;  // triplet baseline only
  // At 1e-3 the contrastive objective falls into the uniform-similarity
  // plateau (loss pinned at ln(2N-1)) within two epochs and never escapes;
  // 1e-4 descends monotonically from the first epoch on the default dataset.
  AdamConfig adam{/*lr=*/1e-4};
  std::size_t validation_every = 25;
  std::uint64_t seed = 1;
  std::string dataset_path;
  std::vector<std::size_t> views;  // empty = all views in the rig
};

inline void validate(const TrainConfig& c) {
  check(c.batch_size >= 1, ErrorCategory::config, "train: batch_size must be >= 1");
  check(c.epochs >= 1, ErrorCategory::config, "train: epochs must be >= 1");
  check(c.tau > 0, ErrorCategory::config, "train: tau must be > 0");
  check(c.margin >= 0, ErrorCategory::config, "train: margin must be >= 0");
  check(c.validation_every >= 1, ErrorCategory::config,
        "train: validation_every must be >= 1");
  check(!c.dataset_path.empty(), ErrorCategory::config,
        "train: dataset path is required");
}

inline nlohmann::json train_config_json(const TrainConfig& c) {
  return nlohmann::json{
      {"objective", to_string(c.objective)},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"tau", c.tau},
      {"margin", c.margin},
      {"adam", {{"lr", c.adam.lr}, {"beta1", c.adam.beta1},
                {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
      {"validation_every", c.validation_every},
      {"seed", c.seed},
      {"dataset_path", c.dataset_path},
      {"views", c.views}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.objective = objective_from_string(j.at("objective").get<std::string>());
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.tau = j.at("tau").get<double>();
    c.margin = j.at("margin").get<double>();
    c.adam.lr = j.at("adam").at("lr").get<double>();
    c.adam.beta1 = j.at("adam").at("beta1").get<double>();
    c.adam.beta2 = j.at("adam").at("beta2").get<double>();
    c.adam.eps = j.at("adam").at("eps").get<double>();
    c.validation_every = j.at("validation_every").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.dataset_path = j.at("dataset_path").get<std::string>();
    c.views = j.at("views").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::config, "train config: ", e.what());
  }
  return c;
}

struct MetricsRow {
  std::size_t epoch = 0;
  double train_loss = 0;
  bool has_val = false;
  double val_alignment = 0;
  bool has_wall_time = false;  // rows restored on resume have no wall time
  double wall_time_s = 0;
};

// CSV schema: epoch,train_loss,val_alignment_error,wall_time_s. The wall-time
// column is real elapsed time and therefore the only nondeterministic output;
// determinism checks compare metrics with that column stripped.
inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "epoch,train_loss,val_alignment_error,wall_time_s\n";
  char buf[64];
  for (const auto& r : rows) {
    out += std::to_string(r.epoch);
    std::snprintf(buf, sizeof buf, ",%.9g", r.train_loss);
    out += buf;
    if (r.has_val) {
      std::snprintf(buf, sizeof buf, ",%.9g", r.val_alignment);
      out += buf;
    } else {
      out += ',';
    }
    if (r.has_wall_time) {
      std::snprintf(buf, sizeof buf, ",%.3f", r.wall_time_s);
      out += buf;
    } else {
      out += ',';
    }
    out += '\n';
  }
  return out;
}

struct TrainResult {
  std::vector<MetricsRow> metrics;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::filesystem::path best_checkpoint, last_checkpoint, metrics_path;
};

namespace detail {

struct TrainState {
  TrainConfig cfg;
  Dataset dataset;
  std::vector<std::size_t> views;
  std::size_t batches_per_epoch = 0;
  ParameterSet<float> params;
  Adam<float> opt;
  Rng batch_rng, neg_rng;
  std::vector<MetricsRow> metrics;  // without wall times for restored rows
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t epoch_done = 0;

  TrainState(TrainConfig c, Dataset ds, ParameterSet<float> p)
      : cfg(std::move(c)), dataset(std::move(ds)), params(std::move(p)),
        opt(params, cfg.adam) {}
};

inline std::vector<std::size_t> resolve_views(const TrainConfig& cfg,
                                              const Dataset& ds) {
  if (!cfg.views.empty()) return cfg.views;
  std::vector<std::size_t> all(ds.views());
  for (std::size_t v = 0; v < all.size(); ++v) all[v] = v;
  return all;
}

inline std::size_t compute_batches_per_epoch(const Dataset& ds,
                                             std::size_t batch_size) {
  std::size_t pairs = 0;
  for (std::size_t d : ds.manifest().ids(Split::train)) pairs += ds.frames(d);
  check(batch_size <= pairs, ErrorCategory::config, "train: batch size ",
        batch_size, " exceeds the ", pairs,
        " distinct (demo, t) combinations in the train split");
  return std::max<std::size_t>(1, pairs / batch_size);
}

inline ParameterSet<float> init_train_params(const TrainConfig& cfg) {
  if (cfg.objective == Objective::ntxent)
    return models::init_model_params<float>(cfg.seed);
  // Triplet baseline trains the encoder directly on 32-d embeddings (no
  // projection head). Drawing the encoder first keeps its init draws
  // identical to the ntxent run under the same seed.
  Rng rng = Rng::stream(cfg.seed, "init");
  ParameterSet<float> ps;
  models::add_desk_cnn_params(ps, rng);
  return ps;
}

// One optimization step on one sampled batch; returns the batch loss.
inline double train_step(TrainState& st) {
  const ContrastiveBatch batch = sample_contrastive_batch(
      st.dataset, Split::train, st.views, st.cfg.batch_size, st.batch_rng);
  const std::size_t rows = batch.images.shape[0];

  Graph<float> g;
  const auto ids = models::bind_params(g, st.params);
  NodeId x = g.input(batch.images, false);
  NodeId h = models::desk_cnn_forward(g, st.params, ids, x);
  NodeId loss;
  if (st.cfg.objective == Objective::ntxent) {
    NodeId z = models::projection_head_forward(g, st.params, ids, h);
    loss = nt_xent_batch_graph(g, z, float(st.cfg.tau));
  } else {
    // 2N directed triplets: anchor row i, positive partner(i), negative a
    // uniformly random row outside the pair.
    std::vector<std::size_t> pos(rows), neg(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      pos[i] = partner_index(i);
      std::size_t j = st.neg_rng.uniform_index(rows - 2);
      const std::size_t lo = std::min(i, pos[i]);
      const std::size_t hi = std::max(i, pos[i]);
      if (j >= lo) ++j;
      if (j >= hi) ++j;
      neg[i] = j;
    }
    NodeId positives = g.gather_rows(h, pos);
    NodeId negatives = g.gather_rows(h, neg);
    loss = triplet_batch_graph(g, h, positives, negatives,
                               float(st.cfg.margin));
  }
  const double value = g.value(loss).data[0];
  if (!std::isfinite(value)) return value;  // caller aborts with diagnostics
  g.backward(loss);
  std::vector<Tensor<float>> grads;
  grads.reserve(ids.size());
  for (NodeId id : ids) grads.push_back(g.grad(id));
  st.opt.step(st.params, grads);
  return value;
}

inline Checkpoint<float> make_checkpoint(const TrainState& st) {
  Checkpoint<float> ck;
  ck.params = st.params;
  ck.has_adam = true;
  ck.adam_m = st.opt.first_moments();
  ck.adam_v = st.opt.second_moments();
  ck.adam_step = st.opt.step_count();
  nlohmann::json metrics = nlohmann::json::array();
  for (const auto& r : st.metrics) {
    nlohmann::json row = {{"epoch", r.epoch}, {"train_loss", r.train_loss}};
    if (r.has_val) row["val_alignment_error"] = r.val_alignment;
    metrics.push_back(row);
  }
  ck.meta = {
      {"kind", "clfd-train"},
      {"config", train_config_json(st.cfg)},
      {"dataset_hash", st.dataset.manifest().content_hash},
      {"epoch", st.epoch_done},
      {"best_val_alignment",
       st.best_val == std::numeric_limits<double>::infinity()
           ? nlohmann::json()
           : nlohmann::json(st.best_val)},
      {"best_epoch", st.best_epoch},
      {"rng", {{"batch", st.batch_rng.state()}, {"neg", st.neg_rng.state()}}},
      {"metrics", metrics}};
  return ck;
}

// Runs epochs [start+1 .. start+count], writing metrics/checkpoints under
// out_dir as it goes.
inline TrainResult run_epochs(TrainState& st, std::size_t count,
                              const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const auto t0 = std::chrono::steady_clock::now();
  const auto wall = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  st.dataset.preload(st.dataset.manifest().ids(Split::train), st.views);
  {
    std::vector<std::size_t> all_views(st.dataset.views());
    for (std::size_t v = 0; v < all_views.size(); ++v) all_views[v] = v;
    st.dataset.preload(st.dataset.manifest().ids(Split::val), all_views);
  }

  const fs::path best_path = out_dir / "checkpoint_best.bin";
  const fs::path last_path = out_dir / "checkpoint_last.bin";
  const fs::path metrics_path = out_dir / "metrics.csv";
  const std::size_t last_epoch = st.epoch_done + count;

  // CSV rows keep real wall times for epochs run in this process; rows
  // restored from a checkpoint keep their empty wall-time cells.
  std::vector<MetricsRow> csv_rows = st.metrics;

  std::deque<double> loss_tail;
  for (std::size_t epoch = st.epoch_done + 1; epoch <= last_epoch; ++epoch) {
    double loss_sum = 0;
    for (std::size_t b = 0; b < st.batches_per_epoch; ++b) {
      const double loss = train_step(st);
      if (!std::isfinite(loss)) {
        std::ostringstream tail;
        for (double v : loss_tail) tail << v << ' ';
        fail(ErrorCategory::numeric, "train: non-finite loss at epoch ", epoch,
             ", batch ", b, "; recent losses: ", tail.str());
      }
      loss_sum += loss;
      loss_tail.push_back(loss);
      if (loss_tail.size() > 8) loss_tail.pop_front();
    }
    MetricsRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / double(st.batches_per_epoch);
    if (epoch % st.cfg.validation_every == 0 || epoch == last_epoch) {
      const AlignmentReport rep =
          alignment_suite(st.params, st.dataset, Split::val);
      row.has_val = true;
      row.val_alignment = rep.mean;
      st.epoch_done = epoch;  // checkpoint meta must carry the true epoch
      if (rep.mean < st.best_val) {
        st.best_val = rep.mean;
        st.best_epoch = epoch;
        st.metrics.push_back(row);  // include this row in the best snapshot
        save_checkpoint(best_path, make_checkpoint(st));
        st.metrics.pop_back();
      }
    }
    row.has_wall_time = true;
    row.wall_time_s = wall();
    // Stored metrics (checkpoint meta) never carry wall times, so resumed
    // runs reproduce identical checkpoints.
    MetricsRow stored = row;
    stored.has_wall_time = false;
    stored.wall_time_s = 0;
    st.metrics.push_back(stored);
    st.epoch_done = epoch;

    csv_rows.push_back(row);
    detail::write_file(metrics_path, metrics_csv(csv_rows));
  }

  st.epoch_done = last_epoch;
  if (count == 0) detail::write_file(metrics_path, metrics_csv(csv_rows));
  save_checkpoint(last_path, make_checkpoint(st));
  // Only a run that never validated (zero epochs from scratch) falls back to
  // the last state as "best"; otherwise the best file was written when the
  // best validation happened.
  if (!fs::exists(best_path) &&
      st.best_val == std::numeric_limits<double>::infinity())
    save_checkpoint(best_path, make_checkpoint(st));

  TrainResult res;
  res.metrics = csv_rows;
  res.best_val = st.best_val;
  res.best_epoch = st.best_epoch;
  res.best_checkpoint = best_path;
  res.last_checkpoint = last_path;
  res.metrics_path = metrics_path;
  return res;
}

}  // namespace detail

// Algorithm-1 training (or the triplet baseline) with periodic validation and
// best-checkpoint retention.
inline TrainResult train(const TrainConfig& cfg,
                         const std::filesystem::path& out_dir) {
  validate(cfg);
  Dataset ds = Dataset::open(cfg.dataset_path);
  detail::TrainState st(cfg, std::move(ds), detail::init_train_params(cfg));
  st.views = detail::resolve_views(cfg, st.dataset);
  check(st.views.size() >= 2, ErrorCategory::config,
        "train: need at least 2 views for anchor-positive pairs");
  st.batches_per_epoch =
      detail::compute_batches_per_epoch(st.dataset, cfg.batch_size);
  st.batch_rng = Rng::stream(cfg.seed, "batch");
  st.neg_rng = Rng::stream(cfg.seed, "neg");
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  detail::write_file(out_dir.empty() ? "train_config.json"
                                     : (out_dir / "train_config.json").string(),
                     train_config_json(cfg).dump(2) + "\n");
  return detail::run_epochs(st, cfg.epochs, out_dir);
}

// Continues a run from its last checkpoint for extra_epochs more epochs.
// train(k) followed by resume(m) reproduces train(k+m) exactly (the restored
// rows of metrics.csv have empty wall-time cells).
inline TrainResult resume(const std::filesystem::path& checkpoint_path,
                          std::size_t extra_epochs,
                          const std::filesystem::path& out_dir) {
  Checkpoint<float> ck = load_checkpoint<float>(checkpoint_path);
  check(ck.meta.value("kind", "") == "clfd-train", ErrorCategory::data,
        "resume: ", checkpoint_path.string(), " is not a training checkpoint");
  const TrainConfig cfg = train_config_from_json(ck.meta.at("config"));
  validate(cfg);
  Dataset ds = Dataset::open(cfg.dataset_path);
  check(ds.manifest().content_hash ==
            ck.meta.at("dataset_hash").get<std::string>(),
        ErrorCategory::data,
        "resume: dataset at ", cfg.dataset_path,
        " does not match the checkpoint (content hash differs)");

  detail::TrainState st(cfg, std::move(ds), std::move(ck.params));
  st.views = detail::resolve_views(cfg, st.dataset);
  st.batches_per_epoch =
      detail::compute_batches_per_epoch(st.dataset, cfg.batch_size);
  check(ck.has_adam, ErrorCategory::data, "resume: checkpoint lacks Adam state");
  st.opt.set_state(std::move(ck.adam_m), std::move(ck.adam_v), ck.adam_step);
  try {
    st.batch_rng.set_state(ck.meta.at("rng").at("batch").get<std::uint64_t>());
    st.neg_rng.set_state(ck.meta.at("rng").at("neg").get<std::uint64_t>());
    st.epoch_done = ck.meta.at("epoch").get<std::size_t>();
    st.best_epoch = ck.meta.at("best_epoch").get<std::size_t>();
    if (!ck.meta.at("best_val_alignment").is_null())
      st.best_val = ck.meta.at("best_val_alignment").get<double>();
    for (const auto& row : ck.meta.at("metrics")) {
      MetricsRow r;
      r.epoch = row.at("epoch").get<std::size_t>();
      r.train_loss = row.at("train_loss").get<double>();
      if (row.contains("val_alignment_error")) {
        r.has_val = true;
        r.val_alignment = row.at("val_alignment_error").get<double>();
      }
      st.metrics.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::data, "resume: corrupt checkpoint meta: ", e.what());
  }

  // Carry the running best checkpoint into the output directory so it is
  // always present next to the latest state, even when resuming elsewhere.
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const fs::path src_best =
      checkpoint_path.parent_path() / "checkpoint_best.bin";
  const fs::path dst_best = out_dir / "checkpoint_best.bin";
  if (std::isfinite(st.best_val) && fs::exists(src_best) &&
      fs::weakly_canonical(src_best) != fs::weakly_canonical(dst_best))
    fs::copy_file(src_best, dst_best, fs::copy_options::overwrite_existing);

  return detail::run_epochs(st, extra_epochs, out_dir);
}

}  // namespace clfd
