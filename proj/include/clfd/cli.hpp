#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "clfd/checkpoint.hpp"
#include "clfd/dataset.hpp"
#include "clfd/ddpg.hpp"
#include "clfd/env.hpp"
#include "clfd/eval.hpp"
#include "clfd/models.hpp"
#include "clfd/threading.hpp"
#include "clfd/train.hpp"

namespace clfd::cli {

namespace fs = std::filesystem;

inline std::string single_line(std::string s) {
  std::string out;
  for (char c : s) {
    if (c == '\n') out += "; ";
    else out += c;
  }
  return out;
}

inline std::string percent2(double fraction) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  return buf;
}

// View selections: "seen", "unseen", "all", or a comma-separated index list.
// "all" resolves to the empty list, meaning every view in the rig.
inline std::vector<std::size_t> parse_view_spec(const std::string& spec) {
  if (spec == "seen") return kSeenViews;
  if (spec == "unseen") return kUnseenViews;
  if (spec == "all") return {};
  std::vector<std::size_t> out;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    check(!tok.empty() &&
              tok.find_first_not_of("0123456789") == std::string::npos,
          ErrorCategory::usage, "invalid view spec '", spec,
          "' (expected seen|unseen|all or comma-separated indices)");
    out.push_back(std::stoul(tok));
  }
  check(!out.empty(), ErrorCategory::usage, "invalid view spec '", spec, "'");
  return out;
}

inline std::vector<std::size_t> resolve_view_spec(const std::string& spec,
                                                  std::size_t n_views) {
  std::vector<std::size_t> v = parse_view_spec(spec);
  if (v.empty())
    for (std::size_t i = 0; i < n_views; ++i) v.push_back(i);
  return v;
}

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  check(in.good(), ErrorCategory::io, "cannot open ", path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::config, path.string(), ": ", e.what());
  }
}

inline void require_fresh_dir(const fs::path& out, bool force,
                              const char* cmd) {
  if (fs::exists(out) && fs::is_directory(out) && !fs::is_empty(out))
    check(force, ErrorCategory::usage, cmd, ": output directory '",
          out.string(), "' is not empty (pass --force to overwrite)");
}

// Loads encoder parameters (encoder.* entries) from a training checkpoint.
inline ParameterSet<float> load_encoder(const fs::path& path) {
  Checkpoint<float> ck = load_checkpoint<float>(path);
  check(ck.meta.value("kind", "") == "clfd-train", ErrorCategory::data,
        path.string(), ": not a training checkpoint");
  ParameterSet<float> enc;
  for (const auto& p : ck.params)
    if (p.name.rfind("encoder.", 0) == 0) enc.add(p.name, p.value);
  check(!enc.empty(), ErrorCategory::data, path.string(),
        ": checkpoint contains no encoder parameters");
  return enc;
}

struct GenDataArgs {
  std::string out;
  std::uint64_t seed = 1;
  std::size_t demos = 150;
  std::size_t frames = 40;
  bool force = false;
};

inline void cmd_gen_data(const GenDataArgs& a) {
  if (fs::exists(a.out) && fs::is_directory(a.out) && !fs::is_empty(a.out)) {
    check(a.force, ErrorCategory::usage, "gen-data: output directory '", a.out,
          "' is not empty (pass --force to overwrite)");
    fs::remove_all(a.out);
  }
  GenConfig cfg;
  cfg.demos = a.demos;
  cfg.frames = a.frames;
  const DatasetManifest m = generate_dataset(a.seed, cfg, a.out);
  const nlohmann::json resolved{{"seed", a.seed},
                                {"demos", a.demos},
                                {"frames", a.frames}};
  detail::write_file(fs::path(a.out) / "gen_config.json",
                     resolved.dump(2) + "\n");
  std::cout << "dataset: " << a.out << "\n"
            << "demos: " << m.demo_count << " (train " << m.train_ids.size()
            << ", val " << m.val_ids.size() << ", test " << m.test_ids.size()
            << ")\n"
            << "content hash: " << m.content_hash << "\n";
}

struct TrainArgs {
  std::string out, dataset, config, objective, views, resume;
  std::size_t epochs = 0, batch_size = 0, validation_every = 0;
  std::size_t extra_epochs = 0;
  double tau = 0, margin = 0, lr = 0;
  std::uint64_t seed = 0;
  bool force = false;
  // which optional flags were actually given
  bool has_epochs = false, has_batch = false, has_every = false,
       has_tau = false, has_margin = false, has_lr = false, has_seed = false,
       has_objective = false, has_views = false, has_dataset = false,
       has_config = false;
};

inline void cmd_train(const TrainArgs& a) {
  if (!a.resume.empty()) {
    check(!a.has_config && !a.has_objective && !a.has_epochs && !a.has_batch &&
              !a.has_tau && !a.has_margin && !a.has_lr && !a.has_every &&
              !a.has_seed && !a.has_views && !a.has_dataset,
          ErrorCategory::usage,
          "train: --resume takes its configuration from the checkpoint; only "
          "--out and --extra-epochs apply");
    const TrainResult res = resume(a.resume, a.extra_epochs, a.out);
    std::cout << "resumed: +" << a.extra_epochs << " epochs\n"
              << "best validation alignment: " << percent2(res.best_val)
              << "% (epoch " << res.best_epoch << ")\n"
              << "checkpoints: " << res.best_checkpoint.string() << ", "
              << res.last_checkpoint.string() << "\n"
              << "metrics: " << res.metrics_path.string() << "\n";
    return;
  }

  require_fresh_dir(a.out, a.force, "train");
  TrainConfig cfg;
  if (a.has_config) cfg = train_config_from_json(read_json_file(a.config));
  if (a.has_objective) cfg.objective = objective_from_string(a.objective);
  if (a.has_epochs) cfg.epochs = a.epochs;
  if (a.has_batch) cfg.batch_size = a.batch_size;
  if (a.has_tau) cfg.tau = a.tau;
  if (a.has_margin) cfg.margin = a.margin;
  if (a.has_lr) cfg.adam.lr = a.lr;
  if (a.has_every) cfg.validation_every = a.validation_every;
  if (a.has_seed) cfg.seed = a.seed;
  if (a.has_dataset) cfg.dataset_path = a.dataset;
  if (a.has_views) cfg.views = parse_view_spec(a.views);

  const TrainResult res = train(cfg, a.out);
  std::cout << "trained: " << cfg.epochs << " epochs ("
            << to_string(cfg.objective) << ")\n"
            << "best validation alignment: " << percent2(res.best_val)
            << "% (epoch " << res.best_epoch << ")\n"
            << "checkpoints: " << res.best_checkpoint.string() << ", "
            << res.last_checkpoint.string() << "\n"
            << "metrics: " << res.metrics_path.string() << "\n";
}

struct EvalAlignArgs {
  std::string checkpoint, dataset, split = "val", out;
  bool random_init = false;
  std::uint64_t seed = 1;
};

inline void cmd_eval_align(const EvalAlignArgs& a) {
  check(a.random_init != !a.checkpoint.empty(), ErrorCategory::usage,
        "eval-align: pass exactly one of --checkpoint or --random-init");
  const Dataset ds = Dataset::open(a.dataset);
  ParameterSet<float> params = a.random_init
                                   ? models::init_model_params<float>(a.seed)
                                   : load_encoder(a.checkpoint);
  const Split split = split_from_string(a.split);
  const AlignmentReport rep = alignment_suite(params, ds, split);

  nlohmann::json j{{"split", a.split},
                   {"encoder", a.random_init ? std::string("random-init")
                                             : a.checkpoint},
                   {"mean", rep.mean},
                   {"mean_percent", rep.mean * 100.0},
                   {"mean_literal", rep.mean_literal},
                   {"pair_count", rep.pair_count},
                   {"demo_ids", rep.demo_ids},
                   {"per_demo", rep.per_demo},
                   {"per_demo_literal", rep.per_demo_literal}};
  if (!a.out.empty()) {
    detail::write_file(a.out, j.dump(2) + "\n");
    std::cout << "report: " << a.out << "\n";
  } else {
    std::cout << j.dump(2) << "\n";
  }
  std::cout << "alignment error (" << a.split << "): " << percent2(rep.mean)
            << "% | literal distance: " << rep.mean_literal << " | demos: "
            << rep.demo_ids.size() << "\n";
}

struct EvalStageArgs {
  std::string checkpoint, dataset, views_train = "seen",
              views_test = "unseen", out;
  std::size_t train_per_class = 500, test_per_class = 100, probe_epochs = 500;
  bool shuffled_labels = false;
  std::uint64_t seed = 1;
};

inline void cmd_eval_stage(const EvalStageArgs& a) {
  const Dataset ds = Dataset::open(a.dataset);
  const ParameterSet<float> encoder = load_encoder(a.checkpoint);
  const auto views_train = resolve_view_spec(a.views_train, ds.views());
  const auto views_test = resolve_view_spec(a.views_test, ds.views());
  StageEvalConfig cfg;
  cfg.train_per_class = a.train_per_class;
  cfg.test_per_class = a.test_per_class;
  cfg.probe.epochs = a.probe_epochs;
  cfg.shuffle_labels = a.shuffled_labels;
  cfg.seed = a.seed;
  const StageEvalResult res =
      stage_probe_eval(encoder, ds, views_train, views_test, cfg);

  nlohmann::json j{{"accuracy", res.accuracy},
                   {"accuracy_percent", res.accuracy * 100.0},
                   {"views_train", a.views_train},
                   {"views_test", a.views_test},
                   {"train_count", res.train_count},
                   {"test_count", res.test_count},
                   {"shuffled_labels", a.shuffled_labels}};
  if (!a.out.empty()) {
    detail::write_file(a.out, j.dump(2) + "\n");
    std::cout << "report: " << a.out << "\n";
  }
  std::cout << "stage accuracy (train views " << a.views_train
            << ", test views " << a.views_test
            << (a.shuffled_labels ? ", shuffled labels" : "")
            << "): " << percent2(res.accuracy) << "% on " << res.test_count
            << " examples\n";
}

struct TrainRlArgs {
  std::string checkpoint, dataset, out, stage, config;
  bool random_init = false, force = false;
  std::uint64_t encoder_seed = 1;
  std::size_t episodes = 0, demo = 0, warmup = 0, her_k = 0, hidden = 0,
              batch_size = 0, buffer = 0;
  double noise_std = 0, gamma = 0;
  std::uint64_t seed = 0;
  bool has_episodes = false, has_demo = false, has_seed = false,
       has_warmup = false, has_her_k = false, has_noise = false,
       has_gamma = false, has_hidden = false, has_batch = false,
       has_buffer = false, has_config = false;
};

inline void cmd_train_rl(const TrainRlArgs& a) {
  check(a.random_init != !a.checkpoint.empty(), ErrorCategory::usage,
        "train-rl: pass exactly one of --checkpoint or --random-init");
  require_fresh_dir(a.out, a.force, "train-rl");
  const Dataset ds = Dataset::open(a.dataset);
  ParameterSet<float> all =
      a.random_init ? models::init_model_params<float>(a.encoder_seed)
                    : load_encoder(a.checkpoint);
  ParameterSet<float> encoder;
  for (const auto& p : all)
    if (p.name.rfind("encoder.", 0) == 0) encoder.add(p.name, p.value);

  rl::DDPGConfig cfg;
  if (a.has_config) cfg = rl::ddpg_config_from_json(read_json_file(a.config));
  if (a.has_episodes) cfg.episodes = a.episodes;
  if (a.has_seed) cfg.seed = a.seed;
  if (a.has_warmup) cfg.warmup = a.warmup;
  if (a.has_her_k) cfg.her_k = a.her_k;
  if (a.has_noise) cfg.noise_std = a.noise_std;
  if (a.has_gamma) cfg.gamma = a.gamma;
  if (a.has_hidden) cfg.hidden = a.hidden;
  if (a.has_batch) cfg.batch_size = a.batch_size;
  if (a.has_buffer) cfg.buffer_capacity = a.buffer;

  const Stage stage = stage_from_string(a.stage);
  const std::size_t demo =
      a.has_demo ? a.demo : ds.manifest().train_ids.front();
  rl::EnvSpec spec;
  spec.encoder = &encoder;
  spec.camera = ds.manifest().rig.cameras.at(kEvalCamera);
  spec.stage = stage;
  spec.goal = rl::select_goal(encoder, ds, demo, stage);
  spec.threshold = rl::embedding_success_threshold(encoder, ds, demo);

  const nlohmann::json provenance{
      {"dataset_hash", ds.manifest().content_hash},
      {"guidance_demo", demo},
      {"encoder", a.random_init
                      ? "random-init(seed=" + std::to_string(a.encoder_seed) +
                            ")"
                      : a.checkpoint}};
  const rl::DDPGTrainResult res =
      rl::ddpg_train(encoder, spec, cfg, provenance, a.out);

  std::size_t window = std::min<std::size_t>(100, res.rows.size());
  std::size_t succ = 0;
  for (std::size_t i = res.rows.size() - window; i < res.rows.size(); ++i)
    succ += res.rows[i].success ? 1 : 0;
  std::cout << "episodes: " << res.rows.size() << " (stage " << a.stage
            << ", guidance demo " << demo << ")\n"
            << "success rate over last " << window
            << " episodes: " << percent2(double(succ) / double(window))
            << "%\n"
            << "policy: " << res.policy_path.string() << "\n"
            << "episode log: " << res.episodes_path.string() << "\n";
}

struct EvalRlArgs {
  std::string policy, kind = "actor", out;
  std::size_t episodes = 100;
  std::uint64_t seed = 1;
};

inline void cmd_eval_rl(const EvalRlArgs& a) {
  const rl::LoadedPolicy lp = rl::load_policy(a.policy);
  rl::EnvSpec spec;
  spec.encoder = &lp.all;
  spec.camera = lp.camera;
  spec.stage = lp.stage;
  spec.goal = lp.goal;
  spec.threshold = lp.threshold;

  rl::PolicyKind kind;
  if (a.kind == "actor") kind = rl::PolicyKind::actor;
  else if (a.kind == "random") kind = rl::PolicyKind::random;
  else if (a.kind == "scripted") kind = rl::PolicyKind::scripted;
  else
    fail(ErrorCategory::usage, "eval-rl: unknown policy kind '", a.kind,
         "' (expected actor|random|scripted)");

  const rl::RLEvalResult res = rl::evaluate_policy(
      spec, kind, &lp.all, lp.config.hidden, a.episodes, a.seed);

  nlohmann::json j{{"policy", a.policy},
                   {"policy_kind", a.kind},
                   {"episodes", res.episodes},
                   {"success_rate", res.success_rate},
                   {"success_percent", res.success_rate * 100.0},
                   {"mean_return", res.mean_return}};
  if (!a.out.empty()) {
    detail::write_file(a.out, j.dump(2) + "\n");
    std::cout << "report: " << a.out << "\n";
  }
  std::cout << "success rate (" << a.kind << "): "
            << percent2(res.success_rate) << "% over " << res.episodes
            << " episodes | mean return: " << res.mean_return << "\n";
}

struct PlotExportArgs {
  std::string metrics, out;
  std::size_t smooth = 1;
};

// Exports each numeric column of a metrics CSV as an (x,y) series file, with
// a trailing moving average of window --smooth (y'_i = mean of the last
// min(i+1, smooth) values of the series).
inline void cmd_plot_export(const PlotExportArgs& a) {
  check(a.smooth >= 1, ErrorCategory::usage,
        "plot-export: --smooth must be >= 1");
  std::ifstream in(a.metrics);
  check(in.good(), ErrorCategory::io, "cannot open ", a.metrics);
  std::string line;
  check(bool(std::getline(in, line)), ErrorCategory::data, a.metrics,
        ": empty input");
  auto split_csv = [](const std::string& s) {
    std::vector<std::string> f;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    if (!s.empty() && s.back() == ',') f.push_back("");
    return f;
  };
  const std::vector<std::string> header = split_csv(line);
  check(header.size() >= 2, ErrorCategory::data, a.metrics,
        ": need at least two columns");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv(line);
    check(f.size() == header.size(), ErrorCategory::data, a.metrics, ": row ",
          rows.size() + 2, " has ", f.size(), " fields, expected ",
          header.size());
    rows.push_back(std::move(f));
  }
  check(!rows.empty(), ErrorCategory::data, a.metrics, ": empty input");

  fs::create_directories(a.out);
  std::size_t written = 0;
  for (std::size_t c = 1; c < header.size(); ++c) {
    std::vector<std::pair<std::string, double>> series;
    for (const auto& r : rows)
      if (!r[c].empty()) series.emplace_back(r[0], std::stod(r[c]));
    if (series.empty()) continue;
    std::string body = "x,y\n";
    char buf[64];
    double acc = 0;
    std::deque<double> window;
    for (std::size_t i = 0; i < series.size(); ++i) {
      window.push_back(series[i].second);
      acc += series[i].second;
      if (window.size() > a.smooth) {
        acc -= window.front();
        window.pop_front();
      }
      std::snprintf(buf, sizeof buf, "%.9g", acc / double(window.size()));
      body += series[i].first + "," + buf + "\n";
    }
    std::string name;
    for (char ch : header[c])
      name += (std::isalnum(static_cast<unsigned char>(ch)) != 0) ? ch : '_';
    const fs::path path = fs::path(a.out) / (name + ".csv");
    detail::write_file(path, body);
    std::cout << "series: " << path.string() << " (" << series.size()
              << " points)\n";
    ++written;
  }
  check(written > 0, ErrorCategory::data, a.metrics,
        ": no numeric series found");
}

inline int run(int argc, const char* const* argv) {
  CLI::App app{"contrastive learning from multi-view demonstrations"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads,
                 "worker threads (0 = auto, falls back to CLFD_THREADS)");

  GenDataArgs gen;
  auto* sgen = app.add_subcommand("gen-data",
                                  "generate a synthetic multi-view dataset");
  sgen->add_option("--out", gen.out, "output directory")->required();
  sgen->add_option("--seed", gen.seed, "master seed");
  sgen->add_option("--demos", gen.demos, "number of demonstrations");
  sgen->add_option("--frames", gen.frames, "frames per demonstration");
  sgen->add_flag("--force", gen.force, "overwrite an existing directory");
  sgen->callback([&] {
    set_thread_count(threads);
    cmd_gen_data(gen);
  });

  TrainArgs tr;
  auto* str = app.add_subcommand("train", "train an encoder");
  str->add_option("--out", tr.out, "output directory")->required();
  auto* o_ds = str->add_option("--dataset", tr.dataset, "dataset directory");
  auto* o_cfg = str->add_option("--config", tr.config, "training config JSON");
  auto* o_obj = str->add_option("--objective", tr.objective,
                                "ntxent|triplet");
  auto* o_ep = str->add_option("--epochs", tr.epochs, "training epochs");
  auto* o_bs = str->add_option("--batch-size", tr.batch_size,
                               "anchor-positive pairs per batch");
  auto* o_tau = str->add_option("--tau", tr.tau, "softmax temperature");
  auto* o_mg = str->add_option("--margin", tr.margin, "triplet margin");
  auto* o_lr = str->add_option("--lr", tr.lr, "Adam learning rate");
  auto* o_ve = str->add_option("--validation-every", tr.validation_every,
                               "epochs between validations");
  auto* o_sd = str->add_option("--seed", tr.seed, "master seed");
  auto* o_vw = str->add_option("--views", tr.views,
                               "training views: seen|unseen|all|i,j,...");
  str->add_option("--resume", tr.resume, "checkpoint to continue from");
  str->add_option("--extra-epochs", tr.extra_epochs,
                  "additional epochs when resuming");
  str->add_flag("--force", tr.force, "allow a non-empty output directory");
  str->callback([&] {
    set_thread_count(threads);
    tr.has_dataset = o_ds->count() > 0;
    tr.has_config = o_cfg->count() > 0;
    tr.has_objective = o_obj->count() > 0;
    tr.has_epochs = o_ep->count() > 0;
    tr.has_batch = o_bs->count() > 0;
    tr.has_tau = o_tau->count() > 0;
    tr.has_margin = o_mg->count() > 0;
    tr.has_lr = o_lr->count() > 0;
    tr.has_every = o_ve->count() > 0;
    tr.has_seed = o_sd->count() > 0;
    tr.has_views = o_vw->count() > 0;
    cmd_train(tr);
  });

  EvalAlignArgs ea;
  auto* sea = app.add_subcommand("eval-align",
                                 "viewpoint alignment error of an encoder");
  sea->add_option("--checkpoint", ea.checkpoint, "training checkpoint");
  sea->add_option("--dataset", ea.dataset, "dataset directory")->required();
  sea->add_option("--split", ea.split, "train|val|test (default val)");
  sea->add_option("--out", ea.out, "write the JSON report here");
  sea->add_flag("--random-init", ea.random_init,
                "evaluate a randomly initialized encoder");
  sea->add_option("--seed", ea.seed, "seed for --random-init");
  sea->callback([&] {
    set_thread_count(threads);
    cmd_eval_align(ea);
  });

  EvalStageArgs es;
  auto* ses = app.add_subcommand("eval-stage",
                                 "stage classification probe accuracy");
  ses->add_option("--checkpoint", es.checkpoint, "training checkpoint")
      ->required();
  ses->add_option("--dataset", es.dataset, "dataset directory")->required();
  ses->add_option("--views-train", es.views_train,
                  "probe training views (default seen)");
  ses->add_option("--views-test", es.views_test,
                  "probe test views (default unseen)");
  ses->add_option("--train-per-class", es.train_per_class,
                  "probe training examples per stage");
  ses->add_option("--test-per-class", es.test_per_class,
                  "probe test examples per stage");
  ses->add_option("--probe-epochs", es.probe_epochs, "probe training epochs");
  ses->add_flag("--shuffled-labels", es.shuffled_labels,
                "shuffle probe training labels (sanity control)");
  ses->add_option("--seed", es.seed, "probe sampling/init seed");
  ses->add_option("--out", es.out, "write the JSON report here");
  ses->callback([&] {
    set_thread_count(threads);
    cmd_eval_stage(es);
  });

  TrainRlArgs trl;
  auto* strl = app.add_subcommand("train-rl",
                                  "train a policy with embedding rewards");
  strl->add_option("--checkpoint", trl.checkpoint, "encoder checkpoint");
  strl->add_flag("--random-init", trl.random_init,
                 "use a randomly initialized frozen encoder");
  strl->add_option("--encoder-seed", trl.encoder_seed,
                   "seed for --random-init");
  strl->add_option("--dataset", trl.dataset, "dataset directory")->required();
  strl->add_option("--out", trl.out, "output directory")->required();
  strl->add_option("--stage", trl.stage, "pick|place")->required();
  auto* r_ep = strl->add_option("--episodes", trl.episodes,
                                "training episodes");
  auto* r_dm = strl->add_option("--demo", trl.demo,
                                "guidance demonstration id");
  auto* r_sd = strl->add_option("--seed", trl.seed, "master seed");
  auto* r_wu = strl->add_option("--warmup", trl.warmup,
                                "transitions before updates start");
  auto* r_hk = strl->add_option("--her-k", trl.her_k,
                                "relabeled copies per transition");
  auto* r_ns = strl->add_option("--noise-std", trl.noise_std,
                                "exploration noise std");
  auto* r_gm = strl->add_option("--gamma", trl.gamma, "discount factor");
  auto* r_hd = strl->add_option("--hidden", trl.hidden, "hidden layer width");
  auto* r_bs = strl->add_option("--batch-size", trl.batch_size,
                                "update batch size");
  auto* r_bf = strl->add_option("--buffer", trl.buffer, "replay capacity");
  auto* r_cf = strl->add_option("--config", trl.config, "DDPG config JSON");
  strl->add_flag("--force", trl.force, "allow a non-empty output directory");
  strl->callback([&] {
    set_thread_count(threads);
    trl.has_episodes = r_ep->count() > 0;
    trl.has_demo = r_dm->count() > 0;
    trl.has_seed = r_sd->count() > 0;
    trl.has_warmup = r_wu->count() > 0;
    trl.has_her_k = r_hk->count() > 0;
    trl.has_noise = r_ns->count() > 0;
    trl.has_gamma = r_gm->count() > 0;
    trl.has_hidden = r_hd->count() > 0;
    trl.has_batch = r_bs->count() > 0;
    trl.has_buffer = r_bf->count() > 0;
    trl.has_config = r_cf->count() > 0;
    cmd_train_rl(trl);
  });

  EvalRlArgs erl;
  auto* serl = app.add_subcommand("eval-rl", "evaluate a trained policy");
  serl->add_option("--policy", erl.policy, "policy checkpoint")->required();
  serl->add_option("--policy-kind", erl.kind,
                   "actor|random|scripted (default actor)");
  serl->add_option("--episodes", erl.episodes, "evaluation episodes");
  serl->add_option("--seed", erl.seed, "evaluation seed");
  serl->add_option("--out", erl.out, "write the JSON report here");
  serl->callback([&] {
    set_thread_count(threads);
    cmd_eval_rl(erl);
  });

  PlotExportArgs pe;
  auto* spe = app.add_subcommand("plot-export",
                                 "export CSV columns as (x,y) series");
  spe->add_option("--metrics", pe.metrics, "input CSV file")->required();
  spe->add_option("--out", pe.out, "output directory")->required();
  spe->add_option("--smooth", pe.smooth,
                  "trailing moving-average window (default 1)");
  spe->callback([&] {
    set_thread_count(threads);
    cmd_plot_export(pe);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << single_line(e.what()) << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.category()) << ": "
              << single_line(e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << single_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}

}  // namespace clfd::cli
