#pragma once

// Command-line front end. Every command validates its numeric flags before
// touching any file, writes only under --out, and maps failures onto exit
// codes: 0 ok, 1 runtime failure, 2 partial failure (extraction), 64 usage.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "vmnet/audio_features.hpp"
#include "vmnet/binary_io.hpp"
#include "vmnet/dsp.hpp"
#include "vmnet/embed_net.hpp"
#include "vmnet/error.hpp"
#include "vmnet/eval_retrieval.hpp"
#include "vmnet/trainer.hpp"
#include "vmnet/video_pipeline.hpp"

namespace vmnet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitPartial = 2;
inline constexpr int kExitUsage = 64;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace fs = std::filesystem;

// ---- config layering ----------------------------------------------------------

namespace detail {

inline std::optional<std::string> find_flag_value(const std::vector<std::string>& args, const std::string& flag) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == flag && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind(flag + "=", 0) == 0) return args[i].substr(flag.size() + 1);
  }
  return std::nullopt;
}

inline bool mentions_flag(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

inline std::string scalar_token(const nlohmann::json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return v.dump();
  throw UsageError("config key '" + key + "' must hold a string, number, boolean or list");
}

}  // namespace detail

/// Turns a JSON config file into flag tokens inserted ahead of the explicit
/// ones. Keys use flag names (underscores allowed); a key also given on the
/// command line is dropped so flags win. Booleans map to --key / --no-key.
inline std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  const auto path = detail::find_flag_value(args, "--config");
  if (!path || args.size() < 2) return args;
  std::ifstream in(*path);
  if (!in) throw UsageError("cannot read config file " + *path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config file " + *path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw UsageError("config file must hold a JSON object");

  std::vector<std::string> tokens;
  for (const auto& [raw_key, value] : j.items()) {
    std::string key = raw_key;
    std::replace(key.begin(), key.end(), '_', '-');
    if (key == "config") continue;
    const std::string flag = "--" + key;
    if (detail::mentions_flag(args, flag) || detail::mentions_flag(args, "--no-" + key)) continue;
    if (value.is_boolean()) {
      tokens.push_back(value.get<bool>() ? flag : "--no-" + key);
    } else if (value.is_array()) {
      tokens.push_back(flag);
      for (const auto& v : value) tokens.push_back(detail::scalar_token(v, raw_key));
    } else {
      tokens.push_back(flag);
      tokens.push_back(detail::scalar_token(value, raw_key));
    }
  }
  std::vector<std::string> out(args.begin(), args.begin() + 2);  // program, command
  out.insert(out.end(), tokens.begin(), tokens.end());
  out.insert(out.end(), args.begin() + 2, args.end());
  return out;
}

// ---- helpers --------------------------------------------------------------------

struct Shared {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  int jobs = 1;
};

inline void add_shared(CLI::App* cmd, Shared& s, bool out_required = true) {
  cmd->add_option("--config", s.config, "JSON file with flag defaults (flags win)");
  cmd->add_option("--seed", s.seed, "Random seed");
  auto* out = cmd->add_option("--out", s.out, "Output directory");
  if (out_required) out->required();
  cmd->add_option("--jobs", s.jobs, "Worker threads for file-level parallelism")->check(CLI::Range(1, 1024));
}

/// Runs `fn` inside a usage check: argument errors become UsageError.
template <class F>
void validate_usage(F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

/// Files as given, directories expanded to their matching entries (sorted).
inline std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs, const std::string& ext) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && lower(e.path().extension().string()) == ext) found.push_back(e.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(p);
    }
  }
  return out;
}

/// Applies `fn(i)` for i in [0, n) on `jobs` threads. Results are stored by
/// index, so output does not depend on scheduling.
template <class F>
void parallel_for(std::size_t n, int jobs, F&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, std::min<int>(jobs, static_cast<int>(n))));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

inline std::string describe(const std::exception& e) {
  if (const auto* ve = dynamic_cast<const Error*>(&e)) return std::string(to_string(ve->code())) + ": " + e.what();
  return e.what();
}

inline void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

/// Per-file failures: logged to errors.log under --out and to stderr.
inline int finish_batch(const fs::path& out_dir, const std::vector<fs::path>& inputs,
                        const std::vector<std::string>& errors, std::ostream& err) {
  std::string log;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (errors[i].empty()) continue;
    ++failed;
    log += inputs[i].string() + ": " + errors[i] + "\n";
  }
  if (failed == 0) return kExitOk;
  write_text(out_dir / "errors.log", log);
  err << log;
  err << "error: " << failed << " of " << inputs.size() << " inputs failed\n";
  return failed == inputs.size() ? kExitFailure : kExitPartial;
}

inline std::vector<fs::path> output_paths(const std::vector<fs::path>& inputs, const fs::path& out_dir,
                                          std::vector<std::string>& errors) {
  std::vector<fs::path> outs;
  std::map<std::string, std::size_t> used;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto stem = inputs[i].stem().string();
    if (!used.emplace(stem, i).second) errors[i] = "output name " + stem + ".vmnf already taken by another input";
    outs.push_back(out_dir / (stem + ".vmnf"));
  }
  return outs;
}

// ---- extract-music -----------------------------------------------------------------

struct ExtractMusicArgs {
  Shared shared;
  std::vector<std::string> inputs;
  AudioFeatureConfig cfg;
};

inline int cmd_extract_music(const ExtractMusicArgs& a, std::ostream& out, std::ostream& err) {
  validate_usage([&] { a.cfg.validate(); });
  const fs::path out_dir(a.shared.out);
  const auto inputs = expand_inputs(a.inputs, ".wav");

  const auto frame_layout = music_feature_layout(a.cfg);
  const auto agg_layout =
      aggregate_frames(Eigen::MatrixXd::Zero(a.cfg.ordinal_k, layout_dim(frame_layout)), a.cfg.ordinal_k,
                       Spread::Variance, Modality::Music)
          .layout;
  fs::create_directories(out_dir);
  write_text(out_dir / "layout.json", layout_to_json(frame_layout, agg_layout).dump(2) + "\n");
  if (inputs.empty()) {
    err << "warning: no WAV inputs found\n";
    return kExitOk;
  }

  std::vector<std::string> errors(inputs.size());
  const auto outs = output_paths(inputs, out_dir, errors);
  parallel_for(inputs.size(), a.shared.jobs, [&](std::size_t i) {
    if (!errors[i].empty()) return;
    try {
      const auto tv = music_track_vector(read_wav(inputs[i]), a.cfg);
      write_vmnf(outs[i], tv.values.transpose());
    } catch (const std::exception& e) {
      errors[i] = describe(e);
    }
  });
  const auto ok = std::count(errors.begin(), errors.end(), std::string());
  out << "extracted " << ok << " of " << inputs.size() << " music files into " << out_dir.string() << "\n";
  return finish_batch(out_dir, inputs, errors, err);
}

// ---- extract-video ---------------------------------------------------------------

struct ExtractVideoArgs {
  Shared shared;
  std::vector<std::string> inputs;
  std::string model;
  bool fit = false;
  bool emit_pre_pca = false;
  VideoPipelineConfig cfg;
};

inline int cmd_extract_video(const ExtractVideoArgs& a, std::ostream& out, std::ostream& err) {
  if (!a.fit && a.model.empty()) throw UsageError("extract-video needs --model or --fit");
  validate_usage([&] {
    require(a.cfg.wpca_dim >= 1 && a.cfg.pca_dim >= 1 && a.cfg.ordinal_k >= 1, ErrorCode::InvalidArgument,
            "--wpca-dim, --pca-dim and --ordinal-k must be positive");
    require(a.cfg.wpca_eps >= 0.0, ErrorCode::InvalidArgument, "--wpca-eps must be non-negative");
  });
  const fs::path out_dir(a.shared.out);
  const auto inputs = expand_inputs(a.inputs, ".vmnf");
  fs::create_directories(out_dir);
  if (inputs.empty()) {
    err << "warning: no VMNF inputs found\n";
    return kExitOk;
  }

  std::vector<std::string> errors(inputs.size());
  const auto outs = output_paths(inputs, out_dir, errors);
  std::vector<Eigen::MatrixXd> frames(inputs.size());
  parallel_for(inputs.size(), a.shared.jobs, [&](std::size_t i) {
    if (!errors[i].empty()) return;
    try {
      frames[i] = read_vmnf(inputs[i]);
    } catch (const std::exception& e) {
      errors[i] = describe(e);
    }
  });

  VideoPipeline pipe;
  if (a.fit) {
    // The first readable file fixes the frame dim; others must match.
    Eigen::Index dim = -1;
    std::vector<std::size_t> use;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!errors[i].empty()) continue;
      if (dim < 0) dim = frames[i].cols();
      if (frames[i].cols() != dim) {
        errors[i] = std::string(to_string(ErrorCode::DimMismatch)) + ": frame dim " +
                    std::to_string(frames[i].cols()) + " differs from " + std::to_string(dim);
        continue;
      }
      use.push_back(i);
    }
    if (use.empty()) return finish_batch(out_dir, inputs, errors, err);
    std::vector<Eigen::MatrixXd> fit_set;
    for (auto i : use) fit_set.push_back(frames[i]);
    pipe = VideoPipeline(a.cfg);
    const auto rows = pipe.fit(fit_set);
    pipe.save(out_dir / "video_pipeline.vmpm");
    for (std::size_t r = 0; r < use.size(); ++r)
      write_vmnf(outs[use[r]], rows.row(static_cast<Eigen::Index>(r)));
    if (a.emit_pre_pca) write_vmnf(out_dir / "pre_pca.vmnf", pipe.pre_pca(fit_set));
    out << "fitted video pipeline on " << use.size() << " videos\n";
  } else {
    pipe = VideoPipeline::load(a.model);
    parallel_for(inputs.size(), a.shared.jobs, [&](std::size_t i) {
      if (!errors[i].empty()) return;
      try {
        write_vmnf(outs[i], pipe.apply(frames[i]).transpose());
      } catch (const std::exception& e) {
        errors[i] = describe(e);
      }
    });
    if (a.emit_pre_pca) {
      std::vector<Eigen::MatrixXd> ok;
      for (std::size_t i = 0; i < inputs.size(); ++i)
        if (errors[i].empty()) ok.push_back(frames[i]);
      if (!ok.empty()) write_vmnf(out_dir / "pre_pca.vmnf", pipe.pre_pca(ok));
    }
  }
  const auto ok = std::count(errors.begin(), errors.end(), std::string());
  out << "extracted " << ok << " of " << inputs.size() << " videos into " << out_dir.string() << "\n";
  return finish_batch(out_dir, inputs, errors, err);
}

// ---- synth ------------------------------------------------------------------------

struct SynthArgs {
  Shared shared;
  SynthConfig cfg;
};

inline int cmd_synth(SynthArgs a, std::ostream& out, std::ostream&) {
  a.cfg.seed = a.shared.seed;
  validate_usage([&] { a.cfg.validate(); });
  const auto m = generate_synthetic_corpus(a.cfg, a.shared.out);
  out << "wrote " << m.entries.size() << " pairs (" << m.count(Split::Train) << " train, " << m.count(Split::Val)
      << " val, " << m.count(Split::Test) << " test) to " << (fs::path(a.shared.out) / "manifest.jsonl").string()
      << "\n";
  return kExitOk;
}

// ---- train -------------------------------------------------------------------------

struct TrainArgs {
  Shared shared;
  std::string manifest;
  std::string resume;
  std::string intra_mode = "corrected";
  TrainConfig cfg;
};

inline IntraMode parse_intra_mode(const std::string& s) {
  if (s == "corrected") return IntraMode::Corrected;
  if (s == "literal") return IntraMode::Literal;
  throw UsageError("--intra-mode must be corrected or literal");
}

inline int cmd_train(TrainArgs a, std::ostream& out, std::ostream& err) {
  a.cfg.seed = a.shared.seed;
  a.cfg.weights.intra_mode = parse_intra_mode(a.intra_mode);
  validate_usage([&] { a.cfg.validate(); });
  const auto manifest = load_manifest(a.manifest);
  const auto train_data = load_split(manifest, Split::Train);
  const auto val_data = manifest.count(Split::Val) > 0 ? load_split(manifest, Split::Val) : PairedData{};
  if (a.cfg.batch_size > train_data.size())
    throw UsageError("--batch-size " + std::to_string(a.cfg.batch_size) + " exceeds the " +
                     std::to_string(train_data.size()) + " training pairs");
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) resume = load_checkpoint(a.resume);

  const fs::path out_dir(a.shared.out);
  fs::create_directories(out_dir);
  out << "training on " << train_data.size() << " pairs (val " << val_data.size() << "), "
      << a.cfg.epochs << " epochs, batch " << a.cfg.batch_size << "\n";
  TrainResult r;
  try {
    r = train(a.cfg, train_data, val_data.size() > 0 ? &val_data : nullptr, resume ? &*resume : nullptr,
              out_dir / "last_good.vmck");
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NonFiniteLoss)
      err << "error: " << e.what() << "; last good parameters in " << (out_dir / "last_good.vmck").string() << "\n";
    throw;
  }
  save_checkpoint(out_dir / "checkpoint.vmck", r.best_params, r.best_adam,
                  checkpoint_meta(a.cfg, r.best_epoch, r.best_val_recall));
  save_checkpoint(out_dir / "final.vmck", r.final_params, r.final_adam,
                  checkpoint_meta(a.cfg, a.cfg.epochs - 1, r.val_recall.empty() ? -1.0 : r.val_recall.back()));
  write_text(out_dir / "loss_trace.csv", trace_csv(r.trace));
  nlohmann::json summary{{"steps", r.trace.size()},
                         {"best_epoch", r.best_epoch},
                         {"best_val_recall_at_10", r.best_val_recall},
                         {"val_recall_at_10", r.val_recall},
                         {"config", to_json(a.cfg)}};
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  out << "best epoch " << r.best_epoch << ", validation R@10 " << r.best_val_recall << "\n";
  return kExitOk;
}

// ---- eval --------------------------------------------------------------------------

struct EvalArgs {
  Shared shared;
  std::string manifest;
  std::string checkpoint;
  std::string split = "test";
  std::string baseline = "none";
  int baseline_dim = 64;
  int trials = 10000;
};

inline Split parse_split_flag(const std::string& s) {
  const auto sp = parse_split(s);
  if (!sp) throw UsageError("--split must be train, val or test");
  return *sp;
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream&) {
  const auto split = parse_split_flag(a.split);
  if (a.trials < 1) throw UsageError("--trials must be positive");
  if (a.baseline != "none" && a.baseline != "pca" && a.baseline != "cca")
    throw UsageError("--baseline must be none, pca or cca");
  if (a.baseline == "none" && a.checkpoint.empty()) throw UsageError("eval needs --checkpoint (or --baseline)");
  if (a.baseline_dim < 1) throw UsageError("--baseline-dim must be positive");

  const auto manifest = load_manifest(a.manifest);
  const auto data = load_split(manifest, split);
  require(data.size() >= 2, ErrorCode::EmptyCorpus, "evaluation split needs at least two pairs");
  Eigen::MatrixXd s;
  if (a.baseline == "none") {
    const auto ck = load_checkpoint(a.checkpoint);
    s = embed(ck.params, Branch::Video, data.video) * embed(ck.params, Branch::Music, data.music).transpose();
  } else {
    const auto tr = load_split(manifest, Split::Train);
    s = a.baseline == "pca" ? pca_baseline_similarity(tr.video, tr.music, data.video, data.music, a.baseline_dim)
                            : cca_baseline_similarity(tr.video, tr.music, data.video, data.music, a.baseline_dim);
  }
  auto metrics = metrics_json(s, a.trials, a.shared.seed);
  metrics["split"] = to_string(split);
  if (a.baseline != "none") metrics["baseline"] = a.baseline;
  write_text(fs::path(a.shared.out) / "metrics.json", metrics.dump(2) + "\n");
  out << metrics.dump() << "\n";
  return kExitOk;
}

// ---- retrieve ----------------------------------------------------------------------

struct RetrieveArgs {
  Shared shared;
  std::string manifest;
  std::string checkpoint;
  std::string query;
  std::string direction = "video_to_music";
  std::string split = "test";
  int top_k = 10;
};

inline int cmd_retrieve(const RetrieveArgs& a, std::ostream& out, std::ostream&) {
  const auto split = parse_split_flag(a.split);
  RetrievalDirection dir;
  if (a.direction == "video_to_music")
    dir = RetrievalDirection::VideoToMusic;
  else if (a.direction == "music_to_video")
    dir = RetrievalDirection::MusicToVideo;
  else
    throw UsageError("--direction must be video_to_music or music_to_video");
  if (a.top_k < 1) throw UsageError("--top-k must be positive");

  const auto ck = load_checkpoint(a.checkpoint);
  const auto data = load_split(load_manifest(a.manifest), split);
  require(data.size() > 0, ErrorCode::EmptyCorpus, "retrieval split is empty");
  const auto q = vmnet::detail::read_track_vector(a.query);
  const bool from_video = dir == RetrievalDirection::VideoToMusic;
  const Eigen::MatrixXd qe = embed(ck.params, from_video ? Branch::Video : Branch::Music, Eigen::MatrixXd(q));
  const Eigen::MatrixXd corpus =
      embed(ck.params, from_video ? Branch::Music : Branch::Video, from_video ? data.music : data.video);
  const auto r = retrieve(qe.row(0).transpose(), corpus, a.top_k);

  nlohmann::json j{{"query", a.query}, {"direction", to_string(dir)}, {"results", nlohmann::json::array()}};
  for (std::size_t i = 0; i < r.ranked.size(); ++i) {
    const auto& id = data.ids[static_cast<std::size_t>(r.ranked[i].index)];
    char sim[32];
    std::snprintf(sim, sizeof sim, "%.6f", r.ranked[i].similarity);
    out << (i + 1) << "\t" << id << "\t" << sim << "\n";
    j["results"].push_back({{"rank", i + 1}, {"pair_id", id}, {"similarity", r.ranked[i].similarity}});
  }
  if (!a.shared.out.empty()) write_text(fs::path(a.shared.out) / "retrieval.json", j.dump(2) + "\n");
  return kExitOk;
}

// ---- entry point -------------------------------------------------------------------

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Content-based video-music retrieval toolkit", "vmnet"};
  app.require_subcommand(1);
  app.fallthrough(false);

  ExtractMusicArgs em;
  auto* c_em = app.add_subcommand("extract-music", "WAV files -> music TrackVectors (VMNF) + layout.json");
  add_shared(c_em, em.shared);
  c_em->add_option("inputs", em.inputs, "WAV files or directories")->required();
  c_em->add_option("--sample-rate", em.cfg.sample_rate_hz, "Resample target (Hz)");
  c_em->add_option("--trim-seconds", em.cfg.trim_seconds, "Centre excerpt length");
  c_em->add_option("--n-fft", em.cfg.n_fft, "STFT size");
  c_em->add_option("--hop", em.cfg.hop, "STFT hop");
  c_em->add_option("--hpss-kernel", em.cfg.hpss_kernel, "HPSS median length (odd)");
  c_em->add_option("--n-mel", em.cfg.n_mel, "Mel bands");
  c_em->add_option("--n-mfcc", em.cfg.n_mfcc, "MFCC coefficients");
  c_em->add_option("--ordinal-k", em.cfg.ordinal_k, "Top-k ordinal statistics");

  ExtractVideoArgs ev;
  auto* c_ev = app.add_subcommand("extract-video", "Frame features (VMNF) -> video TrackVectors");
  add_shared(c_ev, ev.shared);
  c_ev->add_option("inputs", ev.inputs, "Frame-feature VMNF files or directories")->required();
  c_ev->add_option("--model", ev.model, "Fitted pipeline (VMPM)");
  c_ev->add_flag("--fit,!--no-fit", ev.fit, "Fit the pipeline on the inputs first");
  c_ev->add_flag("--emit-pre-pca,!--no-emit-pre-pca", ev.emit_pre_pca, "Also write pre_pca.vmnf");
  c_ev->add_option("--wpca-dim", ev.cfg.wpca_dim, "Whitened PCA output dim");
  c_ev->add_option("--pca-dim", ev.cfg.pca_dim, "Final PCA dim");
  c_ev->add_option("--ordinal-k", ev.cfg.ordinal_k, "Top-k ordinal statistics");
  c_ev->add_option("--wpca-eps", ev.cfg.wpca_eps, "Whitening eigenvalue floor");

  SynthArgs sy;
  auto* c_sy = app.add_subcommand("synth", "Write a synthetic paired corpus and manifest");
  add_shared(c_sy, sy.shared);
  c_sy->add_option("--n-pairs", sy.cfg.n_pairs, "Number of pairs");
  c_sy->add_option("--latent-dim", sy.cfg.latent_dim, "Shared latent dim");
  c_sy->add_option("--video-dim", sy.cfg.video_dim, "Video TrackVector dim");
  c_sy->add_option("--music-dim", sy.cfg.music_dim, "Music TrackVector dim");
  c_sy->add_option("--noise", sy.cfg.noise, "Additive Gaussian noise std");
  c_sy->add_option("--gain", sy.cfg.gain, "Map gain inside tanh");
  c_sy->add_option("--n-train", sy.cfg.n_train, "Explicit train count");
  c_sy->add_option("--n-val", sy.cfg.n_val, "Explicit val count");
  c_sy->add_option("--n-test", sy.cfg.n_test, "Explicit test count");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train the two-branch embedding network");
  add_shared(c_tr, tr.shared);
  c_tr->add_option("--manifest", tr.manifest, "Pair manifest (JSON lines)")->required();
  c_tr->add_option("--resume", tr.resume, "Continue from a checkpoint");
  c_tr->add_option("--batch-size", tr.cfg.batch_size, "Mini-batch size");
  c_tr->add_option("--epochs", tr.cfg.epochs, "Epochs");
  c_tr->add_option("--lr", tr.cfg.lr, "Adam learning rate");
  c_tr->add_option("--lambda1", tr.cfg.weights.lambda1, "Video-anchor ranking weight");
  c_tr->add_option("--lambda2", tr.cfg.weights.lambda2, "Music-anchor ranking weight");
  c_tr->add_option("--lambda3", tr.cfg.weights.lambda3, "Video structure weight");
  c_tr->add_option("--lambda4", tr.cfg.weights.lambda4, "Music structure weight");
  c_tr->add_option("--margin", tr.cfg.weights.margin, "Ranking margin e");
  c_tr->add_option("--top-q", tr.cfg.weights.top_q, "Most-violating pairs kept per direction");
  c_tr->add_option("--intra-samples", tr.cfg.weights.intra_samples_t, "Triplets per modality (-1: 10 x batch)");
  c_tr->add_option("--intra-mode", tr.intra_mode, "corrected | literal");
  c_tr->add_option("--embedding-dim", tr.cfg.embedding_dim, "Shared embedding dim");
  c_tr->add_option("--video-hidden", tr.cfg.video_hidden, "Video hidden layer sizes");
  c_tr->add_option("--music-hidden", tr.cfg.music_hidden, "Music hidden layer sizes");
  c_tr->add_option("--dropout-keep", tr.cfg.dropout_keep, "Dropout keep probability");
  c_tr->add_flag("--batch-norm,!--no-batch-norm", tr.cfg.batch_norm, "Batch norm before L2 (default on)");
  c_tr->add_option("--eval-every", tr.cfg.eval_every, "Epochs between validation passes");

  EvalArgs ea;
  auto* c_ea = app.add_subcommand("eval", "Recall@K and machine preference on a split");
  add_shared(c_ea, ea.shared);
  c_ea->add_option("--manifest", ea.manifest, "Pair manifest")->required();
  c_ea->add_option("--checkpoint", ea.checkpoint, "Trained checkpoint (VMCK)");
  c_ea->add_option("--split", ea.split, "train | val | test");
  c_ea->add_option("--baseline", ea.baseline, "none | pca | cca (fit on the train split)");
  c_ea->add_option("--baseline-dim", ea.baseline_dim, "Baseline projection dim");
  c_ea->add_option("--trials", ea.trials, "Machine-preference trials");

  RetrieveArgs ra;
  auto* c_ra = app.add_subcommand("retrieve", "Rank a split's items for one query TrackVector");
  add_shared(c_ra, ra.shared, false);
  c_ra->add_option("--manifest", ra.manifest, "Pair manifest")->required();
  c_ra->add_option("--checkpoint", ra.checkpoint, "Trained checkpoint")->required();
  c_ra->add_option("--query", ra.query, "Query TrackVector (VMNF)")->required();
  c_ra->add_option("--direction", ra.direction, "video_to_music | music_to_video");
  c_ra->add_option("--split", ra.split, "Split to search");
  c_ra->add_option("--top-k", ra.top_k, "Results to print");

  try {
    args = expand_config(args);
    std::vector<const char*> argv;
    for (const auto& s : args) argv.push_back(s.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (c_em->parsed()) return cmd_extract_music(em, out, err);
    if (c_ev->parsed()) return cmd_extract_video(ev, out, err);
    if (c_sy->parsed()) return cmd_synth(sy, out, err);
    if (c_tr->parsed()) return cmd_train(tr, out, err);
    if (c_ea->parsed()) return cmd_eval(ea, out, err);
    if (c_ra->parsed()) return cmd_retrieve(ra, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << describe(e) << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace vmnet::cli
