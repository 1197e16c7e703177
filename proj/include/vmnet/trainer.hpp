#pragma once

// Pair manifests, batch assembly, the training loop, and the synthetic
// paired corpus used for desk-scale runs.

#include <Eigen/Dense>
#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vmnet/binary_io.hpp"
#include "vmnet/embed_net.hpp"
#include "vmnet/error.hpp"
#include "vmnet/eval_retrieval.hpp"
#include "vmnet/losses.hpp"
#include "vmnet/rng.hpp"

namespace vmnet {

enum class Split { Train, Val, Test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: break;
  }
  return "test";
}

inline std::optional<Split> parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  return std::nullopt;
}

// ---- manifest -----------------------------------------------------------------

struct ManifestEntry {
  std::string pair_id;
  std::filesystem::path video, music;  // resolved against the manifest's directory
  Split split = Split::Train;
};

struct PairManifest {
  std::vector<ManifestEntry> entries;

  std::vector<int> indices(Split s) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].split == s) out.push_back(static_cast<int>(i));
    return out;
  }
  std::size_t count(Split s) const { return indices(s).size(); }
};

inline PairManifest parse_manifest(std::istream& in, const std::filesystem::path& base, bool check_files = true) {
  PairManifest m;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "manifest line " + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::SchemaError, where + ": " + e.what());
    }
    for (const char* key : {"pair_id", "video", "music", "split"})
      require(j.is_object() && j.contains(key) && j[key].is_string(), ErrorCode::SchemaError,
              where + ": missing string field '" + key + "'");
    ManifestEntry e;
    e.pair_id = j["pair_id"].get<std::string>();
    require(!e.pair_id.empty(), ErrorCode::SchemaError, where + ": empty pair_id");
    const auto split = parse_split(j["split"].get<std::string>());
    require(split.has_value(), ErrorCode::SchemaError, where + ": split must be train, val or test");
    e.split = *split;
    auto resolve = [&](const std::string& p) {
      const std::filesystem::path path(p);
      return path.is_absolute() ? path : base / path;
    };
    e.video = resolve(j["video"].get<std::string>());
    e.music = resolve(j["music"].get<std::string>());
    if (!seen.insert(e.pair_id).second) throw Error(ErrorCode::DuplicatePairId, where + ": duplicate pair_id " + e.pair_id);
    if (check_files)
      for (const auto* p : {&e.video, &e.music})
        require(std::filesystem::exists(*p), ErrorCode::MissingFile, where + ": no such file " + p->string());
    m.entries.push_back(std::move(e));
  }
  require(!m.entries.empty(), ErrorCode::SchemaError, "manifest has no entries");
  return m;
}

inline PairManifest load_manifest(const std::filesystem::path& path, bool check_files = true) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path(), check_files);
}

/// Paths are written relative to the manifest's directory when possible.
inline void write_manifest(const std::filesystem::path& path, const PairManifest& m) {
  std::ostringstream out;
  const auto base = path.parent_path();
  auto rel = [&](const std::filesystem::path& p) {
    const auto r = p.lexically_relative(base);
    return (r.empty() || *r.begin() == "..") ? p.generic_string() : r.generic_string();
  };
  for (const auto& e : m.entries) {
    nlohmann::json j{{"pair_id", e.pair_id}, {"video", rel(e.video)}, {"music", rel(e.music)}, {"split", to_string(e.split)}};
    out << j.dump() << '\n';
  }
  const auto s = out.str();
  write_file_bytes(path, std::vector<std::uint8_t>(s.begin(), s.end()));
}

/// Paired TrackVectors of one split, one row per pair.
struct PairedData {
  std::vector<std::string> ids;
  Eigen::MatrixXd video, music;

  Eigen::Index size() const { return video.rows(); }

  PairedData rows(const std::vector<int>& idx) const {
    PairedData out;
    out.video.resize(static_cast<Eigen::Index>(idx.size()), video.cols());
    out.music.resize(static_cast<Eigen::Index>(idx.size()), music.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      out.ids.push_back(ids[static_cast<std::size_t>(idx[r])]);
      out.video.row(static_cast<Eigen::Index>(r)) = video.row(idx[r]);
      out.music.row(static_cast<Eigen::Index>(r)) = music.row(idx[r]);
    }
    return out;
  }
};

namespace detail {

inline Eigen::RowVectorXd read_track_vector(const std::filesystem::path& p) {
  const auto m = read_vmnf(p);
  require(m.rows() == 1 || m.cols() == 1, ErrorCode::ShapeMismatch, p.string() + " is not a single TrackVector");
  return m.rows() == 1 ? Eigen::RowVectorXd(m.row(0)) : Eigen::RowVectorXd(m.col(0).transpose());
}

}  // namespace detail

/// Reads every VMNF of a split; all rows of a modality must share a dim.
inline PairedData load_split(const PairManifest& m, Split s) {
  PairedData d;
  const auto idx = m.indices(s);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& e = m.entries[static_cast<std::size_t>(idx[r])];
    const auto v = detail::read_track_vector(e.video);
    const auto mu = detail::read_track_vector(e.music);
    if (r == 0) {
      d.video.resize(static_cast<Eigen::Index>(idx.size()), v.size());
      d.music.resize(static_cast<Eigen::Index>(idx.size()), mu.size());
    }
    require(v.size() == d.video.cols(), ErrorCode::DimMismatch, "video dim differs in " + e.video.string());
    require(mu.size() == d.music.cols(), ErrorCode::DimMismatch, "music dim differs in " + e.music.string());
    d.video.row(static_cast<Eigen::Index>(r)) = v;
    d.music.row(static_cast<Eigen::Index>(r)) = mu;
    d.ids.push_back(e.pair_id);
  }
  return d;
}

// ---- batches ------------------------------------------------------------------

/// Seeded per-epoch shuffle of [0, n) cut into full batches of `batch`.
inline std::vector<std::vector<int>> build_batches(int n, int batch, std::uint64_t seed, int epoch) {
  require(batch >= 1, ErrorCode::InvalidArgument, "batch size must be positive");
  require(batch <= n, ErrorCode::BatchTooLarge,
          "batch size " + std::to_string(batch) + " exceeds split size " + std::to_string(n));
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 0xba7c0000ull + static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<int>> out;
  for (int start = 0; start + batch <= n; start += batch)
    out.emplace_back(order.begin() + start, order.begin() + start + batch);
  return out;
}

// ---- training -----------------------------------------------------------------

struct TrainConfig {
  int batch_size = 256;
  int epochs = 30;
  std::uint64_t seed = 0;
  double lr = 3e-4;
  LossWeights weights;
  int embedding_dim = 64;
  std::vector<int> video_hidden{256};
  std::vector<int> music_hidden{256, 128};
  double dropout_keep = 0.9;
  bool batch_norm = true;
  int eval_every = 1;  // epochs between validation passes

  BranchConfig branch(Branch which, int input_dim) const {
    BranchConfig c;
    c.layer_dims.push_back(input_dim);
    for (int h : which == Branch::Video ? video_hidden : music_hidden) c.layer_dims.push_back(h);
    c.layer_dims.push_back(embedding_dim);
    c.dropout_keep = dropout_keep;
    c.use_batch_norm_final = batch_norm;
    return c;
  }

  void validate(bool need_positive_weight = true) const {
    require(batch_size >= 4, ErrorCode::InvalidArgument, "batch_size must be at least 4");
    require(epochs >= 0, ErrorCode::InvalidArgument, "epochs must be non-negative");
    require(lr > 0.0 && std::isfinite(lr), ErrorCode::InvalidArgument, "lr must be positive");
    require(embedding_dim >= 1, ErrorCode::InvalidArgument, "embedding_dim must be positive");
    for (int h : video_hidden) require(h >= 1, ErrorCode::InvalidArgument, "hidden sizes must be positive");
    for (int h : music_hidden) require(h >= 1, ErrorCode::InvalidArgument, "hidden sizes must be positive");
    require(dropout_keep > 0.0 && dropout_keep <= 1.0, ErrorCode::InvalidArgument, "dropout_keep must be in (0, 1]");
    require(eval_every >= 1, ErrorCode::InvalidArgument, "eval_every must be positive");
    weights.validate(need_positive_weight);
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"lr", c.lr},
          {"lambda1", c.weights.lambda1},
          {"lambda2", c.weights.lambda2},
          {"lambda3", c.weights.lambda3},
          {"lambda4", c.weights.lambda4},
          {"margin", c.weights.margin},
          {"top_q", c.weights.top_q},
          {"intra_samples", c.weights.intra_samples_t},
          {"intra_mode", to_string(c.weights.intra_mode)},
          {"embedding_dim", c.embedding_dim},
          {"video_hidden", c.video_hidden},
          {"music_hidden", c.music_hidden},
          {"dropout_keep", c.dropout_keep},
          {"batch_norm", c.batch_norm},
          {"eval_every", c.eval_every}};
}

struct TraceRecord {
  std::uint64_t step = 0;
  double inter_vm = 0, inter_mv = 0, intra_v = 0, intra_m = 0, total = 0;
  int violations_found = 0;
};

inline std::string trace_csv(const std::vector<TraceRecord>& trace) {
  std::string out = "step,inter_vm,inter_mv,intra_v,intra_m,total\n";
  char buf[256];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g\n", static_cast<unsigned long long>(r.step),
                  r.inter_vm, r.inter_mv, r.intra_v, r.intra_m, r.total);
    out += buf;
  }
  return out;
}

/// Mean of the two directions' Recall@K.
inline double bidirectional_recall(const NetworkParams& p, const PairedData& d, int k) {
  const Eigen::MatrixXd s = embed(p, Branch::Video, d.video) * embed(p, Branch::Music, d.music).transpose();
  const int kk = std::min<int>(k, static_cast<int>(s.rows()));
  return 0.5 * (recall_at_k(s, kk, RetrievalDirection::VideoToMusic) + recall_at_k(s, kk, RetrievalDirection::MusicToVideo));
}

struct TrainResult {
  NetworkParams best_params;  // highest validation R@10 (final params when no validation data)
  AdamState best_adam;
  int best_epoch = -1;
  double best_val_recall = -1.0;
  NetworkParams final_params;
  AdamState final_adam;
  std::vector<TraceRecord> trace;
  std::vector<double> val_recall;  // one entry per validation pass
};

inline std::string checkpoint_meta(const TrainConfig& cfg, int best_epoch, double best_val) {
  nlohmann::json j{{"config", to_json(cfg)}, {"best_epoch", best_epoch}, {"best_val_recall_at_10", best_val}};
  return j.dump();
}

/// Runs `cfg.epochs` epochs over `train`. A `resume` checkpoint continues at
/// the step it recorded, replaying nothing. When a step's loss is not finite
/// the last good parameters are written to `abort_checkpoint` (if set) and
/// NonFiniteLoss is raised.
inline TrainResult train(const TrainConfig& cfg, const PairedData& train_data, const PairedData* val_data = nullptr,
                         const Checkpoint* resume = nullptr, const std::filesystem::path& abort_checkpoint = {}) {
  cfg.validate(false);
  require(train_data.size() > 0, ErrorCode::EmptyCorpus, "training split is empty");
  const int n = static_cast<int>(train_data.size());
  require(cfg.batch_size <= n, ErrorCode::BatchTooLarge,
          "batch size " + std::to_string(cfg.batch_size) + " exceeds training split size " + std::to_string(n));

  TrainResult res;
  NetworkParams params;
  AdamState adam;
  if (resume) {
    params = resume->params;
    adam = resume->adam;
    require(params.video.config.input_dim() == train_data.video.cols() &&
                params.music.config.input_dim() == train_data.music.cols(),
            ErrorCode::DimMismatch, "checkpoint input dims differ from the training data");
  } else {
    params = init_params(cfg.branch(Branch::Video, static_cast<int>(train_data.video.cols())),
                         cfg.branch(Branch::Music, static_cast<int>(train_data.music.cols())), cfg.seed);
    adam = init_adam(params, cfg.lr);
  }

  std::uint64_t step = 0;
  auto snapshot_best = [&](int epoch, double val) {
    res.best_params = params;
    res.best_adam = adam;
    res.best_epoch = epoch;
    res.best_val_recall = val;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = build_batches(n, cfg.batch_size, cfg.seed, epoch);
    for (const auto& b : batches) {
      if (step < adam.t) {  // already done before the resume point
        ++step;
        continue;
      }
      const std::uint64_t step_seed = mix_seed(cfg.seed, 0x57e90000ull + step);
      const auto batch = train_data.rows(b);
      try {
        const auto fv = forward(params, Branch::Video, batch.video, Mode::Train, mix_seed(step_seed, 1));
        const auto fm = forward(params, Branch::Music, batch.music, Mode::Train, mix_seed(step_seed, 2));
        const auto loss =
            total_loss({fv.embeddings, fm.embeddings, batch.video, batch.music}, cfg.weights, mix_seed(step_seed, 3));
        NetworkGrads g{backward(fv.cache, params, loss.d_v), backward(fm.cache, params, loss.d_m)};
        update_running_stats(params, fv.cache);
        update_running_stats(params, fm.cache);
        adam_step(params, g, adam);
        res.trace.push_back({step, loss.inter_vm, loss.inter_mv, loss.intra_v, loss.intra_m, loss.total,
                             loss.violations_found});
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFiniteActivation && e.code() != ErrorCode::NonFiniteLoss) throw;
        if (!abort_checkpoint.empty()) save_checkpoint(abort_checkpoint, params, adam, checkpoint_meta(cfg, epoch, -1.0));
        throw Error(ErrorCode::NonFiniteLoss, "training diverged at step " + std::to_string(step) + ": " + e.what());
      }
      ++step;
    }
    const bool last = epoch + 1 == cfg.epochs;
    if (val_data && val_data->size() > 0 && ((epoch + 1) % cfg.eval_every == 0 || last)) {
      const double val = bidirectional_recall(params, *val_data, 10);
      res.val_recall.push_back(val);
      if (val > res.best_val_recall) snapshot_best(epoch, val);
    }
  }
  if (res.best_epoch < 0) snapshot_best(cfg.epochs - 1, res.best_val_recall);
  res.final_params = params;
  res.final_adam = adam;
  return res;
}

// ---- synthetic corpus -----------------------------------------------------------

struct SynthConfig {
  int n_pairs = 1000;
  int latent_dim = 16;
  int video_dim = 128;
  int music_dim = 96;
  double noise = 1.0;
  double gain = 1.5;  // scale of the maps inside tanh
  std::uint64_t seed = 0;
  // Explicit split sizes; when all are zero the split is 80/10/10.
  int n_train = 0, n_val = 0, n_test = 0;

  void validate() const {
    require(n_pairs >= 1 && latent_dim >= 1 && video_dim >= 1 && music_dim >= 1, ErrorCode::InvalidArgument,
            "synthetic corpus dims must be positive");
    require(noise >= 0.0 && std::isfinite(noise), ErrorCode::InvalidArgument, "noise must be non-negative");
    require(n_train >= 0 && n_val >= 0 && n_test >= 0, ErrorCode::InvalidArgument, "split sizes must be non-negative");
    require(n_train + n_val + n_test == 0 || n_train + n_val + n_test == n_pairs, ErrorCode::InvalidArgument,
            "explicit split sizes must add up to n_pairs");
  }

  std::array<int, 3> split_sizes() const {
    if (n_train + n_val + n_test > 0) return {n_train, n_val, n_test};
    const int tr = n_pairs * 8 / 10, va = n_pairs / 10;
    return {tr, va, n_pairs - tr - va};
  }
};

/// The fixed nonlinear maps: x = tanh(A z) + noise.
struct SyntheticMaps {
  Eigen::MatrixXd a_video, a_music;
};

inline SyntheticMaps make_synthetic_maps(const SynthConfig& c) {
  SyntheticMaps m{Eigen::MatrixXd(c.video_dim, c.latent_dim), Eigen::MatrixXd(c.music_dim, c.latent_dim)};
  const double scale = c.gain / std::sqrt(static_cast<double>(c.latent_dim));
  Rng rv(mix_seed(c.seed, 0xa11)), rm(mix_seed(c.seed, 0xa12));
  for (Eigen::Index i = 0; i < m.a_video.size(); ++i) m.a_video.data()[i] = scale * rv.normal();
  for (Eigen::Index i = 0; i < m.a_music.size(); ++i) m.a_music.data()[i] = scale * rm.normal();
  return m;
}

struct SyntheticPair {
  Eigen::VectorXd video, music;
};

inline SyntheticPair synth_pair(const SyntheticMaps& maps, const Eigen::VectorXd& z, double noise, Rng& rng) {
  SyntheticPair p{(maps.a_video * z).array().tanh().matrix(), (maps.a_music * z).array().tanh().matrix()};
  if (noise > 0.0) {
    for (Eigen::Index i = 0; i < p.video.size(); ++i) p.video(i) += noise * rng.normal();
    for (Eigen::Index i = 0; i < p.music.size(); ++i) p.music(i) += noise * rng.normal();
  }
  return p;
}

/// All pairs in memory, in manifest order, with their splits.
struct SyntheticCorpus {
  PairedData data;
  std::vector<Split> splits;

  PairedData split(Split s) const {
    std::vector<int> idx;
    for (std::size_t i = 0; i < splits.size(); ++i)
      if (splits[i] == s) idx.push_back(static_cast<int>(i));
    return data.rows(idx);
  }
};

inline SyntheticCorpus synthesize_corpus(const SynthConfig& c) {
  c.validate();
  const auto maps = make_synthetic_maps(c);
  SyntheticCorpus out;
  out.data.video.resize(c.n_pairs, c.video_dim);
  out.data.music.resize(c.n_pairs, c.music_dim);
  const auto sizes = c.split_sizes();
  char id[32];
  for (int i = 0; i < c.n_pairs; ++i) {
    Rng rng(mix_seed(c.seed, 0x9a1e0000ull + static_cast<std::uint64_t>(i)));
    Eigen::VectorXd z(c.latent_dim);
    for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = rng.normal();
    const auto p = synth_pair(maps, z, c.noise, rng);
    out.data.video.row(i) = p.video.transpose();
    out.data.music.row(i) = p.music.transpose();
    std::snprintf(id, sizeof id, "pair_%06d", i);
    out.data.ids.emplace_back(id);
    out.splits.push_back(i < sizes[0] ? Split::Train : (i < sizes[0] + sizes[1] ? Split::Val : Split::Test));
  }
  return out;
}

/// Writes one VMNF per TrackVector plus manifest.jsonl under `out_dir`.
inline PairManifest generate_synthetic_corpus(const SynthConfig& c, const std::filesystem::path& out_dir) {
  const auto corpus = synthesize_corpus(c);
  PairManifest m;
  try {
    std::filesystem::create_directories(out_dir / "video");
    std::filesystem::create_directories(out_dir / "music");
  } catch (const std::filesystem::filesystem_error& e) {
    throw Error(ErrorCode::IoError, e.what());
  }
  for (int i = 0; i < c.n_pairs; ++i) {
    const auto& id = corpus.data.ids[static_cast<std::size_t>(i)];
    ManifestEntry e{id, out_dir / "video" / (id + ".vmnf"), out_dir / "music" / (id + ".vmnf"),
                    corpus.splits[static_cast<std::size_t>(i)]};
    write_vmnf(e.video, corpus.data.video.row(i));
    write_vmnf(e.music, corpus.data.music.row(i));
    m.entries.push_back(std::move(e));
  }
  write_manifest(out_dir / "manifest.jsonl", m);
  return m;
}

}  // namespace vmnet
