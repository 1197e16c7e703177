#pragma once

// Two-branch fully connected embedding network: ReLU hidden layers with
// inverted dropout, a final affine layer followed by batch norm and row L2
// normalisation, hand-written reverse mode, and Adam.

#include <Eigen/Dense>
#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <type_traits>
#include <vector>

#include "vmnet/binary_io.hpp"
#include "vmnet/error.hpp"
#include "vmnet/rng.hpp"

namespace vmnet {

enum class Branch { Video, Music };
enum class Mode { Train, Eval };

inline const char* to_string(Branch b) { return b == Branch::Video ? "video" : "music"; }

struct BranchConfig {
  std::vector<int> layer_dims;  // input, hidden..., embedding
  double dropout_keep = 0.9;
  bool use_batch_norm_final = true;

  int layers() const { return static_cast<int>(layer_dims.size()) - 1; }
  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }

  void validate() const {
    require(layer_dims.size() >= 2, ErrorCode::InvalidArgument, "branch needs at least one layer");
    for (int d : layer_dims) require(d > 0, ErrorCode::InvalidArgument, "layer dims must be positive");
    require(dropout_keep > 0.0 && dropout_keep <= 1.0, ErrorCode::InvalidArgument,
            "dropout_keep must be in (0, 1]");
  }

  bool operator==(const BranchConfig&) const = default;
};

/// y = x W^T + b for row-major batches, so W is out x in.
struct DenseLayer {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
};

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.99;

struct BranchParams {
  BranchConfig config;
  std::vector<DenseLayer> layers;
  Eigen::VectorXd gamma, beta;
  Eigen::VectorXd running_mean, running_var;
};

/// Same field names as the trainable part of BranchParams so the tensor
/// walkers below accept either.
struct BranchGrads {
  std::vector<DenseLayer> layers;
  Eigen::VectorXd gamma, beta;
};

struct NetworkParams {
  BranchParams video, music;
  std::uint64_t version = 0;  // bumped on every optimiser step

  BranchParams& branch(Branch b) { return b == Branch::Video ? video : music; }
  const BranchParams& branch(Branch b) const { return b == Branch::Video ? video : music; }
  int embedding_dim() const { return video.config.output_dim(); }
};

struct NetworkGrads {
  BranchGrads video, music;

  BranchGrads& branch(Branch b) { return b == Branch::Video ? video : music; }
  const BranchGrads& branch(Branch b) const { return b == Branch::Video ? video : music; }
};

// ---- tensor walking -------------------------------------------------------

/// Trainable tensors of a branch, flattened, in a fixed order: each layer's
/// W then b, then gamma and beta.
template <class B>
auto flat_views(B& br) {
  using Scalar = std::conditional_t<std::is_const_v<B>, const double, double>;
  using View = Eigen::Map<std::conditional_t<std::is_const_v<B>, const Eigen::VectorXd, Eigen::VectorXd>>;
  std::vector<View> out;
  auto add = [&](auto& t) { out.emplace_back(static_cast<Scalar*>(t.data()), t.size()); };
  for (auto& l : br.layers) {
    add(l.W);
    add(l.b);
  }
  add(br.gamma);
  add(br.beta);
  return out;
}

inline std::vector<std::string> trainable_names(const BranchParams& br, Branch which) {
  std::vector<std::string> names;
  const std::string p = to_string(which);
  for (std::size_t i = 0; i < br.layers.size(); ++i) {
    names.push_back(p + ".fc" + std::to_string(i) + ".W");
    names.push_back(p + ".fc" + std::to_string(i) + ".b");
  }
  names.push_back(p + ".bn.gamma");
  names.push_back(p + ".bn.beta");
  return names;
}

inline BranchGrads zero_grads(const BranchParams& br) {
  BranchGrads g;
  for (const auto& l : br.layers)
    g.layers.push_back({Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()), Eigen::VectorXd::Zero(l.b.size())});
  g.gamma = Eigen::VectorXd::Zero(br.gamma.size());
  g.beta = Eigen::VectorXd::Zero(br.beta.size());
  return g;
}

inline NetworkGrads zero_grads(const NetworkParams& p) { return {zero_grads(p.video), zero_grads(p.music)}; }

// ---- initialisation ---------------------------------------------------------

inline BranchParams init_branch(const BranchConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  BranchParams br;
  br.config = cfg;
  for (int l = 0; l < cfg.layers(); ++l) {
    const int in = cfg.layer_dims[static_cast<std::size_t>(l)];
    const int out = cfg.layer_dims[static_cast<std::size_t>(l) + 1];
    const double a = std::sqrt(6.0 / (in + out));
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(l)));
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) layer.W(r, c) = rng.uniform(-a, a);
    br.layers.push_back(std::move(layer));
  }
  const int d = cfg.output_dim();
  br.gamma = Eigen::VectorXd::Ones(d);
  br.beta = Eigen::VectorXd::Zero(d);
  br.running_mean = Eigen::VectorXd::Zero(d);
  br.running_var = Eigen::VectorXd::Ones(d);
  return br;
}

inline NetworkParams init_params(const BranchConfig& video_cfg, const BranchConfig& music_cfg,
                                 std::uint64_t seed) {
  video_cfg.validate();
  music_cfg.validate();
  require(video_cfg.output_dim() == music_cfg.output_dim(), ErrorCode::DimMismatch,
          "branches must share the embedding dim");
  NetworkParams p;
  p.video = init_branch(video_cfg, mix_seed(seed, 0x71de0));
  p.music = init_branch(music_cfg, mix_seed(seed, 0x3051c));
  return p;
}

// ---- forward ----------------------------------------------------------------

struct LayerCache {
  Eigen::MatrixXd input;  // N x in
  Eigen::MatrixXd z;      // pre-activation, N x out
  Eigen::MatrixXd mask;   // dropout scale (0 or 1/keep); empty when unused
};

struct ForwardCache {
  Branch branch = Branch::Video;
  Mode mode = Mode::Eval;
  std::uint64_t params_version = 0;
  std::vector<LayerCache> layers;
  // final-layer batch norm
  Eigen::VectorXd batch_mean, batch_var, inv_std;
  Eigen::MatrixXd xhat;
  Eigen::MatrixXd pre_l2;  // rows before normalisation
  Eigen::VectorXd norms;
  Eigen::MatrixXd output;
};

struct ForwardResult {
  Eigen::MatrixXd embeddings;
  ForwardCache cache;
};

inline ForwardResult forward(const NetworkParams& params, Branch which, const Eigen::MatrixXd& batch, Mode mode,
                             std::uint64_t seed = 0) {
  const auto& br = params.branch(which);
  const auto& cfg = br.config;
  require(batch.cols() == cfg.input_dim(), ErrorCode::DimMismatch,
          std::string(to_string(which)) + " branch expects dim " + std::to_string(cfg.input_dim()) + ", got " +
              std::to_string(batch.cols()));
  require(batch.rows() > 0, ErrorCode::InvalidArgument, "empty batch");
  const Eigen::Index n = batch.rows();

  ForwardCache cache;
  cache.branch = which;
  cache.mode = mode;
  cache.params_version = params.version;

  Eigen::MatrixXd a = batch;
  const int L = cfg.layers();
  for (int l = 0; l < L; ++l) {
    const auto& layer = br.layers[static_cast<std::size_t>(l)];
    LayerCache lc;
    lc.input = a;
    lc.z = (a * layer.W.transpose()).rowwise() + layer.b.transpose();
    if (l + 1 < L) {
      a = lc.z.cwiseMax(0.0);
      if (mode == Mode::Train && cfg.dropout_keep < 1.0) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(l)));
        lc.mask.resize(a.rows(), a.cols());
        const double scale = 1.0 / cfg.dropout_keep;
        for (Eigen::Index i = 0; i < a.rows(); ++i)
          for (Eigen::Index j = 0; j < a.cols(); ++j) lc.mask(i, j) = rng.bernoulli(cfg.dropout_keep) ? scale : 0.0;
        a = a.cwiseProduct(lc.mask);
      }
    } else {
      a = lc.z;
    }
    cache.layers.push_back(std::move(lc));
  }

  if (cfg.use_batch_norm_final) {
    if (mode == Mode::Train) {
      cache.batch_mean = a.colwise().mean().transpose();
      const Eigen::MatrixXd centred = a.rowwise() - cache.batch_mean.transpose();
      cache.batch_var = centred.colwise().squaredNorm().transpose() / static_cast<double>(n);
      cache.inv_std = (cache.batch_var.array() + kBnEps).rsqrt().matrix();
      cache.xhat = centred * cache.inv_std.asDiagonal();
    } else {
      cache.inv_std = (br.running_var.array() + kBnEps).rsqrt().matrix();
      cache.xhat = (a.rowwise() - br.running_mean.transpose()) * cache.inv_std.asDiagonal();
    }
    a = (cache.xhat * br.gamma.asDiagonal()).rowwise() + br.beta.transpose();
  }

  cache.pre_l2 = a;
  cache.norms = a.rowwise().norm();
  cache.output = a;
  for (Eigen::Index i = 0; i < n; ++i)
    if (cache.norms(i) > 0.0) cache.output.row(i) /= cache.norms(i);
  if (!cache.output.allFinite())
    throw Error(ErrorCode::NonFiniteActivation, std::string("non-finite activation in ") + to_string(which) + " branch");

  Eigen::MatrixXd out = cache.output;
  return {std::move(out), std::move(cache)};
}

/// Eval-mode embeddings only.
inline Eigen::MatrixXd embed(const NetworkParams& params, Branch which, const Eigen::MatrixXd& batch) {
  return forward(params, which, batch, Mode::Eval).embeddings;
}

/// Exponential moving average of the batch statistics seen by a train pass.
inline void update_running_stats(NetworkParams& params, const ForwardCache& cache) {
  auto& br = params.branch(cache.branch);
  if (cache.mode != Mode::Train || !br.config.use_batch_norm_final) return;
  br.running_mean = kBnMomentum * br.running_mean + (1.0 - kBnMomentum) * cache.batch_mean;
  br.running_var = kBnMomentum * br.running_var + (1.0 - kBnMomentum) * cache.batch_var;
}

// ---- backward ---------------------------------------------------------------

inline BranchGrads backward(const ForwardCache& cache, const NetworkParams& params, const Eigen::MatrixXd& d_out) {
  require(cache.mode == Mode::Train, ErrorCode::StaleCache, "backward needs a train-mode cache");
  require(cache.params_version == params.version, ErrorCode::StaleCache,
          "cache was produced by an older parameter version");
  const auto& br = params.branch(cache.branch);
  require(d_out.rows() == cache.output.rows() && d_out.cols() == cache.output.cols(), ErrorCode::ShapeMismatch,
          "upstream gradient shape differs from the forward output");
  const auto n = cache.output.rows();

  // row L2: e = y / |y|
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, d_out.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = cache.norms(i);
    if (r <= 0.0) continue;
    const auto e = cache.output.row(i);
    d.row(i) = (d_out.row(i) - e * e.dot(d_out.row(i))) / r;
  }

  BranchGrads g = zero_grads(br);
  if (br.config.use_batch_norm_final) {
    g.gamma = (d.cwiseProduct(cache.xhat)).colwise().sum().transpose();
    g.beta = d.colwise().sum().transpose();
    const Eigen::MatrixXd dxhat = d * br.gamma.asDiagonal();
    const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
    const Eigen::RowVectorXd sum_dxhat_xhat = dxhat.cwiseProduct(cache.xhat).colwise().sum();
    const double nn = static_cast<double>(n);
    Eigen::MatrixXd dz = (nn * dxhat).rowwise() - sum_dxhat;
    dz -= cache.xhat * sum_dxhat_xhat.asDiagonal();
    d = dz * (cache.inv_std / nn).asDiagonal();
  }

  for (int l = br.config.layers() - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    const auto& lc = cache.layers[li];
    if (l + 1 < br.config.layers()) {
      if (lc.mask.size() > 0) d = d.cwiseProduct(lc.mask);
      d = d.cwiseProduct((lc.z.array() > 0.0).cast<double>().matrix());
    }
    g.layers[li].W = d.transpose() * lc.input;
    g.layers[li].b = d.colwise().sum().transpose();
    if (l > 0) d = d * br.layers[li].W;
  }
  return g;
}

// ---- Adam -------------------------------------------------------------------

struct AdamState {
  NetworkGrads m, v;
  std::uint64_t t = 0;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline AdamState init_adam(const NetworkParams& params, double lr = 3e-4) {
  AdamState s;
  s.m = zero_grads(params);
  s.v = zero_grads(params);
  s.lr = lr;
  return s;
}

inline void adam_step(NetworkParams& params, const NetworkGrads& grads, AdamState& state) {
  require(state.lr > 0.0 && state.beta1 >= 0.0 && state.beta1 < 1.0 && state.beta2 >= 0.0 && state.beta2 < 1.0 &&
              state.eps > 0.0,
          ErrorCode::InvalidArgument, "bad Adam hyperparameters");
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (Branch which : {Branch::Video, Branch::Music}) {
    auto p = flat_views(params.branch(which));
    auto g = flat_views(grads.branch(which));
    auto m = flat_views(state.m.branch(which));
    auto v = flat_views(state.v.branch(which));
    require(p.size() == g.size() && p.size() == m.size() && p.size() == v.size(), ErrorCode::ShapeMismatch,
            "gradient structure differs from parameters");
    for (std::size_t i = 0; i < p.size(); ++i) {
      require(p[i].size() == g[i].size() && p[i].size() == m[i].size() && p[i].size() == v[i].size(),
              ErrorCode::ShapeMismatch, "gradient tensor size differs from parameter");
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i].cwiseAbs2();
      p[i].array() -= state.lr * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + state.eps);
    }
  }
  params.version += 1;
}

// ---- checkpoint -------------------------------------------------------------

inline constexpr std::uint32_t kVmckVersion = 1;

struct Checkpoint {
  NetworkParams params;
  AdamState adam;
  std::string meta;  // free-form JSON supplied by the trainer
};

namespace detail {

enum class TensorType : std::uint8_t { F32 = 1, F64 = 2 };

inline void write_tensor(ByteWriter& w, const std::string& name, const Eigen::MatrixXd& m) {
  w.str(name);
  w.u8(static_cast<std::uint8_t>(TensorType::F64));
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.f64(m(r, c));
}

inline Eigen::MatrixXd read_tensor(ByteReader& r, const std::string& expect_name, Eigen::Index rows,
                                   Eigen::Index cols) {
  const auto name = r.str();
  if (name != expect_name)
    throw Error(ErrorCode::CorruptCheckpoint, "expected tensor " + expect_name + ", found " + name);
  const auto type = r.u8();
  const auto nr = r.u32(), nc = r.u32();
  if (nr != static_cast<std::uint32_t>(rows) || nc != static_cast<std::uint32_t>(cols)) throw Error(ErrorCode::CorruptCheckpoint, "tensor " + name + " has wrong shape");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (type == static_cast<std::uint8_t>(TensorType::F64))
        m(i, j) = r.f64();
      else if (type == static_cast<std::uint8_t>(TensorType::F32))
        m(i, j) = r.f32();
      else
        throw Error(ErrorCode::CorruptCheckpoint, "unknown tensor type in " + name);
    }
  return m;
}

inline void write_config(ByteWriter& w, const BranchConfig& c) {
  w.u32(static_cast<std::uint32_t>(c.layer_dims.size()));
  for (int d : c.layer_dims) w.u32(static_cast<std::uint32_t>(d));
  w.f64(c.dropout_keep);
  w.u8(c.use_batch_norm_final ? 1 : 0);
}

inline BranchConfig read_config(ByteReader& r) {
  BranchConfig c;
  const auto n = r.u32();
  if (n < 2 || n > 64) throw Error(ErrorCode::CorruptCheckpoint, "implausible layer count");
  for (std::uint32_t i = 0; i < n; ++i) c.layer_dims.push_back(static_cast<int>(r.u32()));
  c.dropout_keep = r.f64();
  c.use_batch_norm_final = r.u8() != 0;
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::CorruptCheckpoint, e.what());
  }
  return c;
}

template <class B>
void write_branch_tensors(ByteWriter& w, const B& b, const std::string& prefix, const std::vector<std::string>& names) {
  std::size_t k = 0;
  for (const auto& l : b.layers) {
    write_tensor(w, prefix + names[k++], l.W);
    write_tensor(w, prefix + names[k++], l.b);
  }
  write_tensor(w, prefix + names[k++], b.gamma);
  write_tensor(w, prefix + names[k++], b.beta);
}

template <class B>
void read_branch_tensors(ByteReader& r, B& b, const std::string& prefix, const std::vector<std::string>& names) {
  std::size_t k = 0;
  for (auto& l : b.layers) {
    l.W = read_tensor(r, prefix + names[k++], l.W.rows(), l.W.cols());
    l.b = read_tensor(r, prefix + names[k++], l.b.size(), 1);
  }
  b.gamma = read_tensor(r, prefix + names[k++], b.gamma.size(), 1);
  b.beta = read_tensor(r, prefix + names[k++], b.beta.size(), 1);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const NetworkParams& params, const AdamState& state,
                                                   const std::string& meta = {}) {
  ByteWriter w;
  w.bytes("VMCK", 4);
  w.u32(kVmckVersion);
  detail::write_config(w, params.video.config);
  detail::write_config(w, params.music.config);
  w.u64(state.t);
  w.f64(state.lr);
  w.f64(state.beta1);
  w.f64(state.beta2);
  w.f64(state.eps);
  w.str(meta);
  for (Branch which : {Branch::Video, Branch::Music}) {
    const auto& br = params.branch(which);
    const auto names = trainable_names(br, which);
    detail::write_branch_tensors(w, br, "", names);
    detail::write_tensor(w, std::string(to_string(which)) + ".bn.running_mean", br.running_mean);
    detail::write_tensor(w, std::string(to_string(which)) + ".bn.running_var", br.running_var);
    detail::write_branch_tensors(w, state.m.branch(which), "adam.m.", names);
    detail::write_branch_tensors(w, state.v.branch(which), "adam.v.", names);
  }
  auto bytes = w.buffer();
  const auto crc = static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
  ByteWriter tail;
  tail.u32(crc);
  bytes.insert(bytes.end(), tail.buffer().begin(), tail.buffer().end());
  return bytes;
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "VMCK", 4) != 0)
    throw Error(ErrorCode::CorruptCheckpoint, "missing VMCK magic");
  const std::size_t body = bytes.size() - 4;
  ByteReader tail(bytes.data() + body, 4, ErrorCode::CorruptCheckpoint);
  const auto stored_crc = tail.u32();
  if (static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(body))) != stored_crc)
    throw Error(ErrorCode::CorruptCheckpoint, "checksum mismatch (truncated or damaged file)");

  ByteReader r(bytes.data() + 4, body - 4, ErrorCode::CorruptCheckpoint);
  if (r.u32() != kVmckVersion) throw Error(ErrorCode::CorruptCheckpoint, "unsupported checkpoint version");
  Checkpoint ck;
  const auto vcfg = detail::read_config(r);
  const auto mcfg = detail::read_config(r);
  if (vcfg.output_dim() != mcfg.output_dim())
    throw Error(ErrorCode::CorruptCheckpoint, "branch embedding dims differ");
  ck.params = init_params(vcfg, mcfg, 0);  // shapes only; every tensor is overwritten
  ck.adam = init_adam(ck.params);
  ck.adam.t = r.u64();
  ck.adam.lr = r.f64();
  ck.adam.beta1 = r.f64();
  ck.adam.beta2 = r.f64();
  ck.adam.eps = r.f64();
  ck.meta = r.str();
  for (Branch which : {Branch::Video, Branch::Music}) {
    auto& br = ck.params.branch(which);
    const auto names = trainable_names(br, which);
    detail::read_branch_tensors(r, br, "", names);
    const std::string p = to_string(which);
    br.running_mean = detail::read_tensor(r, p + ".bn.running_mean", br.running_mean.size(), 1);
    br.running_var = detail::read_tensor(r, p + ".bn.running_var", br.running_var.size(), 1);
    detail::read_branch_tensors(r, ck.adam.m.branch(which), "adam.m.", names);
    detail::read_branch_tensors(r, ck.adam.v.branch(which), "adam.v.", names);
    if ((br.running_var.array() <= 0.0).any())
      throw Error(ErrorCode::CorruptCheckpoint, "running variance must be positive");
  }
  if (r.remaining() != 0) throw Error(ErrorCode::CorruptCheckpoint, "trailing bytes after tensors");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const NetworkParams& params, const AdamState& state,
                            const std::string& meta = {}) {
  write_file_bytes(path, encode_checkpoint(params, state, meta));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace vmnet
