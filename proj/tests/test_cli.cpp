#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_support.hpp"
#include "vmnet/cli.hpp"

using namespace vmnet;
using vmnet::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "vmnet");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_clip(const fs::path& p, double freq, double seconds = 3.0) {
  write_wav(p, vmnet::testing::sine(freq, 12000, static_cast<std::size_t>(seconds * 12000), 0.5));
}

}  // namespace

TEST(Cli, BinaryExitCodes) {
  const std::string bin = VMNET_CLI_PATH;
  EXPECT_EQ(std::system((bin + " --help > /dev/null").c_str()), 0);
  const int usage = std::system((bin + " train > /dev/null 2>&1").c_str());
  ASSERT_TRUE(WIFEXITED(usage));
  EXPECT_EQ(WEXITSTATUS(usage), 64);
  const int unknown = std::system((bin + " no-such-command > /dev/null 2>&1").c_str());
  EXPECT_EQ(WEXITSTATUS(unknown), 64);
}

TEST(Cli, ExtractMusicEmptyDirectory) {
  TempDir t;
  fs::create_directories(t.path() / "in");
  const auto r = run_cli({"extract-music", (t.path() / "in").string(), "--out", (t.path() / "out").string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  for (const auto& e : fs::directory_iterator(t.path() / "out")) EXPECT_NE(e.path().extension(), ".vmnf");
}

TEST(Cli, ExtractMusicPartialFailureAndLayout) {
  TempDir t;
  const auto in = t.path() / "in", out = t.path() / "out";
  fs::create_directories(in);
  write_clip(in / "good.wav", 440.0);
  write_file_bytes(in / "bad.wav", std::vector<std::uint8_t>{'R', 'I', 'F', 'F', 0, 0});
  const auto r = run_cli({"extract-music", in.string(), "--out", out.string(), "--jobs", "2"});
  EXPECT_EQ(r.code, 2);
  ASSERT_TRUE(fs::exists(out / "good.vmnf"));
  EXPECT_FALSE(fs::exists(out / "bad.vmnf"));
  const auto log = slurp(out / "errors.log");
  EXPECT_NE(log.find("bad.wav"), std::string::npos);
  EXPECT_EQ(log.find("good.wav"), std::string::npos);

  const auto layout = nlohmann::json::parse(slurp(out / "layout.json"));
  const auto v = read_vmnf(out / "good.vmnf");
  EXPECT_EQ(v.rows(), 1);
  EXPECT_EQ(layout["track_dim"].get<int>(), v.cols());
  int sum = 0;
  for (const auto& s : layout["statistics"]) sum += s["dim"].get<int>();
  EXPECT_EQ(sum, v.cols());
  EXPECT_TRUE(v.allFinite());
}

TEST(Cli, ExtractMusicJobsDoNotChangeOutput) {
  TempDir t;
  const auto in = t.path() / "in";
  fs::create_directories(in);
  for (int i = 0; i < 4; ++i) write_clip(in / ("c" + std::to_string(i) + ".wav"), 220.0 * (i + 1), 2.0);
  ASSERT_EQ(run_cli({"extract-music", in.string(), "--out", (t.path() / "a").string()}).code, 0);
  ASSERT_EQ(run_cli({"extract-music", in.string(), "--out", (t.path() / "b").string(), "--jobs", "3"}).code, 0);
  for (int i = 0; i < 4; ++i) {
    const auto name = "c" + std::to_string(i) + ".vmnf";
    EXPECT_EQ(slurp(t.path() / "a" / name), slurp(t.path() / "b" / name));
  }
}

TEST(Cli, ExtractMusicRejectsBadConfigBeforeWork) {
  TempDir t;
  const auto r = run_cli({"extract-music", t.path().string(), "--out", (t.path() / "out").string(), "--n-mel",
                          "1000"});
  EXPECT_EQ(r.code, 64);
  EXPECT_FALSE(fs::exists(t.path() / "out"));
}

TEST(Cli, ExtractVideoFitThenApply) {
  TempDir t;
  const auto in = t.path() / "in";
  fs::create_directories(in);
  for (int i = 0; i < 30; ++i) {
    const auto f = synth_frame_features(std::to_string(i), vmnet::testing::random_matrix(1, 6, 100 + i).row(0).transpose(), 12, 20,
                                        0.3, 7);
    write_vmnf(in / ("v" + std::to_string(100 + i) + ".vmnf"), f);
  }
  write_vmnf(in / "wrongdim.vmnf", vmnet::testing::random_matrix(12, 9, 1));
  const std::vector<std::string> common{"--wpca-dim", "10", "--pca-dim", "8", "--ordinal-k", "3"};
  auto args = std::vector<std::string>{"extract-video", in.string(), "--out", (t.path() / "fit").string(), "--fit",
                                       "--emit-pre-pca"};
  args.insert(args.end(), common.begin(), common.end());
  const auto r = run_cli(args);
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_NE(slurp(t.path() / "fit" / "errors.log").find("DimMismatch"), std::string::npos);

  const auto pre = read_vmnf(t.path() / "fit" / "pre_pca.vmnf");
  EXPECT_EQ(pre.rows(), 30);
  // VMNF holds f32; the 1e-9 in-memory bound is checked in test_video_pipeline.
  EXPECT_LT(pre.colwise().mean().cwiseAbs().maxCoeff(), 1e-6);

  // Re-applying the saved model reproduces the fitted rows.
  fs::remove(in / "wrongdim.vmnf");
  const auto model = (t.path() / "fit" / "video_pipeline.vmpm").string();
  ASSERT_EQ(run_cli({"extract-video", in.string(), "--out", (t.path() / "apply").string(), "--model", model}).code,
            0);
  const auto a = read_vmnf(t.path() / "fit" / "v105.vmnf"), b = read_vmnf(t.path() / "apply" / "v105.vmnf");
  ASSERT_EQ(a.cols(), 8);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_NEAR(a.norm(), 1.0, 1e-6);
}

TEST(Cli, ExtractVideoWithoutModelIsUsageError) {
  TempDir t;
  EXPECT_EQ(run_cli({"extract-video", t.path().string(), "--out", (t.path() / "o").string()}).code, 64);
}

TEST(Cli, ConfigFileLayering) {
  TempDir t;
  std::ofstream(t.path() / "cfg.json") << R"({"n_pairs": 50, "noise": 0.5, "out": "ignored"})";
  const auto out = (t.path() / "c").string();
  const auto r = run_cli({"synth", "--config", (t.path() / "cfg.json").string(), "--out", out, "--n-pairs", "20"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_manifest(fs::path(out) / "manifest.jsonl").entries.size(), 20u);
  EXPECT_FALSE(fs::exists("ignored"));

  std::ofstream(t.path() / "bad.json") << R"({"no_such_flag": 3})";
  EXPECT_EQ(run_cli({"synth", "--config", (t.path() / "bad.json").string(), "--out", out}).code, 64);
  std::ofstream(t.path() / "broken.json") << "{";
  EXPECT_EQ(run_cli({"synth", "--config", (t.path() / "broken.json").string(), "--out", out}).code, 64);
}

TEST(Cli, TrainIsDeterministicAndEvalRuns) {
  TempDir t;
  const auto corpus = t.path() / "corpus";
  ASSERT_EQ(run_cli({"synth", "--out", corpus.string(), "--n-pairs", "300", "--seed", "3"}).code, 0);
  const auto manifest = (corpus / "manifest.jsonl").string();
  const std::vector<std::string> cfg{"--epochs", "2", "--batch-size", "64", "--seed", "7", "--video-hidden", "32",
                                     "--music-hidden", "32", "--embedding-dim", "16"};
  for (const auto* run : {"r1", "r2"}) {
    std::vector<std::string> args{"train", "--manifest", manifest, "--out", (t.path() / run).string()};
    args.insert(args.end(), cfg.begin(), cfg.end());
    const auto r = run_cli(args);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const auto* f : {"loss_trace.csv", "checkpoint.vmck", "final.vmck"}) {
    const auto a = slurp(t.path() / "r1" / f);
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, slurp(t.path() / "r2" / f)) << f;
  }

  const auto ev = run_cli({"eval", "--manifest", manifest, "--checkpoint", (t.path() / "r1" / "checkpoint.vmck").string(),
                           "--out", (t.path() / "r1").string(), "--trials", "500"});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto j = nlohmann::json::parse(slurp(t.path() / "r1" / "metrics.json"));
  EXPECT_EQ(j["n"], 30);
  EXPECT_TRUE(j.contains("machine_gr"));

  const auto bad = run_cli({"train", "--manifest", manifest, "--out", (t.path() / "r3").string(), "--lambda1", "0",
                            "--lambda2", "0", "--lambda3", "0", "--lambda4", "0"});
  EXPECT_EQ(bad.code, 64);
  EXPECT_FALSE(fs::exists(t.path() / "r3" / "checkpoint.vmck"));
}

TEST(Cli, EvalIdentityCheckpointAndRetrieve) {
  TempDir t;
  const int n = 6;
  PairManifest m;
  fs::create_directories(t.path() / "f");
  for (int i = 0; i < n; ++i) {
    Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(n);
    e(i) = 1.0;
    const auto id = "p" + std::to_string(i);
    write_vmnf(t.path() / "f" / (id + "_v.vmnf"), e);
    write_vmnf(t.path() / "f" / (id + "_m.vmnf"), e);
    m.entries.push_back({id, t.path() / "f" / (id + "_v.vmnf"), t.path() / "f" / (id + "_m.vmnf"), Split::Test});
  }
  const auto manifest = t.path() / "manifest.jsonl";
  write_manifest(manifest, m);

  BranchConfig bc;
  bc.layer_dims = {n, n};
  bc.use_batch_norm_final = false;
  auto p = init_params(bc, bc, 1);
  for (auto* br : {&p.video, &p.music}) {
    br->layers[0].W = Eigen::MatrixXd::Identity(n, n);
    br->layers[0].b.setZero();
  }
  const auto ck = t.path() / "id.vmck";
  save_checkpoint(ck, p, init_adam(p, 3e-4), "identity");

  const auto r = run_cli({"eval", "--manifest", manifest.string(), "--checkpoint", ck.string(), "--out",
                          t.path().string(), "--trials", "200"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(t.path() / "metrics.json"));
  EXPECT_EQ(j["video_to_music"]["R@1"].get<double>(), 100.0);
  EXPECT_EQ(j["music_to_video"]["R@1"].get<double>(), 100.0);

  const auto q = run_cli({"retrieve", "--manifest", manifest.string(), "--checkpoint", ck.string(), "--query",
                          (t.path() / "f" / "p4_m.vmnf").string(), "--direction", "music_to_video", "--top-k", "2"});
  ASSERT_EQ(q.code, 0) << q.err;
  EXPECT_EQ(q.out.substr(0, q.out.find('\n')), "1\tp4\t1.000000");

  EXPECT_EQ(run_cli({"eval", "--manifest", manifest.string(), "--out", t.path().string()}).code, 64);
  EXPECT_EQ(run_cli({"eval", "--manifest", (t.path() / "missing.jsonl").string(), "--checkpoint", ck.string(),
                     "--out", t.path().string()})
                .code,
            1);
}
