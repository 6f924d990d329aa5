// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtryon/harness.hpp"

#include <gtest/gtest.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "vtryon/error.hpp"

namespace vtryon::harness {
namespace {

namespace fs = std::filesystem;

std::string read_all(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::kInvalidConfig;
}

TEST(SettingsTest, DefaultsFileThenOverrides) {
  const fs::path dir = fs::temp_directory_path() / ("vtryon_settings_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "a.cfg");
    os << "# comment\n\nsteps = 30   # trailing\nlr=2e-4\n";
  }
  Settings s(kTrainStage1);
  EXPECT_EQ(s.integer("steps"), 2000);
  EXPECT_EQ(s.real("lr"), 5e-5);
  s.load_file(dir / "a.cfg");
  EXPECT_EQ(s.integer("steps"), 30);
  EXPECT_EQ(s.real("lr"), 2e-4);
  s.set("steps", "40");
  EXPECT_EQ(s.integer("steps"), 40);
  EXPECT_EQ(train_config(s).steps, 40);

  Settings v(kTrainVae);
  EXPECT_EQ(v.real("lr"), 1e-3);
  EXPECT_FALSE(v.accepts("num_queries"));

  {
    std::ofstream os(dir / "b.cfg");
    os << "steps = 3\nnum_querys = 4\n";
  }
  try {
    s.load_file(dir / "b.cfg");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUnknownKey);
    const std::string what = e.what();
    EXPECT_NE(what.find("b.cfg:2"), std::string::npos) << what;
    EXPECT_NE(what.find("num_querys"), std::string::npos) << what;
  }
  fs::remove_all(dir);

  EXPECT_EQ(kind_of([&] { s.set("bogus", "1"); }), ErrorKind::kUnknownKey);
  s.set("steps", "12x");
  EXPECT_EQ(kind_of([&] { s.integer("steps"); }), ErrorKind::kInvalidConfig);
  s.set("lr", "fast");
  EXPECT_EQ(kind_of([&] { s.real("lr"); }), ErrorKind::kInvalidConfig);
  s.set("use_projection", "maybe");
  EXPECT_EQ(kind_of([&] { s.boolean("use_projection"); }), ErrorKind::kInvalidConfig);
}

#ifdef VTRYON_SOURCE_DIR
TEST(SettingsTest, ShippedConfigsParse) {
  const fs::path dir = fs::path(VTRYON_SOURCE_DIR) / "configs";
  const std::vector<std::pair<std::string, Command>> files = {
      {"full_scale/gen-data.cfg", kGenData},    {"full_scale/train-vae.cfg", kTrainVae},
      {"full_scale/stage.cfg", kTrainStage1},   {"full_scale/stage.cfg", kTrainStage2},
      {"desk/tiny_stage.cfg", kTrainStage1},    {"desk/tiny_stage.cfg", kTrainStage2}};
  for (const auto& [file, command] : files) {
    Settings s(command);
    s.load_file(dir / file);
    if (command == kGenData) {
      EXPECT_EQ(scene_params(s).height, 640);
    } else if (command == kTrainVae) {
      EXPECT_EQ(autoencoder_config(s).downsample_factor, 8);
    } else {
      train_config(s);
      schedule_config(s);
      encoder_config(s);
      if (command == kTrainStage1) caw_config(s);
      if (command == kTrainStage2) fusion_config(s);
    }
  }
  Settings full(kTrainStage1);
  full.load_file(dir / "full_scale/stage.cfg");
  EXPECT_EQ(train_config(full).steps, 50000);
  EXPECT_EQ(train_config(full).batch_size, 6);
  EXPECT_EQ(train_config(full).lr, 5e-5);
  EXPECT_EQ(caw_config(full).projection.token_dim, 768);
}
#endif

TEST(SettingsTest, PeriodicPath) {
  EXPECT_EQ(periodic_path("runs/s1.ckpt", 5), fs::path("runs/s1.step000005.ckpt"));
}

// Small end-to-end fixture shared by the run tests.
class RunTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("vtryon_runs_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    Settings g(kGenData);
    g.set("n", "6");
    g.set("height", "32");
    g.set("width", "24");
    g.set("seed", "5");
    g.set("out", (root_ / "data").string());
    gen_data(g);
    Settings v = vae_settings(root_ / "vae.ckpt");
    v.set("steps", "20");
    run_training(Stage::kVae, v);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static Settings vae_settings(const fs::path& out) {
    Settings s(kTrainVae);
    s.set("data", (root_ / "data").string());
    s.set("out", out.string());
    s.set("vae_base_width", "8");
    s.set("batch_size", "2");
    s.set("log_every", "3");
    s.set("seed", "11");
    return s;
  }

  static Settings stage1_settings(const fs::path& out) {
    Settings s(kTrainStage1);
    s.set("data", (root_ / "data").string());
    s.set("out", out.string());
    s.set("vae_ckpt", (root_ / "vae.ckpt").string());
    s.set("unet_base_width", "8");
    s.set("channel_mults", "1,2");
    s.set("attention_levels", "1");
    s.set("head_channels", "8");
    s.set("time_embed_dim", "16");
    s.set("num_queries", "2");
    s.set("token_dim", "8");
    s.set("encoder_widths", "4,8");
    s.set("T", "20");
    s.set("batch_size", "2");
    s.set("lr", "1e-3");
    s.set("log_every", "3");
    s.set("seed", "13");
    return s;
  }

  static Settings stage2_settings(const fs::path& out) {
    Settings s(kTrainStage2);
    const Settings one = stage1_settings(out);
    for (const auto& [k, v] : one.values())
      if (s.accepts(k)) s.set(k, v);
    return s;
  }

  static void expect_same_checkpoint(const fs::path& a, const fs::path& b) {
    const ckpt::Checkpoint ca = ckpt::load(a);
    const ckpt::Checkpoint cb = ckpt::load(b);
    ASSERT_EQ(ca.arrays.size(), cb.arrays.size());
    for (std::size_t i = 0; i < ca.arrays.size(); ++i) {
      EXPECT_EQ(ca.arrays[i].first, cb.arrays[i].first);
      EXPECT_TRUE(ca.arrays[i].second.bitwise_equal(cb.arrays[i].second)) << ca.arrays[i].first;
    }
    EXPECT_EQ(ca.manifest.at("rng_state"), cb.manifest.at("rng_state"));
    EXPECT_EQ(ca.manifest.at("step"), cb.manifest.at("step"));
  }

  static fs::path root_;
};

fs::path RunTest::root_;

TEST_F(RunTest, VaeResumeIsBitwise) {
  Settings full = vae_settings(root_ / "vfull.ckpt");
  full.set("steps", "10");
  run_training(Stage::kVae, full);

  Settings first = vae_settings(root_ / "vhalf.ckpt");
  first.set("steps", "5");
  run_training(Stage::kVae, first);
  Settings second = vae_settings(root_ / "vres.ckpt");
  second.set("steps", "10");
  second.set("resume", (root_ / "vhalf.ckpt").string());
  run_training(Stage::kVae, second);

  expect_same_checkpoint(root_ / "vfull.ckpt", root_ / "vres.ckpt");
  EXPECT_EQ(ckpt::load(root_ / "vfull.ckpt").manifest.at("vae"),
            ckpt::load(root_ / "vres.ckpt").manifest.at("vae"));
  EXPECT_EQ(read_all(root_ / "vfull.ckpt.loss.tsv"), read_all(root_ / "vres.ckpt.loss.tsv"));
}

TEST_F(RunTest, Stage1ResumeCadenceAndReplay) {
  Settings full = stage1_settings(root_ / "s1full.ckpt");
  full.set("steps", "10");
  full.set("ckpt_every", "5");
  const TrainResult r = run_training(Stage::kStage1, full);
  ASSERT_EQ(r.periodic.size(), 2u);
  EXPECT_EQ(r.periodic[0], root_ / "s1full.step000005.ckpt");
  EXPECT_EQ(r.periodic[1], root_ / "s1full.step000010.ckpt");
  for (const auto& p : r.periodic) EXPECT_TRUE(fs::exists(p));

  // Resume from the periodic checkpoint.
  Settings res = stage1_settings(root_ / "s1res.ckpt");
  res.set("steps", "10");
  res.set("resume", r.periodic[0].string());
  run_training(Stage::kStage1, res);
  expect_same_checkpoint(root_ / "s1full.ckpt", root_ / "s1res.ckpt");
  EXPECT_EQ(read_all(root_ / "s1full.ckpt.loss.tsv"), read_all(root_ / "s1res.ckpt.loss.tsv"));

  // Replay with the same seed gives identical trace bytes.
  Settings again = stage1_settings(root_ / "s1again.ckpt");
  again.set("steps", "10");
  run_training(Stage::kStage1, again);
  EXPECT_EQ(read_all(root_ / "s1full.ckpt.loss.tsv"), read_all(root_ / "s1again.ckpt.loss.tsv"));
  expect_same_checkpoint(root_ / "s1full.ckpt", root_ / "s1again.ckpt");

  // Config change on resume.
  Settings bad = stage1_settings(root_ / "s1bad.ckpt");
  bad.set("steps", "10");
  bad.set("lr", "2e-3");
  bad.set("resume", r.periodic[0].string());
  EXPECT_EQ(kind_of([&] { run_training(Stage::kStage1, bad); }), ErrorKind::kResumeMismatch);
  Settings wrong = vae_settings(root_ / "vbad.ckpt");
  wrong.set("resume", r.periodic[0].string());
  EXPECT_EQ(kind_of([&] { run_training(Stage::kVae, wrong); }), ErrorKind::kResumeMismatch);

  // The trained warper reloads from its checkpoint alone.
  const Pipeline p = load_pipeline(root_ / "s1full.ckpt", "");
  EXPECT_TRUE(p.has_warper);
  EXPECT_FALSE(p.has_fusion);
  const ckpt::Checkpoint c = ckpt::load(root_ / "s1full.ckpt");
  for (const auto& q : p.warper.params()) EXPECT_TRUE(q.var.value().bitwise_equal(c.get(q.name))) << q.name;
}

TEST_F(RunTest, MissingCheckpoints) {
  Settings s1 = stage1_settings(root_ / "x.ckpt");
  s1.set("vae_ckpt", "");
  EXPECT_EQ(kind_of([&] { run_training(Stage::kStage1, s1); }), ErrorKind::kMissingCheckpoint);
  s1.set("vae_ckpt", (root_ / "nope.ckpt").string());
  EXPECT_EQ(kind_of([&] { run_training(Stage::kStage1, s1); }), ErrorKind::kMissingCheckpoint);
  Settings s2 = stage2_settings(root_ / "y.ckpt");
  s2.set("warped_source", "stage1_model");
  EXPECT_EQ(kind_of([&] { run_training(Stage::kStage2, s2); }), ErrorKind::kMissingCheckpoint);
}

#ifdef VTRYON_CLI
int run(const std::string& args) {
  const std::string cmd = std::string(VTRYON_CLI) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

TEST(CliTest, GenDataAndTrainVae) {
  const fs::path dir = fs::temp_directory_path() / ("vtryon_cli_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  ASSERT_EQ(run("gen-data --n 4 --height 32 --width 24 --out " + (dir / "d").string()), 0);
  ASSERT_EQ(run("train-vae --data " + (dir / "d").string() + " --steps 4 --vae_base_width 8 --out " +
                (dir / "vae.ckpt").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "vae.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "vae.ckpt.loss.tsv"));
  {
    std::ofstream os(dir / "bad.cfg");
    os << "stepz = 3\n";
  }
  const std::string cmd = std::string(VTRYON_CLI) + " train-vae --config " + (dir / "bad.cfg").string() +
                          " 2>&1";
  std::FILE* pipe = ::popen(cmd.c_str(), "r");
  ASSERT_NE(pipe, nullptr);
  std::string out;
  char buf[256];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int rc = ::pclose(pipe);
  EXPECT_NE(WEXITSTATUS(rc), 0);
  EXPECT_NE(out.find("stepz"), std::string::npos) << out;
  EXPECT_NE(out.find("bad.cfg:1"), std::string::npos) << out;
  EXPECT_NE(run("train-vae --num_queries 3"), 0);
  fs::remove_all(dir);
}
#endif

}  // namespace
}  // namespace vtryon::harness
