// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

// vtryon: data generation, training, inference and evaluation.

#include <malloc.h>

#include <cstdio>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "vtryon/error.hpp"
#include "vtryon/harness.hpp"

namespace h = vtryon::harness;

namespace {

struct Sub {
  h::Command command;
  const char* help;
  CLI::App* app = nullptr;
  std::string config;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
};

void run(const Sub& sub) {
  h::Settings s(sub.command);
  if (!sub.config.empty()) s.load_file(sub.config);
  for (const auto& [key, opt] : sub.options)
    if (opt->count() > 0) s.set(key, sub.values.at(key));

  switch (sub.command) {
    case h::kGenData: {
      const auto m = h::gen_data(s);
      std::printf("wrote %zu samples (%zu train, %zu test) to %s\n", m.ids.size(),
                  m.train_ids.size(), m.test_ids.size(), s.str("out").c_str());
      break;
    }
    case h::kTrainVae:
    case h::kTrainStage1:
    case h::kTrainStage2: {
      const h::Stage stage = sub.command == h::kTrainVae      ? h::Stage::kVae
                             : sub.command == h::kTrainStage1 ? h::Stage::kStage1
                                                              : h::Stage::kStage2;
      const auto r = h::run_training(stage, s);
      for (const auto& row : r.trace) std::printf("step %d loss %.6g\n", row.step, row.loss);
      std::printf("checkpoint %s\nloss trace %s\n", r.checkpoint.c_str(), r.loss_trace.c_str());
      break;
    }
    case h::kTryon:
      h::run_tryon(s);
      std::printf("wrote %s\n", s.str("out").c_str());
      break;
    case h::kEval:
      std::fputs(vtryon::metrics::report_flat(h::run_eval(s)).c_str(), stdout);
      break;
    case h::kInspect:
      if (s.str("ckpt").empty()) vtryon::raise(vtryon::ErrorKind::kInvalidConfig, "inspect-ckpt needs ckpt");
      std::fputs(h::inspect_checkpoint(s.str("ckpt")).c_str(), stdout);
      break;
  }
}

}  // namespace

int main(int argc, char** argv) {
  // Large tensors are reused across steps; keep them off mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 100 << 20);

  CLI::App app{"vtryon: two-stage latent diffusion virtual try-on"};
  app.require_subcommand(1);
  std::vector<Sub> subs = {
      {h::kGenData, "generate a synthetic dataset"},
      {h::kTrainVae, "train the autoencoder"},
      {h::kTrainStage1, "train the garment-warping stage"},
      {h::kTrainStage2, "train the fusion stage"},
      {h::kTryon, "run the two-stage pipeline"},
      {h::kEval, "compute metrics for generated images"},
      {h::kInspect, "describe a checkpoint"},
  };
  for (auto& sub : subs) {
    sub.app = app.add_subcommand(h::command_name(sub.command), sub.help);
    sub.app->add_option("--config", sub.config, "config file of key = value lines");
    const h::Settings defaults(sub.command);
    for (const auto& k : h::key_table()) {
      if (!(k.commands & sub.command) || k.key == "config") continue;
      sub.values[k.key] = defaults.str(k.key);
      sub.options[k.key] = sub.app->add_option("--" + k.key, sub.values[k.key], k.help)
                               ->default_str(defaults.str(k.key));
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "vtryon: %s\n", e.what());
    return 2;
  }

  try {
    for (const auto& sub : subs)
      if (sub.app->parsed()) run(sub);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "vtryon: %s\n", e.what());
    return 1;
  }
  return 0;
}
