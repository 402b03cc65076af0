// mldd: synthetic camouflage segmentation toolkit.
//   mldd synth|train|eval|predict|gradcheck|ablate --config PATH [...]
// Exit codes: 0 success, 1 verification failure, 2 usage/config error.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mldd/kernels.hpp"
#include "mldd/train.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::int64_t seed = -1;  // <0: keep config value
  std::string checkpoint;
  std::string out;
};

mldd::FileConfig load_config(const CommonArgs& a) {
  if (a.config.empty()) throw mldd::UsageError("--config is required");
  mldd::FileConfig cfg = mldd::parse_config_file(a.config);
  if (a.seed >= 0) {
    cfg.train.seed = static_cast<std::uint64_t>(a.seed);
    cfg.synth.seed = static_cast<std::uint64_t>(a.seed);
  }
  if (!a.checkpoint.empty()) cfg.train.checkpoint = a.checkpoint;
  return cfg;
}

std::vector<int> parse_layers(const std::string& s) {
  std::vector<int> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      if (!cur.empty()) {
        try {
          out.push_back(std::stoi(cur));
        } catch (const std::exception&) {
          throw mldd::UsageError("--layers expects a comma-separated list, got '" + s + "'");
        }
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mldd: multi-layer dense-attention segmentation on synthetic camouflage data"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string image_path, split = "val", layers = "1,2,3";

  auto add_common = [&](CLI::App* cmd, bool with_checkpoint) {
    cmd->add_option("--config", args.config, "flat key = value config file");
    cmd->add_option("--seed", args.seed, "override the config seed");
    if (with_checkpoint) cmd->add_option("--checkpoint", args.checkpoint, "checkpoint path");
    cmd->add_option("--out", args.out, "output path");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic camouflage dataset");
  add_common(synth, false);
  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train, true);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  add_common(eval, true);
  eval->add_option("--split", split, "train or val (default val)");
  CLI::App* predict = app.add_subcommand("predict", "segment one image");
  add_common(predict, true);
  predict->add_option("--image", image_path, "input P6 image");
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every op");
  CLI::App* ablate = app.add_subcommand("ablate", "compare decoder depths over three seeds");
  add_common(ablate, true);
  ablate->add_option("--layers", layers, "comma-separated depths (default 1,2,3)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) {
      const mldd::FileConfig cfg = load_config(args);
      const std::string out_dir = args.out.empty() ? cfg.train.data_root : args.out;
      if (out_dir.empty()) throw mldd::UsageError("synth: set data_root in the config or pass --out");
      const auto idx = mldd::data::synth_generate(cfg.synth, out_dir);
      std::size_t n_train = idx.split("train").size(), n_val = idx.split("val").size();
      std::cout << "wrote " << idx.entries.size() << " samples (" << n_train << " train, "
                << n_val << " val) under " << out_dir << "\n";
    } else if (train->parsed()) {
      const mldd::FileConfig cfg = load_config(args);
      const mldd::TrainResult r = mldd::train_run(cfg.train);
      std::cout << "steps=" << r.steps << " best_epoch=" << r.best_epoch
                << " best_val_mDice=" << r.best_val_dice << " best_val_mIoU=" << r.best_val_iou
                << "\nfinal train mDice=" << r.final_train_dice
                << " mIoU=" << r.final_train_iou
                << "\ncheckpoint: " << r.checkpoint_path.string()
                << "\nrunlog: " << r.runlog_path.string() << "\n";
    } else if (eval->parsed()) {
      const mldd::FileConfig cfg = load_config(args);
      if (cfg.train.checkpoint.empty()) throw mldd::UsageError("eval: --checkpoint is required");
      const std::string out_tsv = args.out.empty() ? "metrics.tsv" : args.out;
      mldd::eval_run(cfg.train, cfg.train.checkpoint, split, out_tsv);
    } else if (predict->parsed()) {
      const mldd::FileConfig cfg = load_config(args);
      if (image_path.empty()) throw mldd::UsageError("predict: --image is required");
      if (args.out.empty()) throw mldd::UsageError("predict: --out is required");
      mldd::predict_run(cfg.train, cfg.train.checkpoint, image_path, args.out);
    } else if (gradcheck->parsed()) {
      if (std::getenv("MLDD_CORRUPT_CONV_BACKWARD") != nullptr) {
        mldd::kernels::testing::set_corrupt_conv_backward(true);
      }
      const mldd::GradcheckReport report = mldd::gradcheck_run();
      for (const auto& e : report.entries) {
        std::printf("%-24s max_rel_err=%.3e %s\n", e.name.c_str(), e.max_rel_err,
                    e.ok ? "ok" : "FAIL");
      }
      if (!report.ok) {
        std::cout << "gradcheck FAILED (threshold " << report.threshold << ")\n";
        return 1;
      }
      std::cout << "gradcheck passed (threshold " << report.threshold << ")\n";
    } else if (ablate->parsed()) {
      const mldd::FileConfig cfg = load_config(args);
      const std::string out_dir = args.out.empty() ? "ablation" : args.out;
      mldd::ablate_run(cfg.train, parse_layers(layers), out_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
