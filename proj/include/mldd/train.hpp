#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mldd/data.hpp"
#include "mldd/decoder.hpp"
#include "mldd/nn.hpp"

namespace mldd {

// Raised for malformed configs and CLI usage; maps to exit code 2.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainConfig {
  double lr = 1e-4;
  std::int64_t batch_size = 4;   // paper profile uses 16
  std::int64_t epochs = 50;
  int n_layers = 3;
  int width = 32;
  int reduction = 16;
  DecoderConfig::ChannelAct channel_act = DecoderConfig::ChannelAct::sigmoid;
  std::uint64_t seed = 1;
  std::string data_root;
  std::string checkpoint = "model.mldd1";
  std::string runlog = "runlog.csv";
  bool multiscale = false;

  void validate() const;
  DecoderConfig decoder_config() const;
};

// One flat "key = value" file ('#' comments) covers both dataset synthesis
// and training; each command reads the part it needs.
struct FileConfig {
  TrainConfig train;
  data::SynthConfig synth;
};

FileConfig parse_config_file(const std::filesystem::path& path);

struct TrainResult {
  double best_val_dice = 0.0;
  double best_val_iou = 0.0;
  std::int64_t best_epoch = 0;
  double final_train_dice = 0.0;
  double final_train_iou = 0.0;
  std::int64_t steps = 0;
  std::vector<double> step_totals;  // per-step total loss, for diagnostics
  std::filesystem::path checkpoint_path;
  std::filesystem::path runlog_path;
};

TrainResult train_run(const TrainConfig& cfg);

struct EvalRow {
  std::string id;
  double dice = 0.0, iou = 0.0;
};

struct EvalResult {
  std::vector<EvalRow> rows;
  double mdice = 0.0, miou = 0.0;
  std::filesystem::path tsv_path;
};

EvalResult eval_run(const TrainConfig& cfg, const std::filesystem::path& checkpoint,
                    const std::string& split, const std::filesystem::path& out_tsv);

void predict_run(const TrainConfig& cfg, const std::filesystem::path& checkpoint,
                 const std::filesystem::path& image_path,
                 const std::filesystem::path& out_path);

struct GradcheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool ok = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool ok = false;
  double threshold = 1e-5;
};

// Runs the finite-difference suite over every differentiable op plus one
// composed gate+attention block.
GradcheckReport gradcheck_run();

struct AblateRow {
  int depth = 0;
  std::vector<double> seed_dice, seed_iou;
  double mean_dice = 0.0, mean_iou = 0.0;
};

struct AblateResult {
  std::vector<AblateRow> rows;
  std::filesystem::path tsv_path;
};

// Trains one model per requested depth over three consecutive seeds with
// identical data; reports per-seed best-val metrics and their means.
AblateResult ablate_run(const TrainConfig& cfg, const std::vector<int>& layers,
                        const std::filesystem::path& out_dir);

// Forward pass producing final logits at the image's own extents (the input
// is resized to multiples of 32 if needed and the logits resized back).
Tensor predict_logits(const ParamRegistry& reg, const DecoderConfig& dcfg, const Tensor& image);

// Mean dice/iou of binarized predictions over a sample list.
std::pair<double, double> evaluate_samples(const ParamRegistry& reg, const DecoderConfig& dcfg,
                                           const std::vector<data::Sample>& samples);

}  // namespace mldd
