#include "mldd/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mldd/encoder.hpp"
#include "mldd/loss.hpp"
#include "mldd/rng.hpp"

namespace mldd {

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void config_fail(const std::filesystem::path& path, int line, const std::string& msg) {
  throw UsageError(path.string() + ":" + std::to_string(line) + ": " + msg);
}

double parse_double(const std::filesystem::path& p, int line, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    config_fail(p, line, "expected a number, got '" + v + "'");
  }
}

std::int64_t parse_int(const std::filesystem::path& p, int line, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    config_fail(p, line, "expected an integer, got '" + v + "'");
  }
}

bool parse_bool(const std::filesystem::path& p, int line, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  config_fail(p, line, "expected true/false, got '" + v + "'");
}

Tensor as_batch(const Tensor& chw) {
  const Shape& s = chw.shape();
  if (s.rank != 3) throw std::invalid_argument("as_batch: expects rank-3 tensor");
  return Tensor::from_data(Shape{1, s[0], s[1], s[2]},
                           std::vector<double>(chw.value().begin(), chw.value().end()), false);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw UsageError("config: lr must be >= 0");
  if (batch_size < 1) throw UsageError("config: batch_size must be >= 1");
  if (epochs < 1) throw UsageError("config: epochs must be >= 1");
  if (n_layers < 1 || n_layers > 3) throw UsageError("config: n_layers must lie in [1,3]");
  if (width < 1) throw UsageError("config: width must be >= 1");
  if (reduction < 1) throw UsageError("config: reduction must be >= 1");
  if (data_root.empty()) throw UsageError("config: data_root is required");
}

DecoderConfig TrainConfig::decoder_config() const {
  DecoderConfig d;
  d.width = width;
  d.n_stages = 4;
  d.n_layers = n_layers;
  d.channel_act = channel_act;
  d.reduction = reduction;
  return d;
}

FileConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open config file: " + path.string());
  FileConfig cfg;
  std::string raw;
  int line_no = 0;
  while (std::getline(f, raw)) {
    ++line_no;
    std::string line = raw;
    if (const std::size_t hash = line.find('#'); hash != std::string::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) config_fail(path, line_no, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) config_fail(path, line_no, "expected 'key = value'");

    if (key == "lr") {
      cfg.train.lr = parse_double(path, line_no, value);
    } else if (key == "batch_size") {
      cfg.train.batch_size = parse_int(path, line_no, value);
    } else if (key == "epochs") {
      cfg.train.epochs = parse_int(path, line_no, value);
    } else if (key == "n_layers") {
      cfg.train.n_layers = static_cast<int>(parse_int(path, line_no, value));
    } else if (key == "width") {
      cfg.train.width = static_cast<int>(parse_int(path, line_no, value));
    } else if (key == "reduction") {
      cfg.train.reduction = static_cast<int>(parse_int(path, line_no, value));
    } else if (key == "channel_act") {
      if (value == "sigmoid") {
        cfg.train.channel_act = DecoderConfig::ChannelAct::sigmoid;
      } else if (value == "softmax") {
        cfg.train.channel_act = DecoderConfig::ChannelAct::softmax;
      } else {
        config_fail(path, line_no, "channel_act must be sigmoid or softmax");
      }
    } else if (key == "seed") {
      cfg.train.seed = static_cast<std::uint64_t>(parse_int(path, line_no, value));
      cfg.synth.seed = cfg.train.seed;
    } else if (key == "data_root") {
      cfg.train.data_root = value;
    } else if (key == "checkpoint") {
      cfg.train.checkpoint = value;
    } else if (key == "runlog") {
      cfg.train.runlog = value;
    } else if (key == "multiscale") {
      cfg.train.multiscale = parse_bool(path, line_no, value);
    } else if (key == "n_images") {
      cfg.synth.n_images = parse_int(path, line_no, value);
    } else if (key == "img_height") {
      cfg.synth.height = parse_int(path, line_no, value);
    } else if (key == "img_width") {
      cfg.synth.width = parse_int(path, line_no, value);
    } else if (key == "blob_min") {
      cfg.synth.blob_min = parse_int(path, line_no, value);
    } else if (key == "blob_max") {
      cfg.synth.blob_max = parse_int(path, line_no, value);
    } else if (key == "axis_min") {
      cfg.synth.axis_min = parse_double(path, line_no, value);
    } else if (key == "axis_max") {
      cfg.synth.axis_max = parse_double(path, line_no, value);
    } else if (key == "delta") {
      cfg.synth.delta = parse_double(path, line_no, value);
    } else if (key == "noise_amp") {
      cfg.synth.noise_amp = parse_double(path, line_no, value);
    } else if (key == "val_fraction") {
      cfg.synth.val_fraction = parse_double(path, line_no, value);
    } else {
      config_fail(path, line_no, "unknown key '" + key + "'");
    }
  }
  return cfg;
}

// ---------------------------------------------------------------------------

Tensor predict_logits(const ParamRegistry& reg, const DecoderConfig& dcfg, const Tensor& image) {
  const Shape& s = image.shape();
  if (s.rank != 4 || s[1] != 3) {
    throw std::invalid_argument("predict_logits: expects an [N,3,H,W] image");
  }
  const std::int64_t h = s[2], w = s[3];
  const std::int64_t h32 = data::round_to_multiple_of_32(static_cast<double>(h));
  const std::int64_t w32 = data::round_to_multiple_of_32(static_cast<double>(w));
  const bool resized = h32 != h || w32 != w;
  const Tensor input = resized ? data::resize_image(image, h32, w32) : image;
  const FeaturePyramid pyr = encoder_forward(input, reg);
  const DecoderGrid grid = decoder_forward(pyr, dcfg, reg, h32, w32);
  return resized ? upsample_bilinear(grid.final_logits, h, w) : grid.final_logits;
}

std::pair<double, double> evaluate_samples(const ParamRegistry& reg, const DecoderConfig& dcfg,
                                           const std::vector<data::Sample>& samples) {
  double d_sum = 0.0, i_sum = 0.0;
  for (const data::Sample& s : samples) {
    const Tensor logits = predict_logits(reg, dcfg, as_batch(s.image));
    const Tensor pred = binarize(logits);
    const Tensor gt = as_batch(s.mask);
    d_sum += dice(pred, gt);
    i_sum += iou(pred, gt);
  }
  const double n = static_cast<double>(samples.size());
  return {d_sum / n, i_sum / n};
}

TrainResult train_run(const TrainConfig& cfg) {
  cfg.validate();
  const data::DatasetIndex index = data::load_index(cfg.data_root);
  const std::vector<data::Sample> train_samples = data::load_split(index, "train");
  const std::vector<data::Sample> val_samples = data::load_split(index, "val");
  if (train_samples.empty()) throw UsageError("train split is empty: " + cfg.data_root);
  if (val_samples.empty()) throw UsageError("val split is empty: " + cfg.data_root);

  const std::int64_t base_h = train_samples[0].image.shape()[1];
  const std::int64_t base_w = train_samples[0].image.shape()[2];
  const DecoderConfig dcfg = cfg.decoder_config();

  ParamRegistry reg;
  register_encoder_params(reg, cfg.seed);
  register_decoder_params(reg, dcfg, kEncoderChannels, cfg.seed);
  AdamState opt(reg, AdamConfig{.lr = cfg.lr});

  TrainResult result;
  result.checkpoint_path = cfg.checkpoint;
  result.runlog_path = cfg.runlog;
  result.best_val_dice = -1.0;

  std::ostringstream log;
  log << "step,epoch,height,width";
  for (int j = 1; j <= cfg.n_layers; ++j) log << ",loss_l" << j;
  log << ",loss_total,val_dice,val_iou\n";

  std::int64_t step = 0;
  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    data::BatchIter it(train_samples, cfg.batch_size, rng::mix(cfg.seed, "epoch", static_cast<std::uint64_t>(epoch)));
    std::vector<std::string> rows;
    while (auto batch = it.next()) {
      ++step;
      std::int64_t h = base_h, w = base_w;
      if (cfg.multiscale) std::tie(h, w) = data::multiscale_pick(step, base_h, base_w);
      Tensor images = batch->images, masks = batch->masks;
      if (h != base_h || w != base_w) {
        images = data::resize_image(images, h, w);
        masks = data::resize_mask(masks, h, w);
      }

      TapeScope scope;
      const FeaturePyramid pyr = encoder_forward(images, reg);
      const DecoderGrid grid = decoder_forward(pyr, dcfg, reg, h, w);
      const LossReport rep = total_loss(grid, masks);
      if (!std::isfinite(rep.total_value)) {
        throw std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step));
      }
      backward(rep.total);
      opt.step(reg);

      result.step_totals.push_back(rep.total_value);
      std::ostringstream row;
      row << step << ',' << epoch << ',' << h << ',' << w;
      for (double v : rep.per_layer_values) row << ',' << fmt_g(v);
      row << ',' << fmt_g(rep.total_value);
      rows.push_back(row.str());
    }

    const auto [val_dice, val_iou] = evaluate_samples(reg, dcfg, val_samples);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      log << rows[r];
      if (r + 1 == rows.size()) {
        log << ',' << fmt_g(val_dice) << ',' << fmt_g(val_iou) << '\n';
      } else {
        log << ",,\n";
      }
    }
    if (val_dice > result.best_val_dice) {
      result.best_val_dice = val_dice;
      result.best_val_iou = val_iou;
      result.best_epoch = epoch;
      save_checkpoint(reg, cfg.checkpoint);
    }
  }
  result.steps = step;

  std::tie(result.final_train_dice, result.final_train_iou) =
      evaluate_samples(reg, dcfg, train_samples);

  std::ofstream out(cfg.runlog, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open runlog for writing: " + cfg.runlog);
  const std::string bytes = log.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  return result;
}

EvalResult eval_run(const TrainConfig& cfg, const std::filesystem::path& checkpoint,
                    const std::string& split, const std::filesystem::path& out_tsv) {
  cfg.validate();
  const data::DatasetIndex index = data::load_index(cfg.data_root);
  const auto entries = index.split(split);
  if (entries.empty()) throw UsageError("split '" + split + "' is empty: " + cfg.data_root);
  const DecoderConfig dcfg = cfg.decoder_config();

  ParamRegistry reg;
  register_encoder_params(reg, cfg.seed);
  register_decoder_params(reg, dcfg, kEncoderChannels, cfg.seed);
  load_checkpoint(reg, checkpoint);

  EvalResult res;
  res.tsv_path = out_tsv;
  double d_sum = 0.0, i_sum = 0.0;
  for (const auto& e : entries) {
    const data::Sample s = data::load_sample(index, e);
    const Tensor logits = predict_logits(reg, dcfg, as_batch(s.image));
    const Tensor pred = binarize(logits);
    const Tensor gt = as_batch(s.mask);
    EvalRow row{e.id, dice(pred, gt), iou(pred, gt)};
    d_sum += row.dice;
    i_sum += row.iou;
    res.rows.push_back(std::move(row));
  }
  res.mdice = d_sum / static_cast<double>(res.rows.size());
  res.miou = i_sum / static_cast<double>(res.rows.size());

  std::ostringstream tsv;
  for (const EvalRow& r : res.rows) tsv << r.id << '\t' << fmt_g(r.dice) << '\t' << fmt_g(r.iou) << '\n';
  tsv << "mean\t" << fmt_g(res.mdice) << '\t' << fmt_g(res.miou) << '\n';
  std::ofstream out(out_tsv, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open metrics file for writing: " + out_tsv.string());
  const std::string bytes = tsv.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));

  std::cout << "split=" << split << " images=" << res.rows.size() << " mDice=" << fmt_g(res.mdice)
            << " mIoU=" << fmt_g(res.miou) << "\n";
  return res;
}

void predict_run(const TrainConfig& cfg, const std::filesystem::path& checkpoint,
                 const std::filesystem::path& image_path,
                 const std::filesystem::path& out_path) {
  const DecoderConfig dcfg = cfg.decoder_config();
  ParamRegistry reg;
  register_encoder_params(reg, cfg.seed);
  register_decoder_params(reg, dcfg, kEncoderChannels, cfg.seed);
  load_checkpoint(reg, checkpoint);

  const Tensor image = data::read_ppm(image_path);
  const Tensor logits = predict_logits(reg, dcfg, as_batch(image));
  const Tensor pred = binarize(logits);
  const std::int64_t h = image.shape()[1], w = image.shape()[2];
  data::write_pgm(Tensor::from_data(Shape{1, h, w},
                                    std::vector<double>(pred.value().begin(), pred.value().end()),
                                    false),
                  out_path);
  std::cout << "wrote " << out_path.string() << "\n";
}

AblateResult ablate_run(const TrainConfig& cfg, const std::vector<int>& layers,
                        const std::filesystem::path& out_dir) {
  if (layers.empty()) throw UsageError("ablate: no depths requested");
  for (int d : layers) {
    if (d < 1 || d > 3) throw UsageError("ablate: depths must lie in {1,2,3}");
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);

  AblateResult res;
  for (int depth : layers) {
    AblateRow row;
    row.depth = depth;
    for (int k = 0; k < 3; ++k) {
      TrainConfig sub = cfg;
      sub.n_layers = depth;
      sub.seed = cfg.seed + static_cast<std::uint64_t>(k);
      const std::string tag = "ablate_L" + std::to_string(depth) + "_s" + std::to_string(sub.seed);
      sub.checkpoint = (out_dir / (tag + ".mldd1")).string();
      sub.runlog = (out_dir / (tag + ".csv")).string();
      const TrainResult r = train_run(sub);
      row.seed_dice.push_back(r.best_val_dice);
      row.seed_iou.push_back(r.best_val_iou);
      std::cout << "depth=" << depth << " seed=" << sub.seed << " val_mDice=" << fmt_g(r.best_val_dice)
                << " val_mIoU=" << fmt_g(r.best_val_iou) << "\n";
    }
    row.mean_dice = (row.seed_dice[0] + row.seed_dice[1] + row.seed_dice[2]) / 3.0;
    row.mean_iou = (row.seed_iou[0] + row.seed_iou[1] + row.seed_iou[2]) / 3.0;
    std::cout << "depth=" << depth << " mean val_mDice=" << fmt_g(row.mean_dice)
              << " mean val_mIoU=" << fmt_g(row.mean_iou) << "\n";
    res.rows.push_back(std::move(row));
  }

  res.tsv_path = out_dir / "ablation.tsv";
  std::ostringstream tsv;
  for (const AblateRow& r : res.rows) {
    tsv << r.depth << '\t' << fmt_g(r.mean_dice) << '\t' << fmt_g(r.mean_iou) << '\n';
  }
  std::ofstream out(res.tsv_path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open ablation table for writing: " + res.tsv_path.string());
  const std::string bytes = tsv.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  return res;
}

}  // namespace mldd
