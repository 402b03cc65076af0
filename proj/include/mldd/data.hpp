#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mldd/tensor.hpp"

namespace mldd::data {

// One image/mask pair. image is [3,H,W] in [0,1], mask is [1,H,W] in {0,1}.
struct Sample {
  std::string id;
  Tensor image;
  Tensor mask;
};

struct SynthConfig {
  std::int64_t n_images = 10;
  std::int64_t height = 64, width = 64;  // multiples of 32
  std::int64_t blob_min = 1, blob_max = 3;
  double axis_min = 0.1, axis_max = 0.35;  // semi-axis fraction of min extent
  double delta = 0.08;                     // foreground intensity offset
  double noise_amp = 0.15;                 // value-noise amplitude
  double val_fraction = 0.2;
  std::uint64_t seed = 1;

  void validate() const;
};

// Directory layout: <root>/images/<id>.ppm, <root>/masks/<id>.pgm,
// <root>/index.tsv with one "id<TAB>split<TAB>height<TAB>width" line per
// sample.
struct DatasetIndex {
  struct Entry {
    std::string id;
    std::string split;
    std::int64_t height = 0, width = 0;
  };
  std::filesystem::path root;
  std::vector<Entry> entries;
  std::uint64_t seed = 0;

  std::vector<Entry> split(const std::string& tag) const;
};

// Camouflage generator: smoothed value-noise background; each blob is a
// rotated filled ellipse sharing the background texture with intensity
// offset +delta. Fully determined by cfg.seed.
DatasetIndex synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

DatasetIndex load_index(const std::filesystem::path& root);
Sample load_sample(const DatasetIndex& idx, const DatasetIndex::Entry& entry);
std::vector<Sample> load_split(const DatasetIndex& idx, const std::string& tag);

// Binary netpbm only (P6/P5, maxval 255); headers tolerate whitespace and
// '#' comments. Reads scale to [0,1]; writes round half up. Mask reads
// threshold at 128.
Tensor read_ppm(const std::filesystem::path& path);
void write_ppm(const Tensor& image, const std::filesystem::path& path);
Tensor read_pgm(const std::filesystem::path& path);
void write_pgm(const Tensor& mask, const std::filesystem::path& path);

// Bilinear for images, nearest for masks (preserves binarity). Accepts
// rank-3 [C,H,W] or rank-4 [N,C,H,W]; identity extents return a bitwise copy.
Tensor resize_image(const Tensor& t, std::int64_t out_h, std::int64_t out_w);
Tensor resize_mask(const Tensor& m, std::int64_t out_h, std::int64_t out_w);

struct Batch {
  Tensor images;  // [B,3,H,W]
  Tensor masks;   // [B,1,H,W]
  std::vector<std::string> ids;
};

// Seeded Fisher-Yates shuffle per epoch; the final partial batch is kept.
class BatchIter {
 public:
  BatchIter(const std::vector<Sample>& samples, std::int64_t batch_size,
            std::uint64_t epoch_seed);
  std::optional<Batch> next();

 private:
  const std::vector<Sample>& samples_;
  std::vector<std::size_t> order_;
  std::int64_t batch_size_;
  std::size_t pos_ = 0;
};

// Rounds to the nearest multiple of 32 (ties toward the smaller multiple),
// never below 32.
std::int64_t round_to_multiple_of_32(double v);

// Cycles scales {0.75, 1.0, 1.25} by step index, rounded per above.
std::pair<std::int64_t, std::int64_t> multiscale_pick(std::int64_t step,
                                                      std::int64_t base_h,
                                                      std::int64_t base_w);

}  // namespace mldd::data
