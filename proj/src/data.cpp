#include "mldd/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mldd/kernels.hpp"
#include "mldd/rng.hpp"

namespace mldd::data {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

unsigned char to_byte(double v) {
  double s = std::floor(v * 255.0 + 0.5);  // round half up
  if (s < 0.0) s = 0.0;
  if (s > 255.0) s = 255.0;
  return static_cast<unsigned char>(s);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail("cannot open file: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail("cannot open file for writing: " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail("write failed: " + path.string());
}

// Header token reader: skips whitespace and '#' comments.
struct PnmHeader {
  const std::string& buf;
  const std::filesystem::path& path;
  std::size_t pos = 0;

  void skip_space_and_comments() {
    while (pos < buf.size()) {
      const char c = buf[pos];
      if (c == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        break;
      }
    }
  }

  std::string token() {
    skip_space_and_comments();
    std::size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos])) &&
           buf[pos] != '#') {
      ++pos;
    }
    if (start == pos) fail("malformed netpbm header: " + path.string());
    return buf.substr(start, pos - start);
  }

  std::int64_t integer() {
    const std::string t = token();
    try {
      std::size_t used = 0;
      const long long v = std::stoll(t, &used);
      if (used != t.size() || v < 0) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      fail("malformed netpbm header value '" + t + "': " + path.string());
    }
  }
};

std::vector<unsigned char> read_pnm_payload(const std::filesystem::path& path,
                                            const char* expect_magic,
                                            std::int64_t channels, std::int64_t& h,
                                            std::int64_t& w) {
  const std::string buf = read_file(path);
  PnmHeader hdr{buf, path};
  const std::string magic = hdr.token();
  if (magic != expect_magic) {
    fail("unsupported netpbm magic '" + magic + "' (expected " + expect_magic +
         ", ASCII variants unsupported): " + path.string());
  }
  w = hdr.integer();
  h = hdr.integer();
  const std::int64_t maxval = hdr.integer();
  if (w < 1 || h < 1) fail("invalid netpbm extents: " + path.string());
  if (maxval != 255) fail("unsupported netpbm maxval " + std::to_string(maxval) + ": " + path.string());
  hdr.pos += 1;  // single whitespace byte after maxval
  const std::size_t need = static_cast<std::size_t>(h * w * channels);
  if (hdr.pos + need > buf.size()) fail("truncated netpbm payload: " + path.string());
  std::vector<unsigned char> payload(need);
  std::memcpy(payload.data(), buf.data() + hdr.pos, need);
  return payload;
}

}  // namespace

Tensor read_ppm(const std::filesystem::path& path) {
  std::int64_t h = 0, w = 0;
  const auto bytes = read_pnm_payload(path, "P6", 3, h, w);
  std::vector<double> v(static_cast<std::size_t>(3 * h * w));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (std::int64_t c = 0; c < 3; ++c) {
        v[static_cast<std::size_t>(c * h * w + y * w + x)] =
            static_cast<double>(bytes[static_cast<std::size_t>((y * w + x) * 3 + c)]) / 255.0;
      }
    }
  }
  return Tensor::from_data(Shape{3, h, w}, std::move(v), false);
}

void write_ppm(const Tensor& image, const std::filesystem::path& path) {
  if (image.shape().rank != 3 || image.shape()[0] != 3) {
    throw std::invalid_argument("write_ppm: expects a [3,H,W] tensor, got " + image.shape().str());
  }
  const std::int64_t h = image.shape()[1], w = image.shape()[2];
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const auto v = image.value();
  out.reserve(out.size() + static_cast<std::size_t>(3 * h * w));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (std::int64_t c = 0; c < 3; ++c) {
        out.push_back(static_cast<char>(to_byte(v[static_cast<std::size_t>(c * h * w + y * w + x)])));
      }
    }
  }
  write_file(path, out);
}

Tensor read_pgm(const std::filesystem::path& path) {
  std::int64_t h = 0, w = 0;
  const auto bytes = read_pnm_payload(path, "P5", 1, h, w);
  std::vector<double> v(static_cast<std::size_t>(h * w));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = bytes[i] >= 128 ? 1.0 : 0.0;
  return Tensor::from_data(Shape{1, h, w}, std::move(v), false);
}

void write_pgm(const Tensor& mask, const std::filesystem::path& path) {
  if (mask.shape().rank != 3 || mask.shape()[0] != 1) {
    throw std::invalid_argument("write_pgm: expects a [1,H,W] tensor, got " + mask.shape().str());
  }
  const std::int64_t h = mask.shape()[1], w = mask.shape()[2];
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const auto v = mask.value();
  out.reserve(out.size() + static_cast<std::size_t>(h * w));
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(static_cast<char>(to_byte(v[i])));
  write_file(path, out);
}

// ---------------------------------------------------------------------------
// Resizing

namespace {

Tensor resize_common(const Tensor& t, std::int64_t out_h, std::int64_t out_w, bool nearest) {
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("resize: target extents must be positive");
  }
  const int rank = t.shape().rank;
  if (rank != 3 && rank != 4) {
    throw std::invalid_argument("resize: expects rank-3 or rank-4 tensor, got " + t.shape().str());
  }
  const std::int64_t n = rank == 4 ? t.shape()[0] : 1;
  const std::int64_t c = rank == 4 ? t.shape()[1] : t.shape()[0];
  const std::int64_t h = rank == 4 ? t.shape()[2] : t.shape()[1];
  const std::int64_t w = rank == 4 ? t.shape()[3] : t.shape()[2];
  const Shape out_shape = rank == 4 ? Shape{n, c, out_h, out_w} : Shape{c, out_h, out_w};
  if (out_h == h && out_w == w) {
    return Tensor::from_data(out_shape, std::vector<double>(t.value().begin(), t.value().end()), false);
  }
  std::vector<double> out(static_cast<std::size_t>(n * c * out_h * out_w));
  if (!nearest) {
    kernels::ResizeDims d{n, c, h, w, out_h, out_w};
    kernels::bilinear_forward(t.value().data(), out.data(), d);
  } else {
    const auto v = t.value();
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (std::int64_t plane = 0; plane < n * c; ++plane) {
      const double* src = v.data() + plane * h * w;
      double* dst = out.data() + plane * out_h * out_w;
      for (std::int64_t y = 0; y < out_h; ++y) {
        std::int64_t iy = static_cast<std::int64_t>(std::floor((static_cast<double>(y) + 0.5) * sy));
        if (iy > h - 1) iy = h - 1;
        for (std::int64_t x = 0; x < out_w; ++x) {
          std::int64_t ix = static_cast<std::int64_t>(std::floor((static_cast<double>(x) + 0.5) * sx));
          if (ix > w - 1) ix = w - 1;
          dst[y * out_w + x] = src[iy * w + ix];
        }
      }
    }
  }
  return Tensor::from_data(out_shape, std::move(out), false);
}

}  // namespace

Tensor resize_image(const Tensor& t, std::int64_t out_h, std::int64_t out_w) {
  return resize_common(t, out_h, out_w, false);
}

Tensor resize_mask(const Tensor& m, std::int64_t out_h, std::int64_t out_w) {
  return resize_common(m, out_h, out_w, true);
}

// ---------------------------------------------------------------------------
// Synthetic dataset

void SynthConfig::validate() const {
  if (n_images < 1) fail("SynthConfig: n_images must be >= 1");
  if (height % 32 != 0 || width % 32 != 0 || height < 32 || width < 32) {
    fail("SynthConfig: extents must be multiples of 32");
  }
  if (blob_min < 1 || blob_max < blob_min) fail("SynthConfig: invalid blob count range");
  if (!(axis_min > 0.0) || axis_max < axis_min) fail("SynthConfig: invalid axis range");
  if (!(delta > 0.0)) fail("SynthConfig: delta must be > 0");
  if (noise_amp < 0.0) fail("SynthConfig: noise amplitude must be >= 0");
  if (val_fraction < 0.0 || val_fraction >= 1.0) fail("SynthConfig: val_fraction must be in [0,1)");
}

namespace {

// Bilinearly interpolated lattice of uniform values in [-1,1].
std::vector<double> value_noise(std::mt19937_64& gen, std::int64_t h, std::int64_t w) {
  const std::int64_t cell = 8;
  const std::int64_t gh = h / cell + 2, gw = w / cell + 2;
  std::vector<double> lattice(static_cast<std::size_t>(gh * gw));
  for (double& v : lattice) v = rng::uniform(gen, -1.0, 1.0);
  std::vector<double> field(static_cast<std::size_t>(h * w));
  for (std::int64_t y = 0; y < h; ++y) {
    const double fy = static_cast<double>(y) / static_cast<double>(cell);
    const std::int64_t iy = static_cast<std::int64_t>(fy);
    const double ty = fy - static_cast<double>(iy);
    for (std::int64_t x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x) / static_cast<double>(cell);
      const std::int64_t ix = static_cast<std::int64_t>(fx);
      const double tx = fx - static_cast<double>(ix);
      const double v00 = lattice[static_cast<std::size_t>(iy * gw + ix)];
      const double v01 = lattice[static_cast<std::size_t>(iy * gw + ix + 1)];
      const double v10 = lattice[static_cast<std::size_t>((iy + 1) * gw + ix)];
      const double v11 = lattice[static_cast<std::size_t>((iy + 1) * gw + ix + 1)];
      field[static_cast<std::size_t>(y * w + x)] =
          (1.0 - ty) * ((1.0 - tx) * v00 + tx * v01) + ty * ((1.0 - tx) * v10 + tx * v11);
    }
  }
  return field;
}

struct Ellipse {
  double cx, cy, a, b, theta;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = (dx * std::cos(theta) + dy * std::sin(theta)) / a;
    const double v = (-dx * std::sin(theta) + dy * std::cos(theta)) / b;
    return u * u + v * v <= 1.0;
  }
};

// Union-of-ellipses mask; resampled until it covers more than zero and less
// than half of the image.
std::vector<double> sample_mask(std::mt19937_64& gen, const SynthConfig& cfg) {
  const std::int64_t h = cfg.height, w = cfg.width;
  const double mn = static_cast<double>(std::min(h, w));
  std::vector<double> mask(static_cast<std::size_t>(h * w));
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const std::int64_t count =
        cfg.blob_min + static_cast<std::int64_t>(rng::below(gen, static_cast<std::uint64_t>(cfg.blob_max - cfg.blob_min + 1)));
    std::vector<Ellipse> blobs;
    for (std::int64_t i = 0; i < count; ++i) {
      Ellipse e;
      e.cx = rng::uniform(gen, 0.15, 0.85) * static_cast<double>(w);
      e.cy = rng::uniform(gen, 0.15, 0.85) * static_cast<double>(h);
      e.a = rng::uniform(gen, cfg.axis_min, cfg.axis_max) * mn;
      e.b = rng::uniform(gen, cfg.axis_min, cfg.axis_max) * mn;
      e.theta = rng::uniform(gen, 0.0, 3.14159265358979323846);
      blobs.push_back(e);
    }
    std::int64_t area = 0;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        bool inside = false;
        for (const Ellipse& e : blobs) {
          if (e.contains(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) {
            inside = true;
            break;
          }
        }
        mask[static_cast<std::size_t>(y * w + x)] = inside ? 1.0 : 0.0;
        area += inside;
      }
    }
    if (area > 0 && area * 2 < h * w) return mask;
  }
  fail("synth_generate: could not sample a mask within the area bounds");
}

}  // namespace

std::vector<DatasetIndex::Entry> DatasetIndex::split(const std::string& tag) const {
  std::vector<Entry> out;
  for (const Entry& e : entries) {
    if (e.split == tag) out.push_back(e);
  }
  return out;
}

DatasetIndex synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  std::filesystem::create_directories(out_dir / "masks", ec);
  if (!std::filesystem::is_directory(out_dir / "images") ||
      !std::filesystem::is_directory(out_dir / "masks")) {
    fail("synth_generate: cannot create output directories under " + out_dir.string());
  }

  // Validation membership by seeded shuffle, then a ratio cut.
  const std::int64_t n_val = static_cast<std::int64_t>(
      std::llround(static_cast<double>(cfg.n_images) * cfg.val_fraction));
  std::vector<std::size_t> order(static_cast<std::size_t>(cfg.n_images));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 split_gen(rng::mix(cfg.seed, "split"));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng::below(split_gen, i))]);
  }
  std::vector<bool> is_val(order.size(), false);
  for (std::int64_t i = 0; i < n_val; ++i) is_val[order[static_cast<std::size_t>(i)]] = true;

  DatasetIndex idx;
  idx.root = out_dir;
  idx.seed = cfg.seed;
  const std::int64_t h = cfg.height, w = cfg.width;
  for (std::int64_t i = 0; i < cfg.n_images; ++i) {
    std::mt19937_64 gen(rng::mix(cfg.seed, "img", static_cast<std::uint64_t>(i)));
    const std::vector<double> field = value_noise(gen, h, w);
    const std::vector<double> mask = sample_mask(gen, cfg);
    std::vector<double> img(static_cast<std::size_t>(3 * h * w));
    for (std::int64_t p = 0; p < h * w; ++p) {
      double v = 0.5 + cfg.noise_amp * field[static_cast<std::size_t>(p)] +
                 (mask[static_cast<std::size_t>(p)] > 0.5 ? cfg.delta : 0.0);
      v = std::clamp(v, 0.0, 1.0);
      for (std::int64_t c = 0; c < 3; ++c) img[static_cast<std::size_t>(c * h * w + p)] = v;
    }
    char name[32];
    std::snprintf(name, sizeof(name), "img%04lld", static_cast<long long>(i));
    const std::string id = name;
    write_ppm(Tensor::from_data(Shape{3, h, w}, std::move(img), false), out_dir / "images" / (id + ".ppm"));
    write_pgm(Tensor::from_data(Shape{1, h, w}, mask, false), out_dir / "masks" / (id + ".pgm"));
    idx.entries.push_back({id, is_val[static_cast<std::size_t>(i)] ? "val" : "train", h, w});
  }

  std::string tsv;
  for (const auto& e : idx.entries) {
    tsv += e.id + "\t" + e.split + "\t" + std::to_string(e.height) + "\t" +
           std::to_string(e.width) + "\n";
  }
  write_file(out_dir / "index.tsv", tsv);
  return idx;
}

DatasetIndex load_index(const std::filesystem::path& root) {
  const std::filesystem::path path = root / "index.tsv";
  std::ifstream f(path);
  if (!f) fail("cannot open dataset index: " + path.string());
  DatasetIndex idx;
  idx.root = root;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    DatasetIndex::Entry e;
    std::string hs, ws;
    if (!std::getline(ss, e.id, '\t') || !std::getline(ss, e.split, '\t') ||
        !std::getline(ss, hs, '\t') || !std::getline(ss, ws)) {
      fail(path.string() + ":" + std::to_string(line_no) + ": expected id<TAB>split<TAB>height<TAB>width");
    }
    try {
      e.height = std::stoll(hs);
      e.width = std::stoll(ws);
    } catch (const std::exception&) {
      fail(path.string() + ":" + std::to_string(line_no) + ": bad extents");
    }
    if (e.split != "train" && e.split != "val") {
      fail(path.string() + ":" + std::to_string(line_no) + ": unknown split '" + e.split + "'");
    }
    idx.entries.push_back(std::move(e));
  }
  if (idx.entries.empty()) fail("dataset index is empty: " + path.string());
  return idx;
}

Sample load_sample(const DatasetIndex& idx, const DatasetIndex::Entry& entry) {
  Sample s;
  s.id = entry.id;
  s.image = read_ppm(idx.root / "images" / (entry.id + ".ppm"));
  s.mask = read_pgm(idx.root / "masks" / (entry.id + ".pgm"));
  if (s.image.shape()[1] != entry.height || s.image.shape()[2] != entry.width) {
    fail("sample '" + entry.id + "': image extents disagree with the index");
  }
  if (s.mask.shape()[1] != entry.height || s.mask.shape()[2] != entry.width) {
    fail("sample '" + entry.id + "': mask extents disagree with the index");
  }
  return s;
}

std::vector<Sample> load_split(const DatasetIndex& idx, const std::string& tag) {
  std::vector<Sample> out;
  for (const auto& e : idx.split(tag)) out.push_back(load_sample(idx, e));
  return out;
}

// ---------------------------------------------------------------------------
// Batching

BatchIter::BatchIter(const std::vector<Sample>& samples, std::int64_t batch_size,
                     std::uint64_t epoch_seed)
    : samples_(samples), batch_size_(batch_size) {
  if (samples.empty()) throw std::invalid_argument("BatchIter: empty sample list");
  if (batch_size < 1) throw std::invalid_argument("BatchIter: batch_size must be >= 1");
  order_.resize(samples.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  std::mt19937_64 gen(epoch_seed);
  for (std::size_t i = order_.size(); i > 1; --i) {
    std::swap(order_[i - 1], order_[static_cast<std::size_t>(rng::below(gen, i))]);
  }
}

std::optional<Batch> BatchIter::next() {
  if (pos_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(pos_ + static_cast<std::size_t>(batch_size_), order_.size());
  const std::int64_t b = static_cast<std::int64_t>(end - pos_);
  const Sample& first = samples_[order_[pos_]];
  const std::int64_t h = first.image.shape()[1], w = first.image.shape()[2];
  std::vector<double> imgs(static_cast<std::size_t>(b * 3 * h * w));
  std::vector<double> msks(static_cast<std::size_t>(b * h * w));
  Batch batch;
  for (std::size_t k = pos_; k < end; ++k) {
    const Sample& s = samples_[order_[k]];
    if (s.image.shape()[1] != h || s.image.shape()[2] != w) {
      throw std::invalid_argument("BatchIter: samples in a batch must share extents");
    }
    const std::size_t i = k - pos_;
    std::memcpy(imgs.data() + i * static_cast<std::size_t>(3 * h * w), s.image.value().data(),
                sizeof(double) * static_cast<std::size_t>(3 * h * w));
    std::memcpy(msks.data() + i * static_cast<std::size_t>(h * w), s.mask.value().data(),
                sizeof(double) * static_cast<std::size_t>(h * w));
    batch.ids.push_back(s.id);
  }
  batch.images = Tensor::from_data(Shape{b, 3, h, w}, std::move(imgs), false);
  batch.masks = Tensor::from_data(Shape{b, 1, h, w}, std::move(msks), false);
  pos_ = end;
  return batch;
}

// ---------------------------------------------------------------------------
// Multi-scale

std::int64_t round_to_multiple_of_32(double v) {
  const double q = std::floor(v / 32.0);
  const std::int64_t lo = static_cast<std::int64_t>(q) * 32;
  const std::int64_t hi = lo + 32;
  const double d_lo = v - static_cast<double>(lo);
  const double d_hi = static_cast<double>(hi) - v;
  const std::int64_t r = d_lo <= d_hi ? lo : hi;
  return r < 32 ? 32 : r;
}

std::pair<std::int64_t, std::int64_t> multiscale_pick(std::int64_t step, std::int64_t base_h,
                                                      std::int64_t base_w) {
  static constexpr double kScales[3] = {0.75, 1.0, 1.25};
  const double s = kScales[step % 3];
  return {round_to_multiple_of_32(static_cast<double>(base_h) * s),
          round_to_multiple_of_32(static_cast<double>(base_w) * s)};
}

}  // namespace mldd::data
