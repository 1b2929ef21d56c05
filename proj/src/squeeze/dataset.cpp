#include "scdd/squeeze/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <sstream>

#include "scdd/core/errors.hpp"
#include "scdd/core/parallel.hpp"
#include "scdd/core/random.hpp"

namespace scdd {

namespace fs = std::filesystem;

int ImageDataset::size() const noexcept {
  const std::size_t s = image_size();
  return s == 0 ? 0 : static_cast<int>(pixels.size() / s);
}

std::span<const float> ImageDataset::image(int index) const {
  if (index < 0 || index >= size()) throw DataError("image index " + std::to_string(index) + " out of range");
  return std::span<const float>(pixels).subspan(static_cast<std::size_t>(index) * image_size(), image_size());
}

std::vector<int> ImageDataset::indices_of_class(int label) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i)
    if (labels[static_cast<std::size_t>(i)] == label) out.push_back(i);
  return out;
}

void ImageDataset::validate() const {
  if (image_size() == 0) throw DataError(id + ": empty image shape");
  if (pixels.size() % image_size() != 0) throw DataError(id + ": pixel buffer is not a whole number of images");
  if (labeled()) {
    if (labels.size() != static_cast<std::size_t>(size())) throw DataError(id + ": label count mismatch");
    for (int y : labels)
      if (y < 0 || y >= num_classes) throw DataError(id + ": label out of range");
  }
}

std::span<const float> UnlabeledImages::image(int index) const {
  const std::size_t s = static_cast<std::size_t>(shape_.channels) * shape_.height * shape_.width;
  if (index < 0 || index >= count_) throw DataError("image index out of range");
  return pixels_.subspan(static_cast<std::size_t>(index) * s, s);
}

// ---------------------------------------------------------------- procedural

namespace {

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

// Signed distance-like field, positive inside the class shape.
double shape_field(int cls, double x, double y, double freq, double phase) {
  const double pi = std::numbers::pi;
  auto stripes = [&](double t) { return std::sin(pi * freq * t + phase) / (pi * freq); };
  auto plus = [](double a, double b) {
    const double bar1 = std::min(0.16 - std::abs(a), 0.65 - std::abs(b));
    const double bar2 = std::min(0.16 - std::abs(b), 0.65 - std::abs(a));
    return std::max(bar1, bar2);
  };
  const double r = std::hypot(x, y);
  switch (cls % 10) {
    case 0: return stripes(y);
    case 1: return stripes(x);
    case 2: return stripes((x + y) / std::numbers::sqrt2);
    case 3: return std::sin(pi * freq * x + phase) * std::sin(pi * freq * y) / (pi * freq);
    case 4: return 0.55 - r;
    case 5: return 0.14 - std::abs(r - 0.48);
    case 6: return plus(x, y);
    case 7: return plus((x + y) / std::numbers::sqrt2, (x - y) / std::numbers::sqrt2);
    case 8: {
      // upward triangle with apex (0,-0.6), base y = 0.45
      const double base = 0.45 - y;
      const double left = (y + 0.6) * 0.6 / 1.05 - x;
      const double right = x + (y + 0.6) * 0.6 / 1.05;
      return std::min({base, left * 0.87, right * 0.87});
    }
    default: {
      const double m = std::max(std::abs(x), std::abs(y));
      return std::min(m - 0.36, 0.6 - m);
    }
  }
}

void render_procedural(int cls, int classes, int size, Rng& rng, float* rgb) {
  const double cx = uniform(rng, -0.22, 0.22), cy = uniform(rng, -0.22, 0.22);
  const double scale = uniform(rng, 0.75, 1.1);
  const double theta = uniform(rng, -0.3, 0.3);
  const double freq = uniform(rng, 2.0, 3.0);
  const double phase = uniform(rng, 0, 2 * std::numbers::pi);
  const double fg_hue = uniform(rng) < 0.7 ? static_cast<double>(cls) / classes + uniform(rng, -0.03, 0.03)
                                           : uniform(rng);
  const auto fg = hsv_to_rgb(fg_hue, uniform(rng, 0.55, 1.0), uniform(rng, 0.6, 1.0));
  const auto bg = hsv_to_rgb(uniform(rng), uniform(rng, 0.0, 0.5), uniform(rng, 0.05, 0.4));
  const double gx = uniform(rng, -0.3, 0.3), gy = uniform(rng, -0.3, 0.3);
  const double edge = 2.0 / size;
  const double ct = std::cos(theta), st = std::sin(theta);
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  for (int py = 0; py < size; ++py) {
    for (int px = 0; px < size; ++px) {
      const double u = (px + 0.5) / size * 2 - 1;
      const double v = (py + 0.5) / size * 2 - 1;
      const double dx = u - cx, dy = v - cy;
      const double x = (ct * dx + st * dy) / scale;
      const double y = (-st * dx + ct * dy) / scale;
      const double m = std::clamp(0.5 + shape_field(cls, x, y, freq, phase) / edge, 0.0, 1.0);
      const double shade = 1 + gx * u + gy * v;
      for (int c = 0; c < 3; ++c) {
        const double value = bg[c] * shade * (1 - m) + fg[c] * m + normal(rng, 0.0, 0.03);
        rgb[c * plane + static_cast<std::size_t>(py) * size + px] = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
  }
}

ImageDataset procedural_split(const ProceduralParams& p, int per_class, std::uint64_t stream,
                              const std::string& id) {
  ImageDataset d;
  d.id = id;
  d.shape = {p.channels, p.size, p.size};
  d.num_classes = p.classes;
  const char* names[] = {"hstripes", "vstripes", "dstripes", "checker", "disk",
                         "ring",     "plus",     "cross",    "triangle", "box"};
  for (int c = 0; c < p.classes; ++c) d.class_names.push_back(names[c % 10]);
  const int total = per_class * p.classes;
  d.pixels.assign(static_cast<std::size_t>(total) * d.image_size(), 0.0f);
  d.labels.resize(static_cast<std::size_t>(total));
  const std::size_t plane = static_cast<std::size_t>(p.size) * p.size;
  SCDD_PARALLEL_FOR
  for (int i = 0; i < total; ++i) {
    // interleave classes so any prefix is balanced
    const int cls = i % p.classes;
    d.labels[static_cast<std::size_t>(i)] = cls;
    Rng rng = make_rng(p.seed, stream * 1000003ULL + static_cast<std::uint64_t>(i));
    std::vector<float> rgb(3 * plane);
    render_procedural(cls, p.classes, p.size, rng, rgb.data());
    float* out = d.pixels.data() + static_cast<std::size_t>(i) * d.image_size();
    if (p.channels == 3) {
      std::copy(rgb.begin(), rgb.end(), out);
    } else {
      for (std::size_t k = 0; k < plane; ++k)
        out[k] = 0.299f * rgb[k] + 0.587f * rgb[plane + k] + 0.114f * rgb[2 * plane + k];
    }
  }
  return d;
}

}  // namespace

DatasetSplits make_procedural_dataset(const ProceduralParams& p) {
  if (p.classes < 2 || p.classes > 10) throw ConfigError("procedural dataset supports 2..10 classes");
  if (p.size < 8) throw ConfigError("procedural image size must be >= 8");
  if (p.channels != 1 && p.channels != 3) throw ConfigError("procedural channels must be 1 or 3");
  if (p.train_per_class < 1 || p.val_per_class < 1) throw ConfigError("procedural split sizes must be positive");
  DatasetSource src;
  src.kind = DatasetSource::Kind::procedural;
  src.procedural = p;
  const std::string id = src.descriptor();
  return {procedural_split(p, p.train_per_class, 1, id), procedural_split(p, p.val_per_class, 2, id)};
}

// ---------------------------------------------------------------- CIFAR-10

namespace {

ImageDataset read_cifar_batches(const std::vector<fs::path>& files, int downsample, int per_class,
                                const std::string& id) {
  constexpr int kSide = 32, kChannels = 3, kRecord = 1 + kSide * kSide * kChannels;
  const int side = kSide / downsample;
  ImageDataset d;
  d.id = id;
  d.shape = {kChannels, side, side};
  d.num_classes = 10;
  d.class_names = {"airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"};
  std::vector<int> taken(10, 0);
  std::vector<unsigned char> rec(kRecord);
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw IoError("cannot open CIFAR batch " + f.string());
    while (in.read(reinterpret_cast<char*>(rec.data()), kRecord)) {
      const int label = rec[0];
      if (label > 9) throw FormatError(f.string() + ": label byte out of range");
      if (per_class > 0 && taken[label] >= per_class) continue;
      ++taken[label];
      d.labels.push_back(label);
      for (int c = 0; c < kChannels; ++c)
        for (int y = 0; y < side; ++y)
          for (int x = 0; x < side; ++x) {
            float acc = 0;
            for (int dy = 0; dy < downsample; ++dy)
              for (int dx = 0; dx < downsample; ++dx)
                acc += rec[1 + c * kSide * kSide + (y * downsample + dy) * kSide + x * downsample + dx];
            d.pixels.push_back(acc / (255.0f * downsample * downsample));
          }
    }
  }
  if (d.labels.empty()) throw DataError("no CIFAR records read from " + files.front().parent_path().string());
  return d;
}

}  // namespace

DatasetSplits load_cifar10_binary(const fs::path& dir, int downsample, int train_per_class,
                                  int val_per_class) {
  if (downsample != 1 && downsample != 2 && downsample != 4) throw ConfigError("CIFAR downsample must be 1, 2 or 4");
  std::vector<fs::path> train;
  for (int i = 1; i <= 5; ++i) train.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  DatasetSource src;
  src.kind = DatasetSource::Kind::cifar10;
  src.path = dir.string();
  src.downsample = downsample;
  src.train_per_class = train_per_class;
  src.val_per_class = val_per_class;
  const std::string id = src.descriptor();
  return {read_cifar_batches(train, downsample, train_per_class, id),
          read_cifar_batches({dir / "test_batch.bin"}, downsample, val_per_class, id)};
}

// ---------------------------------------------------------------- PNG tree

namespace {

std::vector<float> read_png_chw(const fs::path& file, int& channels, int& height, int& width) {
  cv::Mat img = cv::imread(file.string(), cv::IMREAD_UNCHANGED);
  if (img.empty()) throw FormatError("cannot decode image " + file.string());
  double scale = 1.0;
  if (img.depth() == CV_8U) scale = 1.0 / 255.0;
  else if (img.depth() == CV_16U) scale = 1.0 / 65535.0;
  else throw FormatError(file.string() + ": unsupported pixel depth");
  if (img.channels() == 4) cv::cvtColor(img, img, cv::COLOR_BGRA2BGR);
  if (img.channels() == 3) cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
  cv::Mat f;
  img.convertTo(f, CV_32F, scale);
  channels = f.channels();
  height = f.rows;
  width = f.cols;
  std::vector<float> out(static_cast<std::size_t>(channels) * height * width);
  for (int y = 0; y < height; ++y) {
    const float* row = f.ptr<float>(y);
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c)
        out[(static_cast<std::size_t>(c) * height + y) * width + x] = row[x * channels + c];
  }
  return out;
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (directories ? e.is_directory() : (e.is_regular_file() && e.path().extension() == ".png"))
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

void append_png(ImageDataset& d, const fs::path& file, int label) {
  int c = 0, h = 0, w = 0;
  auto px = read_png_chw(file, c, h, w);
  if (d.pixels.empty()) d.shape = {c, h, w};
  if (c != d.shape.channels || h != d.shape.height || w != d.shape.width)
    throw DataError(file.string() + ": image shape differs from the rest of the dataset");
  d.pixels.insert(d.pixels.end(), px.begin(), px.end());
  d.labels.push_back(label);
}

}  // namespace

DatasetSplits load_png_directory(const fs::path& root, double val_fraction) {
  if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + root.string());
  DatasetSource src;
  src.kind = DatasetSource::Kind::png_dir;
  src.path = root.string();
  src.val_fraction = val_fraction;
  DatasetSplits out;
  out.train.id = out.val.id = src.descriptor();
  const bool presplit = fs::is_directory(root / "train") && fs::is_directory(root / "val");
  const fs::path train_root = presplit ? root / "train" : root;
  const auto classes = sorted_entries(train_root, true);
  if (classes.size() < 2) throw DataError(root.string() + ": need at least two class subdirectories");
  for (const auto& cdir : classes) {
    out.train.class_names.push_back(cdir.filename().string());
    out.val.class_names.push_back(cdir.filename().string());
  }
  out.train.num_classes = out.val.num_classes = static_cast<int>(classes.size());
  for (int label = 0; label < static_cast<int>(classes.size()); ++label) {
    const auto& cdir = classes[static_cast<std::size_t>(label)];
    if (presplit) {
      for (const auto& f : sorted_entries(cdir, false)) append_png(out.train, f, label);
      const fs::path vdir = root / "val" / cdir.filename();
      if (fs::is_directory(vdir))
        for (const auto& f : sorted_entries(vdir, false)) append_png(out.val, f, label);
    } else {
      const auto files = sorted_entries(cdir, false);
      const int n_val = static_cast<int>(std::floor(files.size() * val_fraction));
      for (int i = 0; i < static_cast<int>(files.size()); ++i)
        append_png(i < static_cast<int>(files.size()) - n_val ? out.train : out.val, files[static_cast<std::size_t>(i)], label);
    }
  }
  if (out.val.pixels.empty()) out.val.shape = out.train.shape;
  out.train.validate();
  out.val.validate();
  return out;
}

// ---------------------------------------------------------------- sources

namespace {

std::map<std::string, std::string> parse_query(const std::string& q) {
  std::map<std::string, std::string> out;
  std::stringstream ss(q);
  std::string item;
  while (std::getline(ss, item, '&')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("dataset option '" + item + "' lacks '='");
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

template <class T>
T take(std::map<std::string, std::string>& opts, const std::string& key, T fallback) {
  auto it = opts.find(key);
  if (it == opts.end()) return fallback;
  T value{};
  if constexpr (std::is_floating_point_v<T>) {
    value = static_cast<T>(std::stod(it->second));
  } else {
    auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), value);
    if (ec != std::errc() || p != it->second.data() + it->second.size())
      throw ConfigError("dataset option " + key + "=" + it->second + " is not a number");
  }
  opts.erase(it);
  return value;
}

}  // namespace

std::string DatasetSource::descriptor() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::procedural:
      os << "procedural?classes=" << procedural.classes << "&size=" << procedural.size
         << "&channels=" << procedural.channels << "&train=" << procedural.train_per_class
         << "&val=" << procedural.val_per_class << "&seed=" << procedural.seed;
      break;
    case Kind::cifar10:
      os << "cifar10:" << path << "?downsample=" << downsample << "&train=" << train_per_class
         << "&val=" << val_per_class;
      break;
    case Kind::png_dir:
      os << "png:" << path << "?val_fraction=" << val_fraction;
      break;
  }
  return os.str();
}

DatasetSource parse_dataset_source(const std::string& text) {
  DatasetSource s;
  const auto qpos = text.find('?');
  const std::string head = text.substr(0, qpos);
  auto opts = parse_query(qpos == std::string::npos ? "" : text.substr(qpos + 1));
  const auto colon = head.find(':');
  const std::string kind = head.substr(0, colon);
  if (colon != std::string::npos) s.path = head.substr(colon + 1);
  if (kind == "procedural") {
    s.kind = DatasetSource::Kind::procedural;
    s.procedural.classes = take(opts, "classes", s.procedural.classes);
    s.procedural.size = take(opts, "size", s.procedural.size);
    s.procedural.channels = take(opts, "channels", s.procedural.channels);
    s.procedural.train_per_class = take(opts, "train", s.procedural.train_per_class);
    s.procedural.val_per_class = take(opts, "val", s.procedural.val_per_class);
    s.procedural.seed = take<std::uint64_t>(opts, "seed", s.procedural.seed);
  } else if (kind == "cifar10") {
    s.kind = DatasetSource::Kind::cifar10;
    s.downsample = take(opts, "downsample", 1);
    s.train_per_class = take(opts, "train", 0);
    s.val_per_class = take(opts, "val", 0);
  } else if (kind == "png") {
    s.kind = DatasetSource::Kind::png_dir;
    s.val_fraction = take(opts, "val_fraction", 0.1);
  } else {
    throw ConfigError("unknown dataset kind '" + kind + "' in '" + text + "'");
  }
  if (s.kind != DatasetSource::Kind::procedural && s.path.empty())
    throw ConfigError("dataset '" + text + "' needs a path");
  if (!opts.empty()) throw ConfigError("unknown dataset option '" + opts.begin()->first + "'");
  return s;
}

DatasetSplits load_dataset(const DatasetSource& source) {
  switch (source.kind) {
    case DatasetSource::Kind::procedural: return make_procedural_dataset(source.procedural);
    case DatasetSource::Kind::cifar10:
      return load_cifar10_binary(source.path, source.downsample, source.train_per_class, source.val_per_class);
    case DatasetSource::Kind::png_dir: return load_png_directory(source.path, source.val_fraction);
  }
  throw ConfigError("unknown dataset kind");
}

// ---------------------------------------------------------------- helpers

Normalization compute_normalization(std::span<const float> pixels, int channels, int spatial) {
  const std::size_t per_image = static_cast<std::size_t>(channels) * spatial;
  if (per_image == 0 || pixels.empty() || pixels.size() % per_image != 0)
    throw DataError("cannot compute normalization of an empty or ragged pixel buffer");
  const std::size_t n = pixels.size() / per_image;
  Normalization norm;
  for (int c = 0; c < channels; ++c) {
    long double sum = 0, sq = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* p = pixels.data() + i * per_image + static_cast<std::size_t>(c) * spatial;
      for (int k = 0; k < spatial; ++k) {
        sum += p[k];
        sq += static_cast<long double>(p[k]) * p[k];
      }
    }
    const long double count = static_cast<long double>(n) * spatial;
    const long double mean = sum / count;
    const long double var = std::max<long double>(sq / count - mean * mean, 1e-12L);
    norm.mean.push_back(static_cast<Real>(mean));
    norm.std.push_back(static_cast<Real>(std::sqrt(var)));
  }
  return norm;
}

Tensor make_batch(const ImageDataset& data, std::span<const int> indices, const Normalization& norm) {
  const auto& s = data.shape;
  if (norm.mean.size() != static_cast<std::size_t>(s.channels)) throw ShapeError("normalization channel count mismatch");
  Tensor batch({static_cast<int>(indices.size()), s.channels, s.height, s.width});
  const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto img = data.image(indices[i]);
    for (int c = 0; c < s.channels; ++c)
      for (std::size_t k = 0; k < plane; ++k)
        batch[(i * s.channels + c) * plane + k] = (img[c * plane + k] - norm.mean[c]) / norm.std[c];
  }
  return batch;
}

ImageDataset random_class_subset(const ImageDataset& data, int per_class, std::uint64_t seed) {
  if (!data.labeled()) throw DataError("class subset needs labels");
  ImageDataset out;
  out.id = data.id + "#subset" + std::to_string(per_class) + "s" + std::to_string(seed);
  out.shape = data.shape;
  out.num_classes = data.num_classes;
  out.class_names = data.class_names;
  for (int c = 0; c < data.num_classes; ++c) {
    auto idx = data.indices_of_class(c);
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(c));
    std::shuffle(idx.begin(), idx.end(), rng);
    if (static_cast<int>(idx.size()) < per_class)
      throw DataError("class " + std::to_string(c) + " has fewer than " + std::to_string(per_class) + " images");
    for (int i = 0; i < per_class; ++i) {
      const auto img = data.image(idx[static_cast<std::size_t>(i)]);
      out.pixels.insert(out.pixels.end(), img.begin(), img.end());
      out.labels.push_back(c);
    }
  }
  return out;
}

}  // namespace scdd
