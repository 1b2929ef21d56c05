#include "scdd/relabel/relabel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "scdd/core/checksum.hpp"
#include "scdd/core/errors.hpp"
#include "scdd/netcore/checkpoint.hpp"
#include "scdd/netcore/losses.hpp"

namespace scdd {

namespace fs = std::filesystem;

void RelabelConfig::validate() const {
  if (n_crops < 1) throw ConfigError("relabel n_crops must be >= 1");
  rrc.validate();
  if (flip_p < 0 || flip_p > 1) throw ConfigError("relabel flip_p must lie in [0, 1]");
  if (!(temperature > 0)) throw ConfigError("relabel temperature must be positive");
}

void to_json(nlohmann::json& j, const RelabelConfig& c) {
  j = {{"n_crops", c.n_crops}, {"rrc", c.rrc}, {"flip_p", c.flip_p}, {"temperature", c.temperature}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, RelabelConfig& c) {
  RelabelConfig d;
  c.n_crops = j.value("n_crops", d.n_crops);
  c.rrc = j.contains("rrc") ? j.at("rrc").get<RrcParams>() : d.rrc;
  c.flip_p = j.value("flip_p", d.flip_p);
  c.temperature = j.value("temperature", d.temperature);
  c.seed = j.value("seed", d.seed);
}

std::vector<CropRecord> generate_crops(int image_id, int height, int width, int n, const RrcParams& rrc,
                                       double flip_p, std::uint64_t seed) {
  if (n < 1) throw ConfigError("generate_crops needs n >= 1");
  rrc.validate();
  Rng rng = make_rng(seed, mix_seed(0x72656c6162ULL, static_cast<std::uint64_t>(image_id)));
  std::vector<CropRecord> out;
  for (int i = 0; i < n; ++i) {
    CropRecord r;
    r.image_id = image_id;
    r.crop_index = i;
    r.region = sample_rrc(rng, height, width, rrc);
    r.flip = uniform(rng) < flip_p;
    out.push_back(r);
  }
  return out;
}

Tensor crop_batch(std::span<const double> pixels, const InputShape& shape, std::span<const CropRecord> crops,
                  const Normalization& norm) {
  const int C = shape.channels, H = shape.height, W = shape.width;
  const std::size_t plane = static_cast<std::size_t>(H) * W, per = plane * C;
  if (pixels.size() != per) throw ShapeError("crop_batch: image does not match shape");
  if (norm.mean.size() != static_cast<std::size_t>(C)) throw ShapeError("crop_batch: normalization channel mismatch");
  Tensor out({static_cast<int>(crops.size()), C, H, W});
  for (std::size_t i = 0; i < crops.size(); ++i) {
    const auto& r = crops[i].region;
    if (r.w < 1 || r.h < 1 || r.x < 0 || r.y < 0 || r.x + r.w > W || r.y + r.h > H)
      throw DataError("crop region lies outside the image");
    std::span<Real> dst(out.data() + i * per, per);
    kernels::crop_resize_bilinear(pixels, C, H, W, r, crops[i].flip, H, W, dst);
    for (int c = 0; c < C; ++c)
      for (std::size_t k = 0; k < plane; ++k) dst[c * plane + k] = (dst[c * plane + k] - norm.mean[c]) / norm.std[c];
  }
  return out;
}

std::vector<std::vector<float>> soft_labels(TrainedBackbone& teacher, std::span<const double> pixels,
                                            std::span<const CropRecord> crops, double temperature) {
  if (!teacher.is_aligned()) throw StateError("soft labels need an aligned teacher");
  if (!(temperature > 0)) throw ConfigError("soft-label temperature must be positive");
  const Tensor x = crop_batch(pixels, teacher.spec.input_shape, crops, teacher.provenance.normalization);
  const Tensor p = softmax(teacher.forward(x, Mode::eval), temperature);
  const int K = p.dim(1);
  std::vector<std::vector<float>> out(crops.size(), std::vector<float>(static_cast<std::size_t>(K)));
  for (std::size_t i = 0; i < crops.size(); ++i)
    for (int k = 0; k < K; ++k) out[i][static_cast<std::size_t>(k)] = static_cast<float>(p[i * K + k]);
  return out;
}

void DistilledDataset::validate() const {
  if (images.size() != labels.size()) throw DataError("distilled images and labels disagree in count");
  if (crops.size() != soft_labels.size()) throw DataError("every crop needs exactly one soft label");
  const int n = manifest.relabel.n_crops;
  if (crops.size() != images.size() * static_cast<std::size_t>(n))
    throw DataError("crop count differs from images x n_crops");
  for (const auto& img : images)
    if (!(img.shape == shape)) throw DataError("distilled image shape mismatch");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw DataError("distilled label out of range");
  for (std::size_t i = 0; i < crops.size(); ++i) {
    const auto& c = crops[i];
    if (c.image_id != static_cast<int>(i) / n || c.crop_index != static_cast<int>(i) % n)
      throw DataError("crops are not grouped by image in order");
    const auto& r = c.region;
    if (r.w < 1 || r.h < 1 || r.x < 0 || r.y < 0 || r.x + r.w > shape.width || r.y + r.h > shape.height)
      throw DataError("crop " + std::to_string(i) + " lies outside its image");
    const auto& p = soft_labels[i];
    if (p.size() != static_cast<std::size_t>(num_classes)) throw DataError("soft label length differs from class count");
    double sum = 0;
    for (float v : p) {
      if (!(v >= 0)) throw DataError("soft label " + std::to_string(i) + " has a negative entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-5) throw DataError("soft label " + std::to_string(i) + " does not sum to 1");
  }
}

DistilledDataset relabel_images(TrainedBackbone& teacher, std::vector<Image16> images, std::vector<int> labels,
                                const RelabelConfig& cfg, const RecoveryConfig& recovery) {
  cfg.validate();
  if (!teacher.is_aligned()) throw StateError("relabeling needs an aligned teacher");
  if (images.size() != labels.size()) throw DataError("images and labels disagree in count");
  DistilledDataset d;
  d.shape = teacher.spec.input_shape;
  d.num_classes = teacher.spec.num_classes;
  d.manifest.teacher_spec = teacher.spec;
  d.manifest.teacher_provenance = teacher.provenance;
  d.manifest.recovery = recovery;
  d.manifest.relabel = cfg;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!(images[i].shape == d.shape)) throw ShapeError("image " + std::to_string(i) + " does not match the teacher input");
    auto crops = generate_crops(static_cast<int>(i), d.shape.height, d.shape.width, cfg.n_crops, cfg.rrc, cfg.flip_p,
                                cfg.seed);
    auto probs = soft_labels(teacher, dequantize16(images[i]), crops, cfg.temperature);
    d.crops.insert(d.crops.end(), crops.begin(), crops.end());
    for (auto& p : probs) d.soft_labels.push_back(std::move(p));
  }
  d.images = std::move(images);
  d.labels = std::move(labels);
  d.validate();
  return d;
}

void read_recovered_images(const fs::path& dir, std::vector<Image16>& images, std::vector<int>& labels) {
  const fs::path root = dir / "images";
  if (!fs::is_directory(root)) throw IoError("no images/ directory under " + dir.string());
  static const std::regex class_re("class_(\\d+)"), image_re("img_(\\d+)\\.png");
  std::map<int, std::map<int, fs::path>> found;
  for (const auto& cdir : fs::directory_iterator(root)) {
    std::smatch m;
    const std::string cname = cdir.path().filename().string();
    if (!cdir.is_directory() || !std::regex_match(cname, m, class_re)) continue;
    const int c = std::stoi(m[1]);
    for (const auto& f : fs::directory_iterator(cdir.path())) {
      std::smatch mi;
      const std::string fname = f.path().filename().string();
      if (std::regex_match(fname, mi, image_re)) found[c][std::stoi(mi[1])] = f.path();
    }
  }
  images.clear();
  labels.clear();
  for (const auto& [c, files] : found)
    for (const auto& [i, f] : files) {
      images.push_back(read_png16(f));
      labels.push_back(c);
    }
  if (images.empty()) throw DataError("no images found under " + root.string());
}

namespace {

std::string image_path(int cls, int index) {
  return "images/class_" + std::to_string(cls) + "/img_" + std::to_string(index) + ".png";
}

std::vector<std::string> image_paths(const std::vector<int>& labels) {
  std::map<int, int> counter;
  std::vector<std::string> out;
  for (int c : labels) out.push_back(image_path(c, counter[c]++));
  return out;
}

std::string encode_labels(const std::vector<std::vector<float>>& labels) {
  static_assert(std::endian::native == std::endian::little, "label files are little-endian");
  std::string out;
  for (const auto& v : labels) {
    const auto len = static_cast<std::uint32_t>(v.size());
    out.append(reinterpret_cast<const char*>(&len), sizeof len);
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
  }
  return out;
}

std::vector<std::vector<float>> decode_labels(const std::string& bytes) {
  std::vector<std::vector<float>> out;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    std::uint32_t len = 0;
    if (pos + sizeof len > bytes.size()) throw FormatError("labels/labels.bin: truncated length prefix");
    std::memcpy(&len, bytes.data() + pos, sizeof len);
    pos += sizeof len;
    if (pos + len * sizeof(float) > bytes.size()) throw FormatError("labels/labels.bin: truncated label vector");
    std::vector<float> v(len);
    std::memcpy(v.data(), bytes.data() + pos, len * sizeof(float));
    pos += len * sizeof(float);
    out.push_back(std::move(v));
  }
  return out;
}

std::string encode_crops(const std::vector<CropRecord>& crops) {
  std::ostringstream os;
  os << "image_id,crop_index,x,y,w,h,flip\n";
  for (const auto& c : crops)
    os << c.image_id << ',' << c.crop_index << ',' << c.region.x << ',' << c.region.y << ',' << c.region.w << ','
       << c.region.h << ',' << (c.flip ? 1 : 0) << '\n';
  return os.str();
}

std::vector<CropRecord> decode_crops(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "image_id,crop_index,x,y,w,h,flip") throw FormatError("crops.csv: unexpected header");
  std::vector<CropRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    CropRecord c;
    int flip = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%d,%d,%d,%d,%d", &c.image_id, &c.crop_index, &c.region.x, &c.region.y,
                    &c.region.w, &c.region.h, &flip) != 7)
      throw FormatError("crops.csv: malformed row '" + line + "'");
    c.flip = flip != 0;
    out.push_back(c);
  }
  return out;
}

std::string read_bytes(const fs::path& f) {
  std::ifstream in(f, std::ios::binary);
  if (!in) throw FormatError("missing file " + f.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_bytes(const fs::path& f, const std::string& bytes) {
  fs::create_directories(f.parent_path());
  std::ofstream out(f, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write " + f.string());
}

const nlohmann::json& field(const nlohmann::json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw FormatError("manifest.json: missing field '" + where + key + "'");
  return j.at(key);
}

}  // namespace

void pack_distilled(const DistilledDataset& data, const fs::path& dir) {
  data.validate();
  fs::create_directories(dir);
  const auto paths = image_paths(data.labels);
  nlohmann::json images = nlohmann::json::array();
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    const fs::path file = dir / paths[i];
    // recovered images already on disk are kept as they are
    bool same = false;
    if (fs::exists(file)) {
      const Image16 existing = read_png16(file);
      same = existing.shape == data.images[i].shape && existing.pixels == data.images[i].pixels;
    }
    if (!same) write_png16(file, data.images[i]);
    images.push_back({{"id", i}, {"class", data.labels[i]}, {"file", paths[i]}, {"sha256", sha256_file(dir / paths[i])}});
  }
  const std::string labels = encode_labels(data.soft_labels);
  const std::string crops = encode_crops(data.crops);
  write_bytes(dir / "labels" / "labels.bin", labels);
  write_bytes(dir / "crops.csv", crops);
  const auto& m = data.manifest;
  nlohmann::json manifest = {
      {"format", kDistilledFormat},
      {"num_classes", data.num_classes},
      {"shape", {data.shape.channels, data.shape.height, data.shape.width}},
      {"teacher", {{"spec", m.teacher_spec}, {"provenance", provenance_to_json(m.teacher_provenance)}}},
      {"recovery", m.recovery},
      {"relabel", m.relabel},
      {"images", images},
      {"files", {{"labels/labels.bin", sha256_hex(labels)}, {"crops.csv", sha256_hex(crops)}}}};
  const fs::path tmp = dir / "manifest.json.tmp";
  write_bytes(tmp, manifest.dump(2) + "\n");
  fs::rename(tmp, dir / "manifest.json");
}

DistilledDataset load_distilled(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw FormatError("missing manifest.json in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_bytes(mpath));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest.json: not valid JSON (") + e.what() + ")");
  }
  const auto& format = field(j, "format", "");
  if (format != kDistilledFormat) throw FormatError("manifest.json: field 'format' is not " + std::string(kDistilledFormat));
  DistilledDataset d;
  try {
    d.num_classes = field(j, "num_classes", "").get<int>();
    const auto& shape = field(j, "shape", "");
    d.shape = {shape.at(0).get<int>(), shape.at(1).get<int>(), shape.at(2).get<int>()};
    const auto& teacher = field(j, "teacher", "");
    d.manifest.teacher_spec = field(teacher, "spec", "teacher.").get<NetworkSpec>();
    const auto& prov = field(teacher, "provenance", "teacher.");
    for (const char* key : {"objective", "epochs", "dataset_id", "seed", "normalization"}) field(prov, key, "teacher.provenance.");
    d.manifest.teacher_provenance = provenance_from_json(prov);
    if (!d.manifest.teacher_provenance.complete()) throw FormatError("manifest.json: field 'teacher.provenance' is incomplete");
    d.manifest.recovery = field(j, "recovery", "").get<RecoveryConfig>();
    d.manifest.relabel = field(j, "relabel", "").get<RelabelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest.json: malformed field (") + e.what() + ")");
  }
  const auto& files = field(j, "files", "");
  for (const std::string name : {"labels/labels.bin", "crops.csv"}) {
    const std::string expected = field(files, name, "files.").get<std::string>();
    const std::string bytes = read_bytes(dir / name);
    if (sha256_hex(bytes) != expected) throw FormatError("checksum mismatch for " + name);
    if (name == "crops.csv") d.crops = decode_crops(bytes);
    else d.soft_labels = decode_labels(bytes);
  }
  for (const auto& img : field(j, "images", "")) {
    const std::string file = field(img, "file", "images[].").get<std::string>();
    if (sha256_file(dir / file) != field(img, "sha256", "images[].").get<std::string>())
      throw FormatError("checksum mismatch for " + file);
    d.images.push_back(read_png16(dir / file));
    d.labels.push_back(field(img, "class", "images[].").get<int>());
  }
  d.manifest.format = format.get<std::string>();
  try {
    d.validate();
  } catch (const DataError& e) {
    throw FormatError(std::string("distilled dataset invalid: ") + e.what());
  }
  return d;
}

}  // namespace scdd
