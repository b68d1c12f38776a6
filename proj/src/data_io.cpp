#include "misd/data_io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <random>
#include <sstream>

#include "misd/concept_world.hpp"
#include "misd/errors.hpp"
#include "misd/rng.hpp"

namespace misd {
namespace {

static_assert(std::endian::native == std::endian::little,
              "binary formats are read and written on little-endian hosts only");

constexpr std::string_view kEmbeddingMagic = "MISDEMB1";
constexpr std::string_view kImageMagic = "MISDIMG1";

// Appends little-endian fields to a byte buffer.
class ByteWriter {
 public:
  void raw(std::string_view bytes) { out_.append(bytes); }
  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void f32(float v) { put(v); }
  const std::string& bytes() const noexcept { return out_; }

 private:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  std::string out_;
};

// Bounds-checked reader; running past the end is a length error.
class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::string_view raw(std::size_t n) {
    need(n);
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint16_t u16() { return get<std::uint16_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  float f32() { return get<float>(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw LengthError(what_ + ": file ends early (needs " + std::to_string(pos_ + n) +
                        " bytes, has " + std::to_string(bytes_.size()) + ")");
    }
  }
  void expect_end() const {
    if (remaining() != 0) {
      throw LengthError(what_ + ": " + std::to_string(remaining()) +
                        " trailing bytes after the declared payload");
    }
  }

 private:
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_binary(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::uint32_t checked_u32(std::size_t v, const char* field) {
  if (v > 0xffffffffULL) throw DataError(std::string(field) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

void write_names(ByteWriter& w, const std::vector<std::string>& names) {
  for (const auto& n : names) {
    if (n.size() > 0xffff) throw DataError("class name longer than 65535 bytes");
    w.u16(static_cast<std::uint16_t>(n.size()));
    w.raw(n);
  }
}

std::vector<std::string> read_names(ByteReader& r, std::uint32_t count) {
  std::vector<std::string> names;
  names.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    names.emplace_back(r.raw(len));
  }
  return names;
}

std::vector<int> read_labels(ByteReader& r, std::uint32_t count, std::uint32_t classes,
                             const std::string& what) {
  std::vector<int> labels(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t l = r.u32();
    if (l >= classes) {
      throw DataError(what + ": label " + std::to_string(l) + " of sample " + std::to_string(i) +
                      " is not below the class count " + std::to_string(classes));
    }
    labels[i] = static_cast<int>(l);
  }
  return labels;
}

void check_magic(ByteReader& r, std::string_view magic, const std::string& what) {
  if (r.remaining() < magic.size() || r.raw(magic.size()) != magic) {
    throw FormatError(what + ": missing " + std::string(magic) + " magic");
  }
}

// Multiplies header fields, refusing products that cannot describe a file.
std::size_t payload_floats(std::initializer_list<std::uint32_t> dims, const std::string& what) {
  constexpr std::uint64_t kLimit = std::uint64_t{1} << 40;
  std::uint64_t n = 1;
  for (auto d : dims) {
    if (d != 0 && n > kLimit / d) {
      throw LengthError(what + ": header declares an implausibly large payload");
    }
    n *= d;
  }
  return static_cast<std::size_t>(n);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_commas(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

[[noreturn]] void parse_fail(std::size_t line, const std::string& msg) {
  throw ParseError("line " + std::to_string(line) + ": " + msg);
}

double parse_confidence(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    parse_fail(line, "confidence '" + s + "' is not a number");
  }
  if (!(v > 0.0 && v <= 1.0)) parse_fail(line, "confidence " + s + " is outside (0, 1]");
  return v;
}

long parse_int(const std::string& s, std::size_t line, const char* field) {
  long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    parse_fail(line, std::string(field) + " '" + s + "' is not an integer");
  }
  return v;
}

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

void validate(const ImageDataset& ds) {
  if (ds.labels.size() != ds.images.size()) {
    throw DataError("image dataset has " + std::to_string(ds.images.size()) + " images but " +
                    std::to_string(ds.labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const Image& img = ds.images[i];
    const Image& first = ds.images.front();
    if (img.height != first.height || img.width != first.width || img.channels != first.channels) {
      throw ShapeError("image " + std::to_string(i) + " differs in shape from image 0");
    }
    if (img.pixels.size() != img.index(img.height, 0, 0)) {
      throw ShapeError("image " + std::to_string(i) + " has the wrong pixel count");
    }
    for (double p : img.pixels) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw DataError("image " + std::to_string(i) + " has a pixel outside [0, 1]");
      }
    }
    if (ds.labels[i] < 0 || ds.labels[i] >= ds.num_classes()) {
      throw DataError("label of image " + std::to_string(i) + " out of range");
    }
  }
}

ViewSet EmbeddingDataset::view_set(std::size_t sample) const {
  ViewSet set;
  set.sample_id = sample;
  set.label = labels.at(sample);
  for (int j = 0; j < k; ++j) set.views.push_back(view(sample, j));
  return set;
}

void validate(const EmbeddingDataset& ds) {
  if (ds.k < 1) throw DataError("embedding dataset needs k >= 1");
  if (ds.dim < 1) throw DataError("embedding dataset needs d >= 1");
  if (ds.views.size() != ds.count() * static_cast<std::size_t>(ds.k)) {
    throw DataError("embedding dataset holds " + std::to_string(ds.views.size()) +
                    " views, expected count * k = " +
                    std::to_string(ds.count() * static_cast<std::size_t>(ds.k)));
  }
  for (std::size_t i = 0; i < ds.views.size(); ++i) {
    if (ds.views[i].size() != ds.dim) throw ShapeError("embedding width differs from d");
    if (!ds.views[i].allFinite()) {
      throw DataError("non-finite value in view " + std::to_string(i % ds.k) + " of sample " +
                      std::to_string(i / ds.k));
    }
  }
  for (int l : ds.labels) {
    if (l < 0 || l >= ds.num_classes()) throw DataError("embedding label out of range");
  }
}

std::vector<std::string> synth_class_names(int num_classes) {
  std::vector<std::string> names;
  for (int c = 0; c < num_classes; ++c) {
    std::ostringstream s;
    s << "concept_" << std::setw(2) << std::setfill('0') << c;
    names.push_back(s.str());
  }
  return names;
}

ImageDataset gen_synth(int num_classes, int per_class, std::uint64_t seed,
                       const SynthConfig& config) {
  if (num_classes < 2) {
    throw DegenerateTaskError("gen_synth needs at least two classes, got " +
                              std::to_string(num_classes));
  }
  if (per_class < 1) throw ConfigError("gen_synth needs per_class >= 1");
  if (config.image_size < 2 || config.channels < 1) throw ConfigError("invalid synth geometry");
  if (!(config.noise_amplitude >= 0.0 && config.noise_amplitude <= 1.0)) {
    throw ConfigError("noise amplitude must lie in [0, 1]");
  }

  const ConceptWorld world(config.world_seed);
  const int size = config.image_size;
  const int side = size / 2;
  ImageDataset ds;
  ds.class_names = synth_class_names(num_classes);
  std::uniform_real_distribution<double> noise(0.0, config.noise_amplitude);
  std::uniform_int_distribution<int> pos(0, size - side);
  for (int c = 0; c < num_classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      const auto index = static_cast<std::uint64_t>(c) * static_cast<std::uint64_t>(per_class) +
                         static_cast<std::uint64_t>(i);
      Rng rng = make_rng(seed, "synth-image", index);
      Image img(size, size, config.channels);
      for (double& p : img.pixels) p = noise(rng);
      const int x0 = pos(rng);
      const int y0 = pos(rng);
      world.paint_blob(img, ds.class_names[static_cast<std::size_t>(c)], x0, y0, side);
      ds.images.push_back(std::move(img));
      ds.labels.push_back(c);
      ds.foreground.push_back({x0, y0, side, side});
    }
  }
  return ds;
}

ViewSet embed_views(const Image& image, std::size_t sample_id, int label,
                    const VisionEncoder& encoder, const CropConfig& crops, std::uint64_t seed) {
  ViewSet set;
  set.sample_id = sample_id;
  set.label = label;
  if (crops.k == 1) {
    set.views.push_back(encoder.encode(image));
    return set;
  }
  Rng rng = make_rng(seed, "crops", sample_id);
  for (const Image& crop : random_crops(image, crops, encoder.geometry().image_size, rng)) {
    set.views.push_back(encoder.encode(crop));
  }
  return set;
}

EmbeddingDataset embed_dataset(const ImageDataset& dataset, const VisionEncoder& encoder,
                               const CropConfig& crops, std::uint64_t seed) {
  validate(dataset);
  if (crops.k < 1) throw ConfigError("embed_dataset needs k >= 1");
  EmbeddingDataset out;
  out.k = crops.k;
  out.dim = encoder.embed_dim();
  out.labels = dataset.labels;
  out.class_names = dataset.class_names;
  out.provenance = Provenance::toy_encoder;
  out.views.reserve(dataset.size() * static_cast<std::size_t>(crops.k));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    ViewSet set = embed_views(dataset.images[i], i, dataset.labels[i], encoder, crops, seed);
    for (auto& v : set.views) out.views.push_back(std::move(v));
  }
  return out;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingDataset& ds) {
  validate(ds);
  ByteWriter w;
  w.raw(kEmbeddingMagic);
  w.u32(checked_u32(ds.count(), "count"));
  w.u32(checked_u32(static_cast<std::size_t>(ds.k), "k"));
  w.u32(checked_u32(static_cast<std::size_t>(ds.dim), "d"));
  w.u32(checked_u32(ds.class_names.size(), "C"));
  for (const auto& v : ds.views) {
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      const float f = static_cast<float>(v[j]);
      if (!std::isfinite(f)) throw DataError("embedding value overflows float32");
      w.f32(f);
    }
  }
  for (int l : ds.labels) w.u32(static_cast<std::uint32_t>(l));
  write_names(w, ds.class_names);
  write_binary(path, w.bytes());
}

EmbeddingDataset read_embeddings(const std::filesystem::path& path) {
  const std::string what = "embedding file '" + path.string() + "'";
  const std::string bytes = read_binary(path);
  ByteReader r(bytes, what);
  check_magic(r, kEmbeddingMagic, what);
  const std::uint32_t count = r.u32();
  const std::uint32_t k = r.u32();
  const std::uint32_t d = r.u32();
  const std::uint32_t classes = r.u32();
  if (k < 1 || d < 1) throw FormatError(what + ": k and d must be positive");
  const std::size_t floats = payload_floats({count, k, d}, what);
  r.need(floats * sizeof(float) + std::size_t{count} * sizeof(std::uint32_t));

  EmbeddingDataset ds;
  ds.k = static_cast<int>(k);
  ds.dim = static_cast<int>(d);
  ds.views.reserve(std::size_t{count} * k);
  for (std::size_t v = 0; v < std::size_t{count} * k; ++v) {
    Embedding e(d);
    for (std::uint32_t j = 0; j < d; ++j) {
      const float f = r.f32();
      if (!std::isfinite(f)) {
        throw DataError(what + ": non-finite value in view " + std::to_string(v % k) +
                        " of sample " + std::to_string(v / k));
      }
      e[j] = static_cast<double>(f);
    }
    ds.views.push_back(std::move(e));
  }
  ds.labels = read_labels(r, count, classes, what);
  ds.class_names = read_names(r, classes);
  r.expect_end();
  return ds;
}

void write_images(const std::filesystem::path& path, const ImageDataset& ds) {
  validate(ds);
  if (ds.images.empty()) throw DataError("refusing to write an empty image dataset");
  const Image& first = ds.images.front();
  ByteWriter w;
  w.raw(kImageMagic);
  w.u32(checked_u32(ds.size(), "count"));
  w.u32(static_cast<std::uint32_t>(first.height));
  w.u32(static_cast<std::uint32_t>(first.width));
  w.u32(static_cast<std::uint32_t>(first.channels));
  w.u32(checked_u32(ds.class_names.size(), "C"));
  for (const Image& img : ds.images) {
    for (double p : img.pixels) w.f32(static_cast<float>(p));
  }
  for (int l : ds.labels) w.u32(static_cast<std::uint32_t>(l));
  write_names(w, ds.class_names);
  write_binary(path, w.bytes());
}

ImageDataset read_images(const std::filesystem::path& path) {
  const std::string what = "image file '" + path.string() + "'";
  const std::string bytes = read_binary(path);
  ByteReader r(bytes, what);
  check_magic(r, kImageMagic, what);
  const std::uint32_t count = r.u32();
  const std::uint32_t h = r.u32();
  const std::uint32_t w = r.u32();
  const std::uint32_t ch = r.u32();
  const std::uint32_t classes = r.u32();
  if (h < 1 || w < 1 || ch < 1) throw FormatError(what + ": image dimensions must be positive");
  const std::size_t floats = payload_floats({count, h, w, ch}, what);
  r.need(floats * sizeof(float) + std::size_t{count} * sizeof(std::uint32_t));

  ImageDataset ds;
  ds.images.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Image img(static_cast<int>(h), static_cast<int>(w), static_cast<int>(ch));
    for (double& p : img.pixels) {
      const float f = r.f32();
      if (!(f >= 0.0f && f <= 1.0f)) {
        throw DataError(what + ": pixel of image " + std::to_string(i) +
                        " is non-finite or outside [0, 1]");
      }
      p = static_cast<double>(f);
    }
    ds.images.push_back(std::move(img));
  }
  ds.labels = read_labels(r, count, classes, what);
  ds.class_names = read_names(r, classes);
  r.expect_end();
  return ds;
}

void write_scores(const std::filesystem::path& path, std::span<const ScoredPrediction> preds) {
  std::string text = "confidence,predicted,label\n";
  for (const auto& p : preds) {
    text += format_double(p.confidence) + "," + std::to_string(p.predicted) + "," +
            std::to_string(p.label) + "\n";
  }
  write_text_file(path, text);
}

void write_binary_scores(const std::filesystem::path& path, std::span<const Outcome> outcomes) {
  std::string text = "confidence,correct\n";
  for (const auto& o : outcomes) {
    text += format_double(o.confidence) + (o.correct ? ",1\n" : ",0\n");
  }
  write_text_file(path, text);
}

ScoresFile parse_scores(std::string_view text) {
  ScoresFile out;
  std::size_t line_no = 0;
  bool have_header = false;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string line = trim(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    if (!have_header) {
      if (fields == std::vector<std::string>{"confidence", "predicted", "label"}) {
        out.binary = false;
      } else if (fields == std::vector<std::string>{"confidence", "correct"}) {
        out.binary = true;
      } else {
        parse_fail(line_no,
                   "expected header 'confidence,predicted,label' or 'confidence,correct'");
      }
      have_header = true;
      continue;
    }
    const std::size_t want = out.binary ? 2 : 3;
    if (fields.size() != want) {
      parse_fail(line_no, "expected " + std::to_string(want) + " fields, found " +
                              std::to_string(fields.size()));
    }
    const double conf = parse_confidence(fields[0], line_no);
    if (out.binary) {
      const long c = parse_int(fields[1], line_no, "correct flag");
      if (c != 0 && c != 1) parse_fail(line_no, "correct flag must be 0 or 1");
      out.outcomes.push_back({conf, c == 1});
    } else {
      const long pred = parse_int(fields[1], line_no, "predicted class");
      const long label = parse_int(fields[2], line_no, "label");
      if (pred < 0 || label < 0 || pred > 0x7fffffff || label > 0x7fffffff) {
        parse_fail(line_no, "class indices must be nonnegative 32-bit integers");
      }
      out.predictions.push_back({conf, static_cast<int>(pred), static_cast<int>(label)});
    }
  }
  if (!have_header) parse_fail(line_no, "empty scores file (no header)");
  if (out.binary ? out.outcomes.empty() : out.predictions.empty()) {
    parse_fail(line_no, "scores file has a header but no rows");
  }
  if (!out.binary) out.outcomes = to_outcomes(out.predictions);
  return out;
}

ScoresFile read_scores(const std::filesystem::path& path) {
  try {
    return parse_scores(read_text_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string report_to_json(const MisDReport& r) {
  nlohmann::ordered_json j;
  j["count"] = r.count;
  j["correct"] = r.correct;
  j["acc"] = optional_json(r.acc);
  j["fpr95"] = optional_json(r.fpr95);
  j["aurc"] = optional_json(r.aurc);
  j["e_aurc"] = optional_json(r.e_aurc);
  j["auroc"] = optional_json(r.auroc);
  j["aupr_success"] = optional_json(r.aupr_success);
  j["aupr_error"] = optional_json(r.aupr_error);
  j["notes"] = r.notes;
  return j.dump(2) + "\n";
}

MisDReport report_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report is not valid JSON: ") + e.what());
  }
  MisDReport r;
  try {
    r.count = j.at("count").get<std::size_t>();
    r.correct = j.at("correct").get<std::size_t>();
    r.acc = optional_from(j, "acc");
    r.fpr95 = optional_from(j, "fpr95");
    r.aurc = optional_from(j, "aurc");
    r.e_aurc = optional_from(j, "e_aurc");
    r.auroc = optional_from(j, "auroc");
    r.aupr_success = optional_from(j, "aupr_success");
    r.aupr_error = optional_from(j, "aupr_error");
    if (j.contains("notes")) r.notes = j.at("notes").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed report: ") + e.what());
  }
  return r;
}

void write_report(const std::filesystem::path& path, const MisDReport& report) {
  write_text_file(path, report_to_json(report));
}

MisDReport read_report(const std::filesystem::path& path) {
  return report_from_json(read_text_file(path));
}

std::string report_csv_header() { return "acc,fpr95,aurc,e_aurc,auroc,aupr_s,aupr_e"; }

std::string report_csv_row(const MisDReport& r) {
  std::string row;
  for (const auto* f : {&r.acc, &r.fpr95, &r.aurc, &r.e_aurc, &r.auroc, &r.aupr_success,
                        &r.aupr_error}) {
    if (!row.empty()) row += ",";
    row += *f ? format_double(**f) : "NA";
  }
  return row;
}

std::string read_text_file(const std::filesystem::path& path) { return read_binary(path); }

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  write_binary(path, text);
}

}  // namespace misd
