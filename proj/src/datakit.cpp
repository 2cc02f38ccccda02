#include "hspk/datakit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "hspk/error.hpp"
#include "hspk/io.hpp"
#include "hspk/npy.hpp"
#include "hspk/rng.hpp"

namespace hspk {

namespace {

constexpr char kMagic[5] = {'H', 'S', 'P', 'K', '1'};
constexpr std::uint64_t kLabelStream = 0x1abe1ULL;
constexpr std::uint64_t kSplitStream = 0x5b117ULL;

struct Shape2d {
  bool ellipse;
  double cy, cx, a, b, angle, intensity, grade, grade_dir, softness;
};

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

Image gen_synthetic_label(std::size_t extent, std::uint64_t seed, std::size_t index) {
  if (extent == 0) throw ContractError("gen_synthetic_label: extent must be positive");
  Rng rng(derive_seed(seed, kLabelStream + index));
  const double e = static_cast<double>(extent);
  const std::size_t count = 2 + static_cast<std::size_t>(rng.below(3));
  std::vector<Shape2d> shapes(count);
  for (auto& s : shapes) {
    s.ellipse = rng.uniform() < 0.6;
    s.cy = rng.uniform(0.2, 0.8) * e;
    s.cx = rng.uniform(0.2, 0.8) * e;
    s.a = rng.uniform(0.08, 0.28) * e;
    s.b = rng.uniform(0.08, 0.28) * e;
    s.angle = rng.uniform(0.0, std::numbers::pi);
    s.intensity = rng.uniform(0.3, 1.0);
    s.grade = rng.uniform(0.0, 0.3);
    s.grade_dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
    s.softness = rng.uniform(0.5, 1.5);
  }
  Image out(extent, extent, kLabelBackground);
  for (std::size_t y = 0; y < extent; ++y) {
    for (std::size_t x = 0; x < extent; ++x) {
      double v = kLabelBackground;
      const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
      for (const auto& s : shapes) {
        const double c = std::cos(s.angle), sn = std::sin(s.angle);
        const double u = c * (px - s.cx) + sn * (py - s.cy);
        const double w = -sn * (px - s.cx) + c * (py - s.cy);
        // Approximate signed distance to the boundary, in pixels.
        double dist;
        if (s.ellipse) {
          dist = (std::sqrt((u / s.a) * (u / s.a) + (w / s.b) * (w / s.b)) - 1.0) * std::min(s.a, s.b);
        } else {
          dist = std::max(std::abs(u) - s.a, std::abs(w) - s.b);
        }
        const double alpha = logistic(-dist / s.softness);
        const double t = (std::cos(s.grade_dir) * u / s.a + std::sin(s.grade_dir) * w / s.b);
        const double level = s.intensity * (1.0 - s.grade * 0.5 * (1.0 + std::clamp(t, -1.0, 1.0)));
        v = v * (1.0 - alpha) + level * alpha;
      }
      out.at(y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

std::vector<Image> gen_synthetic_labels(std::size_t n, std::size_t extent, std::uint64_t seed) {
  if (n == 0) throw ContractError("gen_synthetic_labels: n must be at least 1");
  std::vector<Image> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(gen_synthetic_label(extent, seed, i));
  return out;
}

double foreground_fraction(const Image& image, float level) {
  if (image.size() == 0) return 0.0;
  std::size_t n = 0;
  for (float v : image.pixels) n += v > level;
  return static_cast<double>(n) / static_cast<double>(image.size());
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

void SplitRatios::validate() const {
  if (train < 0 || val < 0 || test < 0) throw ConfigError("split ratios must be non-negative");
  if (std::abs(train + val + test - 1.0) > 1e-6) {
    throw ConfigError("split ratios must sum to 1 (got " + format_number(train + val + test) + ")");
  }
}

std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& ratios) {
  ratios.validate();
  const double total = ratios.train + ratios.val + ratios.test;
  const std::array<double, 3> r{ratios.train, ratios.val, ratios.test};
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double q = static_cast<double>(n) * r[i] / total;
    // The epsilon keeps exact quotients such as 850 from landing on 849.999...
    counts[i] = static_cast<std::size_t>(std::floor(q + 1e-9));
    rem[i] = q - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[i] > rem[best]) best = i;
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  return counts;
}

std::vector<Split> assign_splits(std::size_t n, const SplitRatios& ratios, std::uint64_t seed) {
  const auto counts = split_counts(n, ratios);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, kSplitStream));
  rng.shuffle(order.begin(), order.end());
  std::vector<Split> out(n);
  for (std::size_t pos = 0; pos < n; ++pos) {
    out[order[pos]] = pos < counts[0] ? Split::train : pos < counts[0] + counts[1] ? Split::val : Split::test;
  }
  return out;
}

std::vector<Image> load_labels(const LabelSource& source, std::size_t extent) {
  if (source.kind == "synthetic") return gen_synthetic_labels(source.count, extent, source.seed);
  if (source.kind != "npy") throw ConfigError("unknown label source '" + source.kind + "' (expected synthetic or npy)");
  const auto arrays = read_npy_archive(source.path);
  if (arrays.empty()) throw FormatError(source.path + ": archive holds no arrays");
  const NpyArray* chosen = nullptr;
  if (source.key.empty()) {
    chosen = &arrays.begin()->second;
  } else {
    auto it = arrays.find(source.key);
    if (it == arrays.end()) throw FormatError(source.path + ": no array named '" + source.key + "'");
    chosen = &it->second;
  }
  auto images = as_images(*chosen);
  const std::size_t n = source.count == 0 ? images.size() : std::min(source.count, images.size());
  std::vector<Image> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(resample_to(images[i], extent, extent));
  return out;
}

SpeckleConfig DatasetHeader::speckle_config() const {
  SpeckleConfig c;
  c.label_extent = label_extent;
  c.speckle_extent = speckle_extent;
  c.percentile = percentile;
  return c;
}

std::string DatasetHeader::to_json() const {
  nlohmann::json j;
  j["format"] = "HSPK1";
  j["byte_order"] = "little";
  j["label_extent"] = label_extent;
  j["speckle_extent"] = speckle_extent;
  j["percentile"] = percentile;
  j["base_seed"] = base_seed;
  j["config_ids"] = std::vector<int>{config_id};
  j["tm_seed"] = tm_seed;
  j["split_seed"] = split_seed;
  j["split_ratios"] = {ratios.train, ratios.val, ratios.test};
  j["counts"] = {{"train", counts[0]}, {"val", counts[1]}, {"test", counts[2]}};
  j["labels"] = {{"kind", labels.kind}, {"seed", labels.seed}, {"path", labels.path}, {"key", labels.key},
                 {"count", labels.count}};
  j["preprocessing"] = preprocessing;
  return j.dump();
}

DatasetHeader DatasetHeader::from_json(const std::string& text, const std::string& what) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "HSPK1" || j.at("byte_order") != "little") throw FormatError(what + ": unsupported header");
    DatasetHeader h;
    h.label_extent = j.at("label_extent").get<std::size_t>();
    h.speckle_extent = j.at("speckle_extent").get<std::size_t>();
    h.percentile = j.at("percentile").get<double>();
    h.base_seed = j.at("base_seed").get<std::uint64_t>();
    const auto ids = j.at("config_ids").get<std::vector<int>>();
    if (ids.size() != 1) throw FormatError(what + ": expected exactly one config id per file");
    h.config_id = ids[0];
    h.tm_seed = j.at("tm_seed").get<std::uint64_t>();
    h.split_seed = j.at("split_seed").get<std::uint64_t>();
    const auto r = j.at("split_ratios").get<std::vector<double>>();
    if (r.size() != 3) throw FormatError(what + ": split_ratios needs three entries");
    h.ratios = {r[0], r[1], r[2]};
    h.counts = {j.at("counts").at("train").get<std::size_t>(), j.at("counts").at("val").get<std::size_t>(),
                j.at("counts").at("test").get<std::size_t>()};
    const auto& l = j.at("labels");
    h.labels.kind = l.at("kind").get<std::string>();
    h.labels.seed = l.at("seed").get<std::uint64_t>();
    h.labels.path = l.at("path").get<std::string>();
    h.labels.key = l.at("key").get<std::string>();
    h.labels.count = l.at("count").get<std::size_t>();
    h.preprocessing = j.at("preprocessing").get<std::string>();
    if (h.label_extent == 0 || h.speckle_extent == 0) throw FormatError(what + ": extents must be positive");
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": malformed header: " + e.what());
  }
}

std::vector<const DatasetRecord*> Dataset::split(Split s) const {
  std::vector<const DatasetRecord*> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(&r);
  return out;
}

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset) {
  const std::string header = dataset.header.to_json();
  std::vector<std::uint8_t> out(kMagic, kMagic + 5);
  le::put_u32(out, static_cast<std::uint32_t>(header.size()));
  le::put_bytes(out, header);
  le::put_u32(out, static_cast<std::uint32_t>(dataset.records.size()));
  const std::size_t e = dataset.header.label_extent;
  for (const auto& r : dataset.records) {
    if (r.speckle.height != e || r.speckle.width != e || r.label.height != e || r.label.width != e) {
      throw DimensionError("encode_dataset: record " + std::to_string(r.index) + " does not match the header extent");
    }
    le::put_u32(out, r.index);
    le::put_u8(out, static_cast<std::uint8_t>(r.split));
    le::put_u8(out, r.config_id);
    le::put_u16(out, 0);
    for (float v : r.speckle.pixels) le::put_f32(out, v);
    for (float v : r.label.pixels) le::put_f32(out, v);
  }
  return out;
}

Dataset decode_dataset(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  le::Reader r(bytes, what);
  if (bytes.size() < 5 || std::memcmp(r.take(5), kMagic, 5) != 0) throw FormatError(what + ": bad magic (expected HSPK1)");
  Dataset ds;
  ds.header = DatasetHeader::from_json(r.str(r.u32()), what);
  const std::size_t n = r.u32();
  const std::size_t e = ds.header.label_extent;
  ds.records.reserve(n);
  std::array<std::size_t, 3> seen{};
  for (std::size_t i = 0; i < n; ++i) {
    DatasetRecord rec;
    rec.index = r.u32();
    const auto split = r.u8();
    if (split > 2) throw FormatError(what + ": record " + std::to_string(i) + " has an invalid split code");
    rec.split = static_cast<Split>(split);
    ++seen[split];
    rec.config_id = r.u8();
    r.u16();
    rec.speckle = Image(e, e);
    rec.label = Image(e, e);
    for (auto& v : rec.speckle.pixels) v = r.f32();
    for (auto& v : rec.label.pixels) v = r.f32();
    ds.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw FormatError(what + ": trailing bytes after the last record");
  if (seen != ds.header.counts) throw FormatError(what + ": split counts disagree with the header");
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_file_bytes(path, encode_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file_bytes(path), path.string()); }

namespace {

std::string preprocessing_note(const DatasetHeader& h) {
  return "phase encoding exp(i*pi*label); intensity |T u|^2 on a " + std::to_string(h.speckle_extent) + "x" +
         std::to_string(h.speckle_extent) + " frame; divided by the " + format_number(h.percentile) +
         "th percentile and clamped to [0,1]; resampled to " + std::to_string(h.label_extent) + "x" +
         std::to_string(h.label_extent);
}

template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) body(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

std::vector<Dataset> build_dataset(const std::vector<Image>& labels, const LabelSource& source,
                                   const std::vector<int>& config_ids, const BuildOptions& options) {
  if (config_ids.empty()) throw ConfigError("build_dataset: at least one fiber configuration is required");
  if (labels.empty()) throw ConfigError("build_dataset: no labels");
  options.ratios.validate();
  for (const auto& l : labels) {
    if (l.height != options.label_extent || l.width != options.label_extent) {
      throw DimensionError("build_dataset: label extent " + std::to_string(l.height) + "x" + std::to_string(l.width) +
                           " differs from " + std::to_string(options.label_extent));
    }
  }
  const auto splits = assign_splits(labels.size(), options.ratios, options.base_seed);
  std::vector<Dataset> out;
  for (int cfg : config_ids) {
    if (cfg < 0 || cfg > 255) throw ConfigError("build_dataset: config id must lie in [0,255]");
    Dataset ds;
    auto& h = ds.header;
    h.label_extent = options.label_extent;
    h.speckle_extent = options.speckle_extent;
    h.percentile = options.percentile;
    h.base_seed = options.base_seed;
    h.config_id = cfg;
    h.tm_seed = config_seed(options.base_seed, cfg);
    h.split_seed = options.base_seed;
    h.ratios = options.ratios;
    h.counts = split_counts(labels.size(), options.ratios);
    h.labels = source;
    h.labels.count = labels.size();
    h.preprocessing = preprocessing_note(h);

    const auto sc = h.speckle_config();
    sc.validate();
    const auto tm = build_tm(h.tm_seed, sc.m(), sc.n(), cfg, options.memory_budget);
    ds.records.resize(labels.size());
    parallel_for(labels.size(), options.threads, [&](std::size_t i) {
      auto& r = ds.records[i];
      r.index = static_cast<std::uint32_t>(i);
      r.split = splits[i];
      r.config_id = static_cast<std::uint8_t>(cfg);
      r.label = labels[i];
      r.speckle = simulate_speckle(labels[i], tm, sc);
    });
    out.push_back(std::move(ds));
  }
  return out;
}

DatasetRecord regenerate_record(const DatasetHeader& header, std::size_t index) {
  if (index >= header.labels.count) {
    throw ContractError("regenerate_record: index " + std::to_string(index) + " outside " +
                        std::to_string(header.labels.count) + " records");
  }
  DatasetRecord r;
  r.index = static_cast<std::uint32_t>(index);
  r.split = assign_splits(header.labels.count, header.ratios, header.split_seed)[index];
  r.config_id = static_cast<std::uint8_t>(header.config_id);
  if (header.labels.kind == "synthetic") {
    r.label = gen_synthetic_label(header.label_extent, header.labels.seed, index);
  } else {
    r.label = load_labels(header.labels, header.label_extent).at(index);
  }
  const auto sc = header.speckle_config();
  const auto tm = build_tm(header.tm_seed, sc.m(), sc.n(), header.config_id);
  r.speckle = simulate_speckle(r.label, tm, sc);
  return r;
}

std::vector<const DatasetRecord*> sample_records(const std::vector<const DatasetRecord*>& records, std::size_t count,
                                                 std::uint64_t seed) {
  if (count > records.size()) {
    throw ContractError("sample_records: requested " + std::to_string(count) + " of " +
                        std::to_string(records.size()) + " records");
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  order.resize(count);
  std::sort(order.begin(), order.end());
  std::vector<const DatasetRecord*> out;
  out.reserve(count);
  for (auto i : order) out.push_back(records[i]);
  return out;
}

std::vector<DatasetRecord> compose_perturbed(const std::vector<const Dataset*>& datasets, std::size_t per_config_count,
                                             std::uint64_t seed) {
  if (datasets.empty()) throw ConfigError("compose_perturbed: no datasets");
  std::vector<DatasetRecord> out;
  for (std::size_t k = 0; k < datasets.size(); ++k) {
    const auto train = datasets[k]->split(Split::train);
    if (train.size() < per_config_count) {
      throw ContractError("compose_perturbed: configuration " + std::to_string(datasets[k]->header.config_id) +
                          " has " + std::to_string(train.size()) + " training records, " +
                          std::to_string(per_config_count) + " requested");
    }
    for (const auto* r : sample_records(train, per_config_count, derive_seed(seed, k))) out.push_back(*r);
  }
  Rng rng(derive_seed(seed, datasets.size()));
  rng.shuffle(out.begin(), out.end());
  return out;
}

}  // namespace hspk
