#include "hspk/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "hspk/io.hpp"
#include "hspk/rng.hpp"

namespace hspk {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kGeneratorInitStream = 0x6e6e;
constexpr std::uint64_t kDiscriminatorInitStream = 0xd15c;
constexpr std::uint64_t kEpochStream = 0xe90c0000;
constexpr std::uint64_t kReducedStream = 0x3030;
constexpr std::uint64_t kPerturbedStream = 0x9e7b;
constexpr std::uint64_t kValStream = 0x7a11;

std::vector<std::uint64_t> shape_u64(const Shape& s) { return {s.begin(), s.end()}; }

std::vector<float> as_floats(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

void put_config(Checkpoint& ck, const std::string& name, const std::vector<float>& values) {
  ck.add(std::string(kConfigPrefix) + name, {values.size()}, values);
}

const std::vector<float>& get_config(const Checkpoint& ck, const std::string& name) {
  return ck.at(std::string(kConfigPrefix) + name).values;
}

std::vector<float> encode_generator(const GeneratorConfig& c) {
  std::vector<float> v{static_cast<float>(c.extent), static_cast<float>(c.input_channels),
                       c.use_tfrm ? 1.0f : 0.0f, static_cast<float>(c.depth())};
  for (const auto* list : {&c.encoder_channels, &c.decoder_channels, &c.tfrm_hidden, &c.tfrm_width}) {
    const auto f = as_floats(*list);
    v.insert(v.end(), f.begin(), f.end());
  }
  return v;
}

GeneratorConfig decode_generator(const std::vector<float>& v) {
  auto need = [&](std::size_t n) {
    if (v.size() < n) throw FormatError("checkpoint: truncated generator config");
  };
  need(4);
  GeneratorConfig c;
  c.extent = static_cast<std::size_t>(v[0]);
  c.input_channels = static_cast<std::size_t>(v[1]);
  c.use_tfrm = v[2] != 0.0f;
  const auto d = static_cast<std::size_t>(v[3]);
  need(4 + 2 * d + 6);
  auto take = [&](std::size_t from, std::size_t n) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<std::size_t>(v[from + i]));
    return out;
  };
  c.encoder_channels = take(4, d);
  c.decoder_channels = take(4 + d, d);
  c.tfrm_hidden = take(4 + 2 * d, 3);
  c.tfrm_width = take(4 + 2 * d + 3, 3);
  return c;
}

std::vector<float> encode_discriminator(const DiscriminatorConfig& c) {
  std::vector<float> v{static_cast<float>(c.extent), static_cast<float>(c.input_channels)};
  const auto f = as_floats(c.channels);
  v.insert(v.end(), f.begin(), f.end());
  return v;
}

template <class T>
void add_params(Checkpoint& ck, const std::vector<NamedTensor<T>>& params) {
  for (const auto& p : params) ck.add(p.name, shape_u64(p.tensor.shape()), p.tensor.vec());
}

template <class T>
void add_buffers(Checkpoint& ck, const std::vector<NamedBuffer<T>>& buffers) {
  for (const auto& b : buffers) ck.add(b.name, {b.data->size()}, *b.data);
}

void copy_into(std::span<float> dst, const CheckpointEntry& e) {
  if (e.values.size() != dst.size()) {
    throw FormatError("checkpoint: entry '" + e.name + "' holds " + std::to_string(e.values.size()) +
                      " values, model expects " + std::to_string(dst.size()));
  }
  std::copy(e.values.begin(), e.values.end(), dst.begin());
}

void load_params(const Checkpoint& ck, const std::vector<NamedTensor<float>>& params) {
  for (const auto& p : params) copy_into(Tensor<float>(p.tensor).values_mut(), ck.at(p.name));
}

void load_buffers(const Checkpoint& ck, const std::vector<NamedBuffer<float>>& buffers) {
  for (const auto& b : buffers) copy_into(*b.data, ck.at(b.name));
}

void add_adam(Checkpoint& ck, const std::string& tag, const std::vector<NamedTensor<float>>& names,
              const AdamState<float>& st) {
  const std::string base = std::string(kAdamPrefix) + tag + "/";
  for (std::size_t k = 0; k < names.size(); ++k) {
    ck.add(base + "m/" + names[k].name, {st.m[k].size()}, st.m[k]);
    ck.add(base + "v/" + names[k].name, {st.v[k].size()}, st.v[k]);
  }
  ck.add(base + "t", {1}, {static_cast<float>(st.t)});
}

void load_adam(const Checkpoint& ck, const std::string& tag, const std::vector<NamedTensor<float>>& names,
               AdamState<float>& st) {
  const std::string base = std::string(kAdamPrefix) + tag + "/";
  for (std::size_t k = 0; k < names.size(); ++k) {
    copy_into(st.m[k], ck.at(base + "m/" + names[k].name));
    copy_into(st.v[k], ck.at(base + "v/" + names[k].name));
  }
  st.t = static_cast<std::uint64_t>(ck.at(base + "t").values.at(0));
}

std::optional<double> opt(const Tensor<float>& t) { return static_cast<double>(t.item()); }

std::string write_dump(const MetricsRow& row, const Batch& batch, const fs::path& dump_dir, const std::string& cause) {
  if (dump_dir.empty()) return "no dump directory";
  std::ostringstream os;
  os << "step " << row.step << "\nepoch " << row.epoch << "\ncause " << cause << "\n";
  const auto cells = metrics_cells(row);
  const auto header = metrics_header();
  for (std::size_t i = 0; i < header.size(); ++i) os << header[i] << ' ' << cells[i] << "\n";
  os << "records (index config split):\n";
  for (const auto* r : batch.records)
    os << r->index << ' ' << static_cast<int>(r->config_id) << ' ' << split_name(r->split) << "\n";
  char file[64];
  std::snprintf(file, sizeof file, "nan_dump_step%06zu.txt", row.step);
  const auto path = dump_dir / file;
  write_text_file(path, os.str());
  return "batch dump written to " + path.string();
}

struct DumpedError : NumericError {
  using NumericError::NumericError;
};

void check_finite(const MetricsRow& row, const Batch& batch, const fs::path& dump_dir) {
  const std::pair<const char*, const std::optional<double>*> terms[] = {
      {"L_Dis", &row.l_dis}, {"L_adv", &row.l_adv}, {"L_MI", &row.l_mi}, {"L_SSIM", &row.l_ssim}, {"L_Gen", &row.l_gen}};
  for (const auto& [name, value] : terms) {
    if (!value->has_value() || std::isfinite(**value)) continue;
    const auto where = write_dump(row, batch, dump_dir, std::string("loss ") + name);
    throw DumpedError("training: non-finite " + std::string(name) + " at step " + std::to_string(row.step) + "; " +
                      where);
  }
}

}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::histospeckle: return "histospeckle";
    case Variant::unet_baseline: return "unet_baseline";
    case Variant::pix2pix_baseline: return "pix2pix_baseline";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (auto v : {Variant::histospeckle, Variant::unet_baseline, Variant::pix2pix_baseline})
    if (name == variant_name(v)) return v;
  throw ConfigError("unknown variant '" + name + "' (histospeckle, unet_baseline, pix2pix_baseline)");
}

const char* preset_name(Preset p) {
  switch (p) {
    case Preset::full: return "full";
    case Preset::reduced30: return "reduced30";
    case Preset::perturbed: return "perturbed";
  }
  return "?";
}

Preset parse_preset(const std::string& name) {
  for (auto p : {Preset::full, Preset::reduced30, Preset::perturbed})
    if (name == preset_name(p)) return p;
  throw ConfigError("unknown preset '" + name + "' (full, reduced30, perturbed)");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be at least 1");
  if (!(reduced_fraction > 0.0 && reduced_fraction <= 1.0)) throw ConfigError("train: reduced_fraction must lie in (0, 1]");
  if (perturbed_per_config == 0) throw ConfigError("train: perturbed_per_config must be at least 1");
  if (log_every == 0) throw ConfigError("train: log_every must be at least 1");
  if (!(adam.lr > 0.0)) throw ConfigError("train: learning rate must be positive");
  if (encoder_channels.size() != decoder_channels.size()) {
    throw ConfigError("model: encoder and decoder schedules differ in depth");
  }
  if (tfrm_hidden.size() != 3 || tfrm_width.size() != 3) throw ConfigError("model: refinement needs three stages");
  if (discriminator_channels.empty()) throw ConfigError("model: discriminator needs at least one layer");
}

GeneratorConfig generator_config_for(const TrainConfig& config, std::size_t extent) {
  GeneratorConfig base;
  base.encoder_channels = config.encoder_channels;
  base.decoder_channels = config.decoder_channels;
  base.tfrm_hidden = config.tfrm_hidden;
  base.tfrm_width = config.tfrm_width;
  base.use_tfrm = config.variant == Variant::histospeckle;
  return GeneratorConfig::for_extent(extent, base);
}

DiscriminatorConfig discriminator_config_for(const TrainConfig& config, std::size_t extent) {
  DiscriminatorConfig base;
  base.channels = config.discriminator_channels;
  return DiscriminatorConfig::for_extent(extent, base);
}

std::vector<std::string> metrics_header() {
  return {"step", "epoch", "L_Dis", "L_adv", "L_MI", "L_SSIM", "L_Gen", "val_ssim", "hist_emd"};
}

std::vector<std::string> metrics_cells(const MetricsRow& row) {
  auto cell = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  return {std::to_string(row.step), std::to_string(row.epoch), cell(row.l_dis),    cell(row.l_adv), cell(row.l_mi),
          cell(row.l_ssim),         cell(row.l_gen),           cell(row.val_ssim), cell(row.hist_emd)};
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const fs::path& path) {
  CsvTable t;
  t.header = metrics_header();
  for (const auto& r : rows) t.rows.push_back(metrics_cells(r));
  write_csv(t, path);
}

Batch make_batch(const std::vector<const DatasetRecord*>& records) {
  if (records.empty()) throw ContractError("make_batch: empty batch");
  std::vector<const Image*> xs, ys;
  for (const auto* r : records) {
    xs.push_back(&r->speckle);
    ys.push_back(&r->label);
  }
  return {images_to_tensor<float>(xs), images_to_tensor<float>(ys), records};
}

Trainer::Trainer(TrainConfig config, std::size_t extent)
    : config_((config.validate(), std::move(config))),
      extent_(extent),
      g_(generator_config_for(config_, extent)),
      d_(discriminator_config_for(config_, extent)),
      bank_(config_.hist_bins, config_.hist_sigma) {
  init_params(g_.named_parameters(), derive_seed(config_.seed, kGeneratorInitStream));
  init_params(d_.named_parameters(), derive_seed(config_.seed, kDiscriminatorInitStream));
  g_params_ = g_.parameters();
  d_params_ = d_.parameters();
  g_opt_ = AdamState<float>(g_params_, config_.adam);
  d_opt_ = AdamState<float>(d_params_, config_.adam);
}

MetricsRow Trainer::step(const Batch& batch, std::size_t epoch, const fs::path& dump_dir) {
  MetricsRow row;
  row.step = step_ + 1;
  row.epoch = epoch;
  touched_ = false;
  zero_grads(g_params_);
  zero_grads(d_params_);

  try {
    step_body(row, batch, dump_dir);
  } catch (const DumpedError&) {
    throw;
  } catch (const NumericError& e) {
    const auto where = write_dump(row, batch, dump_dir, e.what());
    throw NumericError("training: " + std::string(e.what()) + " at step " + std::to_string(row.step) + "; " + where);
  }
  ++step_;
  return row;
}

void Trainer::step_body(MetricsRow& row, const Batch& batch, const fs::path& dump_dir) {
  auto out = g_.forward(batch.x, true);

  if (config_.uses_discriminator()) {
    const auto fake = out.g3.detach();
    auto l_dis = discriminator_loss(d_.forward(batch.y, batch.x, true), d_.forward(fake, batch.x, true));
    row.l_dis = opt(l_dis);
    check_finite(row, batch, dump_dir);
    if (!config_.freeze_discriminator) {
      l_dis.backward();
      for (const auto& p : g_params_)
        for (float v : p.grad()) touched_ = touched_ || v != 0.0f;
      adam_step(d_params_, d_opt_);
      zero_grads(d_params_);
    }
  }

  Tensor<float> total;
  switch (config_.variant) {
    case Variant::histospeckle: {
      auto adv = adversarial_g_loss(d_.forward(out.g3, batch.x, true));
      auto mi = mi_loss_batch(batch.y, out.g3, bank_).loss;
      auto ssim = ssim_loss_3scale(out.g1, out.g2, out.g3, batch.y);
      total = generator_total(adv, mi, ssim, config_.weights);
      row.l_adv = opt(adv);
      row.l_mi = opt(mi);
      row.l_ssim = opt(ssim);
      break;
    }
    case Variant::unet_baseline: {
      auto ssim = add_scalar(neg(ms_ssim(out.g3, batch.y).value), 1.0f);
      total = ssim + l1_loss(out.g3, batch.y);
      row.l_ssim = opt(ssim);
      break;
    }
    case Variant::pix2pix_baseline: {
      auto adv = adversarial_g_loss(d_.forward(out.g3, batch.x, true));
      total = adv + mul_scalar(l1_loss(out.g3, batch.y), static_cast<float>(config_.pix2pix_l1_weight));
      row.l_adv = opt(adv);
      break;
    }
  }
  row.l_gen = opt(total);
  check_finite(row, batch, dump_dir);
  total.backward();
  adam_step(g_params_, g_opt_);
}

Checkpoint Trainer::checkpoint() {
  Checkpoint ck;
  auto& g = g_;
  auto& d = d_;
  const auto gn = g.named_parameters();
  add_params(ck, gn);
  add_buffers(ck, g.named_buffers());
  put_config(ck, "generator", encode_generator(g.config()));
  put_config(ck, "variant", {static_cast<float>(config_.variant)});
  put_config(ck, "step", {static_cast<float>(step_)});
  add_adam(ck, "G", gn, g_opt_);
  if (config_.uses_discriminator()) {
    const auto dn = d.named_parameters();
    add_params(ck, dn);
    add_buffers(ck, d.named_buffers());
    put_config(ck, "discriminator", encode_discriminator(d.config()));
    add_adam(ck, "D", dn, d_opt_);
  }
  return ck;
}

void Trainer::restore(const Checkpoint& ck) {
  if (decode_generator(get_config(ck, "generator")).extent != extent_) {
    throw DimensionError("checkpoint: generator extent does not match the data extent " + std::to_string(extent_));
  }
  if (static_cast<Variant>(get_config(ck, "variant").at(0)) != config_.variant) {
    throw ConfigError("checkpoint: variant differs from the configured '" + std::string(variant_name(config_.variant)) +
                      "'");
  }
  const auto gn = g_.named_parameters();
  load_params(ck, gn);
  load_buffers(ck, g_.named_buffers());
  load_adam(ck, "G", gn, g_opt_);
  if (config_.uses_discriminator()) {
    const auto dn = d_.named_parameters();
    load_params(ck, dn);
    load_buffers(ck, d_.named_buffers());
    load_adam(ck, "D", dn, d_opt_);
  }
  step_ = static_cast<std::size_t>(get_config(ck, "step").at(0));
}

Generator<float> load_generator(const Checkpoint& ck) {
  Generator<float> g(decode_generator(get_config(ck, "generator")));
  load_params(ck, g.named_parameters());
  load_buffers(ck, g.named_buffers());
  return g;
}

Reconstructor generator_reconstructor(Generator<float>& g) {
  return [&g](const std::vector<const DatasetRecord*>& records) {
    NoGradGuard no_grad;
    const auto batch = make_batch(records);
    const auto out = g.forward(batch.x, false);
    std::vector<Image> images;
    for (std::size_t b = 0; b < records.size(); ++b) images.push_back(tensor_to_image(out.g3, b));
    return images;
  };
}

Reconstructor identity_reconstructor() {
  return [](const std::vector<const DatasetRecord*>& records) {
    std::vector<Image> images;
    for (const auto* r : records) images.push_back(r->label);
    return images;
  };
}

EvalResult evaluate(const Reconstructor& reconstruct, const std::vector<const DatasetRecord*>& records,
                    const fs::path& out_dir, const std::string& tag, std::size_t batch_size) {
  if (records.empty()) throw ContractError("evaluate: empty split");
  if (batch_size == 0) throw ContractError("evaluate: batch size must be positive");
  if (!out_dir.empty()) fs::create_directories(out_dir);
  EvalResult result;
  CsvTable table;
  table.header = {"index", "config_id", "ssim"};
  constexpr std::size_t kTriptychs = 16;
  for (std::size_t start = 0; start < records.size(); start += batch_size) {
    const std::vector<const DatasetRecord*> chunk(
        records.begin() + static_cast<std::ptrdiff_t>(start),
        records.begin() + static_cast<std::ptrdiff_t>(std::min(records.size(), start + batch_size)));
    const auto recon = reconstruct(chunk);
    if (recon.size() != chunk.size()) throw ContractError("evaluate: reconstructor returned the wrong batch size");
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto* r = chunk[i];
      const double s = ssim_metric(recon[i], r->label);
      result.ssim.push_back(s);
      table.rows.push_back({std::to_string(r->index), std::to_string(r->config_id), format_number(s)});
      const std::size_t k = start + i;
      if (!out_dir.empty() && k < kTriptychs) {
        char name[96];
        std::snprintf(name, sizeof name, "%s_recon_%02zu.pgm", tag.c_str(), k);
        write_pgm(hconcat({&r->speckle, &r->label, &recon[i]}), out_dir / name);
      }
    }
  }
  result.mean_ssim = std::accumulate(result.ssim.begin(), result.ssim.end(), 0.0) / static_cast<double>(result.ssim.size());
  if (!out_dir.empty()) write_csv(table, out_dir / (tag + "_ssim.csv"));
  return result;
}

double emd_1d(std::span<const double> p, std::span<const double> q, double bin_width) {
  if (p.size() != q.size()) throw DimensionError("emd_1d: histogram lengths differ");
  double cp = 0.0, cq = 0.0, total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cp += p[i];
    cq += q[i];
    total += std::abs(cp - cq);
  }
  return total * bin_width;
}

std::vector<double> mean_histogram(const std::vector<Image>& images, const KernelBank& bank) {
  if (images.empty()) throw ContractError("mean_histogram: no images");
  std::vector<double> acc(bank.bins(), 0.0);
  NoGradGuard no_grad;
  for (const auto& im : images) {
    const auto p = marginal(image_to_tensor<double>(im), bank).probability;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p.at(i);
  }
  for (auto& v : acc) v /= static_cast<double>(images.size());
  return acc;
}

std::vector<double> mean_hard_histogram(const std::vector<Image>& images, std::size_t bins) {
  if (images.empty()) throw ContractError("mean_hard_histogram: no images");
  std::vector<double> acc(bins, 0.0);
  for (const auto& im : images) {
    const auto h = hard_histogram(im.pixels, bins);
    for (std::size_t i = 0; i < bins; ++i) acc[i] += h[i];
  }
  for (auto& v : acc) v /= static_cast<double>(images.size());
  return acc;
}

HistogramReport histogram_report(const Reconstructor& initial, const Reconstructor& final_,
                                 const std::vector<const DatasetRecord*>& records, const KernelBank& bank) {
  if (records.empty()) throw ContractError("histogram_report: no records");
  std::vector<Image> truth, first, last;
  constexpr std::size_t kChunk = 16;
  for (std::size_t start = 0; start < records.size(); start += kChunk) {
    const std::vector<const DatasetRecord*> chunk(
        records.begin() + static_cast<std::ptrdiff_t>(start),
        records.begin() + static_cast<std::ptrdiff_t>(std::min(records.size(), start + kChunk)));
    for (const auto* r : chunk) truth.push_back(r->label);
    for (auto& im : initial(chunk)) first.push_back(std::move(im));
    for (auto& im : final_(chunk)) last.push_back(std::move(im));
  }
  HistogramReport rep;
  rep.centers = bank.centers();
  rep.truth = mean_histogram(truth, bank);
  rep.initial = mean_histogram(first, bank);
  rep.final_ = mean_histogram(last, bank);
  rep.emd_initial = emd_1d(rep.initial, rep.truth, bank.bin_width());
  rep.emd_final = emd_1d(rep.final_, rep.truth, bank.bin_width());
  rep.hard_truth = mean_hard_histogram(truth, bank.bins());
  rep.hard_initial = mean_hard_histogram(first, bank.bins());
  rep.hard_final = mean_hard_histogram(last, bank.bins());
  return rep;
}

void write_histogram_csv(const HistogramReport& report, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  CsvTable hist;
  hist.header = {"bin", "center", "p_truth", "p_initial", "p_final", "hard_truth", "hard_initial", "hard_final"};
  const bool hard = report.hard_truth.size() == report.truth.size();
  for (std::size_t i = 0; i < report.truth.size(); ++i) {
    hist.rows.push_back({std::to_string(i), format_number(report.centers[i]), format_number(report.truth[i]),
                         format_number(report.initial[i]), format_number(report.final_[i]),
                         hard ? format_number(report.hard_truth[i]) : "",
                         hard ? format_number(report.hard_initial[i]) : "",
                         hard ? format_number(report.hard_final[i]) : ""});
  }
  write_csv(hist, out_dir / "histogram.csv");
  CsvTable emd;
  emd.header = {"model", "emd_to_truth"};
  emd.rows = {{"initial", format_number(report.emd_initial)}, {"final", format_number(report.emd_final)}};
  write_csv(emd, out_dir / "emd.csv");
}

std::vector<const DatasetRecord*> preset_records(const TrainConfig& config, const std::vector<Dataset>& datasets,
                                                 std::vector<DatasetRecord>& storage) {
  if (datasets.empty()) throw ContractError("fit: no datasets");
  const auto train = datasets.front().split(Split::train);
  switch (config.preset) {
    case Preset::full:
      return train;
    case Preset::reduced30: {
      const auto n = static_cast<std::size_t>(std::llround(config.reduced_fraction * static_cast<double>(train.size())));
      return sample_records(train, std::max<std::size_t>(n, 1), derive_seed(config.seed, kReducedStream));
    }
    case Preset::perturbed: {
      std::vector<const Dataset*> ptrs;
      for (const auto& d : datasets) ptrs.push_back(&d);
      storage = compose_perturbed(ptrs, config.perturbed_per_config, derive_seed(config.seed, kPerturbedStream));
      std::vector<const DatasetRecord*> out;
      for (const auto& r : storage) out.push_back(&r);
      return out;
    }
  }
  return train;
}

FitResult fit(const TrainConfig& config, const std::vector<Dataset>& datasets, const fs::path& out_dir,
              const LogFn& log) {
  config.validate();
  if (datasets.empty()) throw ContractError("fit: no datasets");
  const std::size_t extent = datasets.front().header.label_extent;
  for (const auto& d : datasets) {
    if (d.header.label_extent != extent) throw DimensionError("fit: datasets have different label extents");
  }
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  const auto ckpt_dir = out_dir / "checkpoints";
  fs::create_directories(ckpt_dir);

  std::vector<DatasetRecord> storage;
  const auto train = preset_records(config, datasets, storage);
  const std::size_t available = datasets.front().split(Split::train).size();
  switch (config.preset) {
    case Preset::full:
      say("preset full: training on all " + std::to_string(train.size()) + " training records");
      break;
    case Preset::reduced30:
      say("preset reduced30: training on " + std::to_string(train.size()) + " of " + std::to_string(available) +
          " training records (" + format_number(100.0 * config.reduced_fraction) + "% sample)");
      break;
    case Preset::perturbed:
      say("preset perturbed: " + std::to_string(config.perturbed_per_config) + " records from each of " +
          std::to_string(datasets.size()) + " configurations, " + std::to_string(train.size()) + " in total");
      break;
  }
  if (train.empty()) throw ContractError("fit: no training records");

  std::vector<const DatasetRecord*> val;
  const std::size_t val_sources = config.preset == Preset::perturbed ? datasets.size() : 1;
  for (std::size_t i = 0; i < val_sources; ++i)
    for (const auto* r : datasets[i].split(Split::val)) val.push_back(r);
  if (config.val_records > 0 && val.size() > config.val_records) {
    val = sample_records(val, config.val_records, derive_seed(config.seed, kValStream));
  }

  Trainer trainer(config, extent);
  const KernelBank bank(config.hist_bins, config.hist_sigma);
  std::vector<double> truth_hist;
  if (!val.empty()) {
    std::vector<Image> labels;
    for (const auto* r : val) labels.push_back(r->label);
    truth_hist = mean_histogram(labels, bank);
  }

  FitResult result;
  result.train_records = train.size();
  result.initial_checkpoint = ckpt_dir / "init.hsck";
  save_checkpoint(trainer.checkpoint(), result.initial_checkpoint);
  result.final_checkpoint = result.initial_checkpoint;

  auto run_eval = [&](MetricsRow& row) {
    if (!val.empty()) {
      auto recon = generator_reconstructor(trainer.generator());
      row.val_ssim = evaluate(recon, val, {}, "").mean_ssim;
      std::vector<Image> outputs;
      for (std::size_t s = 0; s < val.size(); s += 16) {
        const std::vector<const DatasetRecord*> chunk(
            val.begin() + static_cast<std::ptrdiff_t>(s),
            val.begin() + static_cast<std::ptrdiff_t>(std::min(val.size(), s + 16)));
        for (auto& im : recon(chunk)) outputs.push_back(std::move(im));
      }
      row.hist_emd = emd_1d(mean_histogram(outputs, bank), truth_hist, bank.bin_width());
    }
    char name[64];
    std::snprintf(name, sizeof name, "step_%06zu.hsck", row.step);
    save_checkpoint(trainer.checkpoint(), ckpt_dir / name);
    say("step " + std::to_string(row.step) + " epoch " + std::to_string(row.epoch) +
        (row.val_ssim ? " val_ssim " + format_number(*row.val_ssim) : std::string()) +
        (row.hist_emd ? " hist_emd " + format_number(*row.hist_emd) : std::string()));
  };

  const std::size_t steps_per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
  bool capped = false;
  for (std::size_t epoch = 1; epoch <= config.epochs && !capped; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, kEpochStream + epoch));
    rng.shuffle(order.begin(), order.end());
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      std::vector<const DatasetRecord*> chunk;
      for (std::size_t i = b * config.batch_size; i < std::min(train.size(), (b + 1) * config.batch_size); ++i)
        chunk.push_back(train[order[i]]);
      auto row = trainer.step(make_batch(chunk), epoch, out_dir);
      capped = config.max_steps > 0 && trainer.step_count() >= config.max_steps;
      const bool eval_now = capped || (config.eval_every > 0 ? row.step % config.eval_every == 0
                                                             : b + 1 == steps_per_epoch);
      if (eval_now) run_eval(row);
      if (!eval_now && row.step % config.log_every == 0) {
        std::string line = "step " + std::to_string(row.step) + " epoch " + std::to_string(row.epoch);
        const auto header = metrics_header();
        const auto cells = metrics_cells(row);
        for (std::size_t i = 2; i < header.size(); ++i)
          if (!cells[i].empty()) line += " " + header[i] + " " + cells[i];
        say(line);
      }
      if (eval_now || row.step % config.log_every == 0) result.rows.push_back(row);
      if (capped) break;
    }
  }
  write_metrics_csv(result.rows, out_dir / "metrics.csv");
  if (trainer.step_count() == 0) return result;

  result.final_checkpoint = ckpt_dir / "final.hsck";
  save_checkpoint(trainer.checkpoint(), result.final_checkpoint);
  if (config.test_eval) {
    auto recon = generator_reconstructor(trainer.generator());
    for (const auto& d : datasets) {
      const auto test = d.split(Split::test);
      if (test.empty()) continue;
      const auto tag = "test_cf" + std::to_string(d.header.config_id);
      const double mean = evaluate(recon, test, out_dir / "eval", tag).mean_ssim;
      result.test_ssim.emplace_back(d.header.config_id, mean);
      say(tag + " mean SSIM " + format_number(mean) + " over " + std::to_string(test.size()) + " records");
    }
  }
  return result;
}

}  // namespace hspk
