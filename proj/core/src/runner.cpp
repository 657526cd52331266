#include "lapflow/runner.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "json.hpp"
#include "lapflow/analysis.hpp"
#include "lapflow/error.hpp"
#include "lapflow/image_io.hpp"

namespace lapflow {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");
  os << std::setprecision(17);
  return os;
}

bool has_stage(const RunConfig& c, const std::string& s) {
  return std::find(c.stages.begin(), c.stages.end(), s) != c.stages.end();
}

}  // namespace

std::vector<std::optional<std::size_t>> training_labels(const RunConfig& config,
                                                        const Dataset& data) {
  if (config.model.num_classes == 0) return {};
  for (const auto& l : data.labels) {
    if (l && *l >= config.model.num_classes) {
      throw ConfigError("model.num_classes",
                        "dataset has label " + std::to_string(*l) + " but the model has " +
                            std::to_string(config.model.num_classes) + " classes");
    }
  }
  return data.labels;
}

Checkpoint train_model(const RunConfig& config, const Dataset& data,
                       const std::function<void(const StepResult&)>& on_step) {
  if (data.images.empty()) throw ConfigError("dataset.count", "dataset is empty");
  MoTModel<float> model(config.model);
  Rng init = Rng(config.seed).stream("init");
  model.init(init);
  Trainer trainer(model, make_objective(config), config.train, config.seed);
  trainer.fit(data.images, training_labels(config, data), on_step);

  Checkpoint ckpt;
  ckpt.model = config.model;
  ckpt.schedule = config.schedule;
  ckpt.method = config.method;
  ckpt.step = trainer.steps_done();
  ckpt.run_config = to_json_string(config);
  ckpt.params = model.params();
  ckpt.ema = trainer.ema();
  return ckpt;
}

void write_train_log(const std::string& path, const std::vector<StepResult>& rows) {
  auto os = open_out(path);
  const std::size_t stages = rows.empty() ? 0 : rows.front().stage_counts.size();
  os << "step,loss,lr,grad_norm";
  for (std::size_t k = 0; k < stages; ++k) os << ",stage_" << k;
  os << "\n";
  for (const auto& r : rows) {
    os << r.step << ',' << r.loss << ',' << r.lr << ',' << r.grad_norm;
    for (std::size_t c : r.stage_counts) os << ',' << c;
    os << "\n";
  }
}

void write_samples(const std::string& dir, const SampleBatch& batch) {
  fs::create_directories(dir);
  const std::size_t n = batch.images.size();
  if (n == 0) return;
  std::size_t cols = 1;
  while (cols * cols < n) ++cols;
  write_png((fs::path(dir) / "grid.png").string(), to_u8(make_grid(batch.images, cols)));
  json samples = json::array();
  std::size_t total_nfe = 0;
  for (std::size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%04zu.png", i);
    write_png((fs::path(dir) / name).string(), to_u8(batch.images[i]));
    json segs = json::array();
    for (const auto& s : batch.segments[i]) {
      segs.push_back({{"segment", s.segment},
                      {"t_start", s.t_start},
                      {"t_end", s.t_end},
                      {"nfe", s.nfe},
                      {"accepted", s.accepted},
                      {"rejected", s.rejected}});
      total_nfe += s.nfe;
    }
    json entry{{"file", name}, {"segments", segs}};
    entry["label"] = batch.labels[i] ? json(*batch.labels[i]) : json(nullptr);
    samples.push_back(entry);
  }
  json meta{{"method", batch.method},
            {"count", n},
            {"total_nfe", total_nfe},
            {"seconds", batch.seconds},
            {"samples", samples}};
  open_out((fs::path(dir) / "samples.json").string()) << meta.dump(2) << "\n";
}

Metrics evaluate(std::span<const Tensor<float>> fake, std::span<const Tensor<float>> real,
                 std::size_t n_proj, std::uint64_t seed) {
  Metrics m;
  m.emplace_back("sliced_wasserstein",
                 sliced_wasserstein(fake, real, n_proj, Rng(seed).stream("eval")));
  const auto sf = spectrum_stats(fake);
  const auto sr = spectrum_stats(real);
  for (std::size_t b = 0; b < sf.size(); ++b) {
    m.emplace_back("spectrum_fake_" + std::to_string(b), sf[b]);
    m.emplace_back("spectrum_real_" + std::to_string(b), sr[b]);
    const double ratio = sr[b] > 0 && sf[b] > 0 ? std::log10(sf[b] / sr[b]) : 0.0;
    m.emplace_back("spectrum_log10_ratio_" + std::to_string(b), ratio);
  }
  return m;
}

void write_metrics(const std::string& path, const Metrics& metrics) {
  auto os = open_out(path);
  os << "metric,value\n";
  for (const auto& [k, v] : metrics) os << k << ',' << v << "\n";
}

Dataset reference_set(const DatasetDescriptor& desc, std::size_t count) {
  DatasetDescriptor d = desc;
  const bool synthetic = d.kind != DatasetKind::png_dir && d.kind != DatasetKind::tensor_file;
  if (synthetic) {
    d.seed = desc.seed + 1;
    d.count = count;
    return gen_dataset(d);
  }
  Dataset all = gen_dataset(d);
  if (all.size() > count) {
    all.images.resize(count);
    all.labels.resize(count);
  }
  return all;
}

void print_flop_report(const RunConfig& config, std::ostream& out) {
  const FlopReport r = model_flops(config.model, config.schedule);
  out << "segment  dt        tokens  GFLOPs/forward  attention share\n";
  for (const auto& s : r.segments) {
    out << std::setw(7) << s.segment << "  " << std::fixed << std::setprecision(4) << std::setw(8)
        << s.dt << "  " << std::setw(6) << static_cast<std::size_t>(s.tokens) << "  "
        << std::setprecision(6) << std::setw(14) << s.flops() * 1e-9 << "  "
        << std::setprecision(4) << (s.macs() > 0 ? s.attention / s.macs() : 0.0) << "\n";
  }
  out << std::defaultfloat << std::setprecision(6);
  out << "time-weighted GFLOPs per forward: " << r.time_weighted_flops() * 1e-9 << "\n";
  if (config.model.num_stages == 0) {
    const std::size_t side = config.model.image_size / config.model.patch;
    const CostReport c = attention_cost(side * side, config.model.width, config.schedule);
    out << "attention cost ratio vs single scale: " << std::setprecision(12) << c.ratio << "\n";
  }
  out << std::setprecision(6);
}

void run(const RunConfig& config, bool dry_run, std::ostream& log) {
  config.validate();
  const std::string resolved = to_json_string(config);
  if (dry_run) {
    log << resolved << "\n";
    print_flop_report(config, log);
    return;
  }
  const fs::path out = config.output_dir;
  fs::create_directories(out);
  open_out((out / "resolved_config.json").string()) << resolved << "\n";
  const std::string ckpt_path = (out / "checkpoint.lapf").string();

  std::optional<Checkpoint> ckpt;
  if (has_stage(config, "train")) {
    const Dataset data = gen_dataset(config.dataset);
    log << "training " << config.method << " on " << data.size() << " images for "
        << config.train.steps << " steps\n";
    std::vector<StepResult> rows;
    const auto t0 = std::chrono::steady_clock::now();
    ckpt = train_model(config, data, [&](const StepResult& r) {
      const std::size_t every = std::max<std::size_t>(1, config.train.log_every);
      if (r.step % every == 0 || r.step == 1 || r.step == config.train.steps) {
        rows.push_back(r);
        log << "step " << r.step << " loss " << r.loss << " lr " << r.lr << "\n";
      }
    });
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    save_checkpoint(ckpt_path, *ckpt);
    write_train_log((out / "train_log.csv").string(), rows);
    log << "trained in " << secs << " s, checkpoint " << ckpt_path << "\n";
  }
  const bool need_model = has_stage(config, "sample") || has_stage(config, "eval");
  if (need_model && !ckpt) ckpt = load_checkpoint(ckpt_path);

  if (has_stage(config, "sample")) {
    const SampleBatch batch = sample(*ckpt, config.sample);
    write_samples((out / "samples").string(), batch);
    log << "wrote " << batch.images.size() << " samples in " << batch.seconds << " s\n";
  }
  if (has_stage(config, "eval")) {
    SampleConfig sc = config.sample;
    sc.count = config.eval.samples;
    const SampleBatch batch = sample(*ckpt, sc);
    const Dataset real = reference_set(config.dataset, config.eval.samples);
    const Metrics m = evaluate(batch.images, real.images, config.eval.n_proj, config.seed);
    write_metrics((out / "metrics.csv").string(), m);
    log << "sliced_wasserstein " << m.front().second << "\n";
  }
}

}  // namespace lapflow
