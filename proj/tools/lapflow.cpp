#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"
#include "lapflow/analysis.hpp"
#include "lapflow/checkpoint.hpp"
#include "lapflow/error.hpp"
#include "lapflow/image_io.hpp"
#include "lapflow/pyramid.hpp"
#include "lapflow/runner.hpp"

using namespace lapflow;
namespace fs = std::filesystem;

namespace {

RunConfig load_config(const std::string& path, const std::string& out) {
  RunConfig c = load_run_config(path);
  apply_seed_override(c, std::getenv("LAPFLOW_SEED"));
  if (!out.empty()) c.output_dir = out;
  return c;
}

// A directory of PNGs (sorted, used at native size) or a tensor file.
std::vector<Tensor<float>> load_images(const std::string& path) {
  if (!fs::is_directory(path)) return load_tensor_file(path).images;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(path)) {
    if (e.path().extension() == ".png" && e.path().filename() != "grid.png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Tensor<float>> images;
  for (const auto& f : files) images.push_back(from_u8(read_png(f.string())));
  if (images.empty()) throw std::runtime_error(path + ": no PNG files");
  return images;
}

struct SolverFlags {
  std::string kind;
  double rtol = -1, atol = -1;
  std::size_t steps = 0;
  std::size_t max_steps = 0;

  void add(CLI::App* app) {
    app->add_option("--solver", kind, "euler, heun or dopri5");
    app->add_option("--rtol", rtol, "dopri5 relative tolerance");
    app->add_option("--atol", atol, "dopri5 absolute tolerance");
    app->add_option("--steps", steps, "fixed-step solver steps");
    app->add_option("--max-steps", max_steps, "dopri5 step budget per segment");
  }
  void apply(SolverConfig& s) const {
    if (!kind.empty()) s.kind = parse_solver(kind);
    if (rtol >= 0) s.rtol = rtol;
    if (atol >= 0) s.atol = atol;
    if (steps > 0) s.steps = steps;
    if (max_steps > 0) s.max_steps = max_steps;
    s.validate();
  }
};

int dispatch(int argc, char** argv) {
  CLI::App app{"Laplacian multi-scale flow matching"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  bool dry_run = false;

  auto* run_cmd = app.add_subcommand("run", "Run every stage listed in a config");
  run_cmd->add_option("--config", config_path, "JSON run config")->required();
  run_cmd->add_option("--out", out_dir, "Override output_dir");
  run_cmd->add_flag("--dry-run", dry_run, "Print the resolved config and FLOP report only");

  auto* train_cmd = app.add_subcommand("train", "Train a model from a config");
  train_cmd->add_option("--config", config_path, "JSON run config")->required();
  train_cmd->add_option("--out", out_dir, "Override output_dir");
  train_cmd->add_flag("--dry-run", dry_run, "Print the resolved config and FLOP report only");

  auto* eval_cmd = app.add_subcommand("eval", "Sample from a trained run and write metrics.csv");
  eval_cmd->add_option("--config", config_path, "JSON run config")->required();
  eval_cmd->add_option("--out", out_dir, "Override output_dir");

  SampleConfig sc;
  SolverFlags solver_flags;
  std::string pf_jump;
  bool no_ema = false;
  auto* sample_cmd = app.add_subcommand("sample", "Draw samples from a checkpoint");
  sample_cmd->add_option("--ckpt", sc.checkpoint, "Checkpoint file")->required();
  sample_cmd->add_option("--n", sc.count, "Number of samples")->capture_default_str();
  sample_cmd->add_option("--seed", sc.seed, "Sampling seed")->capture_default_str();
  sample_cmd->add_option("--cfg", sc.cfg_scale, "Guidance scale")->capture_default_str();
  sample_cmd->add_option("--label", sc.labels, "Class label(s), cycled over the batch");
  sample_cmd->add_option("--out", out_dir, "Output directory")->required();
  sample_cmd->add_flag("--no-ema", no_ema, "Use live weights instead of EMA");
  sample_cmd->add_option("--pf-jump", pf_jump, "algorithmic or variance_matched");
  solver_flags.add(sample_cmd);

  std::string image_path;
  std::size_t scales = 3;
  auto* dec_cmd = app.add_subcommand("decompose", "Write the Laplacian pyramid of a PNG");
  dec_cmd->add_option("--image", image_path, "Input PNG")->required();
  dec_cmd->add_option("--scales", scales, "Pyramid levels")->capture_default_str();
  dec_cmd->add_option("--out", out_dir, "Output directory")->required();

  auto* analyze = app.add_subcommand("analyze", "Cost and metric analysis");
  analyze->require_subcommand(1);
  std::size_t n_tokens = 256, width = 64;
  std::vector<double> times;
  std::string flops_config;
  auto* cost_cmd = analyze->add_subcommand("cost", "Time-weighted attention cost");
  cost_cmd->add_option("--n-tokens", n_tokens, "Finest-scale token count")->capture_default_str();
  cost_cmd->add_option("--d", width, "Model width")->capture_default_str();
  cost_cmd->add_option("--scales", scales, "Number of scales")->capture_default_str();
  cost_cmd->add_option("--times", times, "Interior critical times (default uniform)");
  cost_cmd->add_option("--config", flops_config, "Also print the FLOP report of this config");

  std::string real_path, fake_path, metrics_out;
  std::size_t n_proj = 128;
  std::uint64_t metric_seed = 0;
  auto* metrics_cmd = analyze->add_subcommand("metrics", "Sliced Wasserstein and spectrum CSV");
  metrics_cmd->add_option("--real", real_path, "PNG directory or tensor file")->required();
  metrics_cmd->add_option("--fake", fake_path, "PNG directory or tensor file")->required();
  metrics_cmd->add_option("--out", metrics_out, "CSV path (default stdout)");
  metrics_cmd->add_option("--n-proj", n_proj, "Random projections")->capture_default_str();
  metrics_cmd->add_option("--seed", metric_seed, "Projection seed")->capture_default_str();

  ModelConfig gc;
  gc.scales = 2;
  gc.width = 8;
  gc.depth = 2;
  gc.heads = 2;
  gc.patch = 1;
  gc.image_size = 4;
  gc.freq_dim = 16;
  std::uint64_t gc_seed = 0;
  double gc_h = 1e-5, gc_tol = 1e-4;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the training loss");
  grad_cmd->add_option("--scales", gc.scales, "Scales")->capture_default_str();
  grad_cmd->add_option("--width", gc.width, "Model width")->capture_default_str();
  grad_cmd->add_option("--depth", gc.depth, "Blocks")->capture_default_str();
  grad_cmd->add_option("--heads", gc.heads, "Attention heads")->capture_default_str();
  grad_cmd->add_option("--size", gc.image_size, "Image size")->capture_default_str();
  grad_cmd->add_option("--seed", gc_seed, "Seed")->capture_default_str();
  grad_cmd->add_option("--fd-step", gc_h, "Finite-difference step")->capture_default_str();
  grad_cmd->add_option("--tol", gc_tol, "Maximum relative error")->capture_default_str();

  DatasetDescriptor dd;
  std::string kind = "gaussians";
  dd.count = 64;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen_cmd->add_option("--kind", kind, "gaussians, checkerboard or textures")->capture_default_str();
  gen_cmd->add_option("--size", dd.image_size, "Image size")->capture_default_str();
  gen_cmd->add_option("--channels", dd.channels, "1 or 3")->capture_default_str();
  gen_cmd->add_option("--count", dd.count, "Images")->capture_default_str();
  gen_cmd->add_option("--seed", dd.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--out", out_dir, "PNG directory, or a .lapd tensor file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (run_cmd->parsed() || train_cmd->parsed()) {
    RunConfig c = load_config(config_path, out_dir);
    if (train_cmd->parsed()) c.stages = {"train"};
    run(c, dry_run, std::cout);
  } else if (eval_cmd->parsed()) {
    RunConfig c = load_config(config_path, out_dir);
    c.stages = {"eval"};
    run(c, false, std::cout);
  } else if (sample_cmd->parsed()) {
    if (const char* env = std::getenv("LAPFLOW_SEED")) {
      RunConfig tmp;
      apply_seed_override(tmp, env);
      sc.seed = tmp.seed;
    }
    const Checkpoint ckpt = load_checkpoint(sc.checkpoint);
    sc.solver = parse_run_config(ckpt.run_config).solver;
    solver_flags.apply(sc.solver);
    sc.use_ema = !no_ema;
    if (!pf_jump.empty()) sc.pf_jump = parse_pf_jump(pf_jump);
    const SampleBatch batch = sample(ckpt, sc);
    write_samples(out_dir, batch);
    std::size_t nfe = 0;
    for (const auto& s : batch.segments)
      for (const auto& g : s) nfe += g.nfe;
    std::cout << "wrote " << batch.images.size() << " samples to " << out_dir << " (" << nfe
              << " NFE, " << batch.seconds << " s)\n";
  } else if (dec_cmd->parsed()) {
    const Tensor<float> x = from_u8(read_png(image_path));
    const Pyramid<float> p = decompose(x, scales);
    fs::create_directories(out_dir);
    for (std::size_t k = 0; k < p.scales(); ++k) {
      // Residuals are shown at half amplitude around mid-gray; the base as-is.
      Tensor<float> view = p.levels[k];
      if (k + 1 < p.scales())
        for (float& v : view.data()) v *= 0.5f;
      write_png((fs::path(out_dir) / ("level_" + std::to_string(k) + ".png")).string(), to_u8(view));
    }
    const Tensor<float> back = reconstruct(p);
    float err = 0;
    for (std::size_t i = 0; i < x.size(); ++i) err = std::max(err, std::abs(back[i] - x[i]));
    std::cout << p.scales() << " levels written to " << out_dir << ", reconstruction error " << err
              << "\n";
  } else if (cost_cmd->parsed()) {
    ScheduleSpec spec = ScheduleSpec::uniform(scales);
    if (!times.empty()) {
      std::sort(times.begin(), times.end(), std::greater<>());
      spec.critical_times = times;
    }
    spec.validate();
    const CostReport r = attention_cost(n_tokens, width, spec);
    std::cout << "segment,dt,tokens\n";
    for (std::size_t j = 0; j < r.dt.size(); ++j)
      std::cout << j << ',' << r.dt[j] << ',' << r.tokens[j] << "\n";
    std::cout << std::setprecision(12) << "cost," << r.cost << "\nratio," << r.ratio << "\n";
    if (!flops_config.empty()) print_flop_report(load_run_config(flops_config), std::cout);
  } else if (metrics_cmd->parsed()) {
    const auto real = load_images(real_path);
    const auto fake = load_images(fake_path);
    const Metrics m = evaluate(fake, real, n_proj, metric_seed);
    if (metrics_out.empty()) {
      std::cout << std::setprecision(17) << "metric,value\n";
      for (const auto& [k, v] : m) std::cout << k << ',' << v << "\n";
    } else {
      write_metrics(metrics_out, m);
    }
  } else if (grad_cmd->parsed()) {
    gc.validate();
    const LapFlowObjective objective(ScheduleSpec::uniform(gc.scales));
    const GradCheckReport r = training_loss_grad_check(gc, objective, gc_seed, gc_h);
    std::cout << "checked " << r.coordinates << " parameters, max relative error "
              << r.max_rel_error << " (tolerance " << gc_tol << ")\n";
    return r.max_rel_error <= gc_tol ? 0 : 1;
  } else if (gen_cmd->parsed()) {
    dd.kind = parse_dataset_kind(kind);
    dd.validate();
    const Dataset data = gen_dataset(dd);
    if (fs::path(out_dir).extension() == ".lapd") {
      save_tensor_file(out_dir, data);
    } else {
      fs::create_directories(out_dir);
      for (std::size_t i = 0; i < data.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "img_%05zu.png", i);
        write_png((fs::path(out_dir) / name).string(), to_u8(data.images[i]));
      }
    }
    std::cout << "wrote " << data.size() << " images to " << out_dir << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
