#include "lapflow/runconfig.hpp"

#include <fstream>
#include <sstream>

#include "internal/json_io.hpp"
#include "lapflow/analysis.hpp"
#include "lapflow/error.hpp"

namespace lapflow {

namespace {

using detail::json;
using detail::ObjectReader;

const std::vector<std::string> kMethods{"lapflow", "lfm", "edify", "pyramidal"};
const std::vector<std::string> kStages{"train", "sample", "eval"};

bool staged(const std::string& method) { return method == "edify" || method == "pyramidal"; }

LrSchedule parse_lr(const std::string& s) {
  if (s == "cosine") return LrSchedule::cosine;
  if (s == "constant") return LrSchedule::constant;
  throw ConfigError("train.lr_schedule", "unknown schedule '" + s + "' (expected cosine or constant)");
}

LossReduction parse_reduction(const std::string& s) {
  if (s == "mean") return LossReduction::mean;
  if (s == "sum") return LossReduction::sum;
  throw ConfigError("train.reduction", "unknown reduction '" + s + "' (expected mean or sum)");
}

void read_dataset(ObjectReader r, DatasetDescriptor& d) {
  std::string kind;
  r.require("kind", kind);
  d.kind = parse_dataset_kind(kind);
  r.require("image_size", d.image_size);
  r.get("channels", d.channels);
  r.get("count", d.count);
  r.get("seed", d.seed);
  r.get("path", d.path);
  r.finish();
}

void read_train(ObjectReader r, TrainConfig& t) {
  r.get("batch_size", t.batch_size);
  r.get("steps", t.steps);
  r.get("lr", t.lr);
  r.get("final_lr", t.final_lr);
  std::string s;
  if (r.get("lr_schedule", s)) t.lr_schedule = parse_lr(s);
  r.get("ema_decay", t.ema_decay);
  r.get("weight_decay", t.weight_decay);
  r.get("beta1", t.beta1);
  r.get("beta2", t.beta2);
  r.get("adam_eps", t.adam_eps);
  r.get("grad_clip", t.grad_clip);
  r.get("loss_weights", t.loss_weights);
  if (r.get("reduction", s)) t.reduction = parse_reduction(s);
  r.get("cfg_dropout", t.cfg_dropout);
  r.get("log_every", t.log_every);
  r.finish();
}

void read_solver(ObjectReader r, SolverConfig& s) {
  std::string kind;
  if (r.get("kind", kind)) s.kind = parse_solver(kind);
  r.get("rtol", s.rtol);
  r.get("atol", s.atol);
  r.get("steps", s.steps);
  r.get("min_step", s.min_step);
  r.get("max_steps", s.max_steps);
  r.finish();
}

void read_sample(ObjectReader r, RunConfig& c) {
  r.get("count", c.sample.count);
  if (r.get("seed", c.sample.seed)) c.sample_seed_set = true;
  r.get("cfg", c.sample.cfg_scale);
  r.get("labels", c.sample.labels);
  r.get("use_ema", c.sample.use_ema);
  std::string jump;
  if (r.get("pf_jump", jump)) c.sample.pf_jump = parse_pf_jump(jump);
  bool per_scale = false;
  if (r.get("cfg_per_scale", per_scale) && per_scale) {
    throw ConfigError("sample.cfg_per_scale", "reserved; guidance is uniform over active scales");
  }
  r.finish();
}

// Fills the model fields implied by the method, dataset and schedule, and
// rejects explicit values that disagree.
void derive_model(const ObjectReader* given, RunConfig& c) {
  const std::size_t K = c.schedule.scales;
  const std::pair<const char*, std::size_t> derived[] = {
      {"scales", staged(c.method) ? 1 : K},
      {"num_stages", staged(c.method) ? K : 0},
      {"image_size", c.dataset.image_size},
      {"channels", c.dataset.channels},
  };
  ModelConfig& m = c.model;
  std::size_t* fields[] = {&m.scales, &m.num_stages, &m.image_size, &m.channels};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& [key, value] = derived[i];
    if (given && given->has(key) && *fields[i] != value) {
      throw ConfigError(std::string("model.") + key,
                        "is " + std::to_string(*fields[i]) + " but the " + c.method +
                            " run implies " + std::to_string(value));
    }
    *fields[i] = value;
  }
}

}  // namespace

void RunConfig::validate() const {
  if (std::find(kMethods.begin(), kMethods.end(), method) == kMethods.end()) {
    throw ConfigError("method", "unknown method '" + method +
                                    "' (expected lapflow, lfm, edify or pyramidal)");
  }
  dataset.validate();
  schedule.validate();
  if (method == "lfm" && schedule.scales != 1) {
    throw ConfigError("schedule.scales", "the lfm baseline is single-scale (scales = 1)");
  }
  model.validate();
  const std::size_t K = schedule.scales;
  const std::size_t unit = (std::size_t{1} << (K - 1)) * model.patch;
  if (dataset.image_size % unit != 0) {
    throw ConfigError("dataset.image_size", "must be divisible by 2^(K-1) * patch = " +
                                                std::to_string(unit));
  }
  train.validate();
  if (!train.loss_weights.empty() && train.loss_weights.size() != model.scales) {
    throw ConfigError("train.loss_weights", "expected " + std::to_string(model.scales) +
                                                " weights, got " +
                                                std::to_string(train.loss_weights.size()));
  }
  solver.validate();
  sample.validate();
  if (sample.cfg_scale > 1.0 && model.num_classes == 0) {
    throw ConfigError("sample.cfg", "guidance needs model.num_classes > 0");
  }
  for (std::size_t l : sample.labels) {
    if (l >= model.num_classes) {
      throw ConfigError("sample.labels", "label " + std::to_string(l) + " outside " +
                                             std::to_string(model.num_classes) + " classes");
    }
  }
  for (const auto& s : stages) {
    if (std::find(kStages.begin(), kStages.end(), s) == kStages.end()) {
      throw ConfigError("stages", "unknown stage '" + s + "' (expected train, sample or eval)");
    }
  }
  if (std::find(stages.begin(), stages.end(), "eval") != stages.end() &&
      eval.samples < kMinMetricSamples) {
    throw ConfigError("eval.samples", "metrics need at least " + std::to_string(kMinMetricSamples) +
                                          " samples");
  }
  if (eval.n_proj == 0) throw ConfigError("eval.n_proj", "must be positive");
}

RunConfig parse_run_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("malformed JSON: ") + e.what());
  }
  ObjectReader r(root, "");
  RunConfig c;
  r.require("method", c.method);
  if (std::find(kMethods.begin(), kMethods.end(), c.method) == kMethods.end()) {
    throw ConfigError("method", "unknown method '" + c.method +
                                    "' (expected lapflow, lfm, edify or pyramidal)");
  }
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);

  if (!r.has("dataset")) throw ConfigError("dataset.kind", "required key is missing");
  read_dataset(r.child("dataset"), c.dataset);
  if (!r.has("schedule")) throw ConfigError("schedule.scales", "required key is missing");
  {
    ObjectReader sr = r.child("schedule");
    detail::read_schedule(sr, c.schedule, true);
  }
  if (r.has("model")) {
    ObjectReader mr = r.child("model");
    detail::read_model(mr, c.model);
    derive_model(&mr, c);
  } else {
    derive_model(nullptr, c);
  }
  if (r.has("train")) read_train(r.child("train"), c.train);
  if (r.has("solver")) read_solver(r.child("solver"), c.solver);
  if (r.has("sample")) read_sample(r.child("sample"), c);
  if (!c.sample_seed_set) c.sample.seed = c.seed;
  c.sample.solver = c.solver;
  if (r.has("edify")) {
    ObjectReader er = r.child("edify");
    std::string m;
    if (er.get("mean_schedule", m)) c.edify_mean = parse_mean_schedule(m);
    er.finish();
  }
  if (r.has("eval")) {
    ObjectReader er = r.child("eval");
    er.get("samples", c.eval.samples);
    er.get("n_proj", c.eval.n_proj);
    er.finish();
  }
  r.get("stages", c.stages);
  r.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("", path + ": cannot read config file");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_json_string(const RunConfig& c) {
  json j;
  j["method"] = c.method;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["dataset"] = {{"kind", to_string(c.dataset.kind)}, {"image_size", c.dataset.image_size},
                  {"channels", c.dataset.channels},    {"count", c.dataset.count},
                  {"seed", c.dataset.seed},            {"path", c.dataset.path}};
  j["model"] = detail::to_json(c.model);
  j["schedule"] = detail::to_json(c.schedule);
  const TrainConfig& t = c.train;
  j["train"] = {{"batch_size", t.batch_size},
                {"steps", t.steps},
                {"lr", t.lr},
                {"final_lr", t.final_lr},
                {"lr_schedule", t.lr_schedule == LrSchedule::cosine ? "cosine" : "constant"},
                {"ema_decay", t.ema_decay},
                {"weight_decay", t.weight_decay},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"adam_eps", t.adam_eps},
                {"grad_clip", t.grad_clip},
                {"loss_weights", t.loss_weights},
                {"reduction", t.reduction == LossReduction::mean ? "mean" : "sum"},
                {"cfg_dropout", t.cfg_dropout},
                {"log_every", t.log_every}};
  j["solver"] = {{"kind", to_string(c.solver.kind)}, {"rtol", c.solver.rtol},
                 {"atol", c.solver.atol},            {"steps", c.solver.steps},
                 {"min_step", c.solver.min_step},    {"max_steps", c.solver.max_steps}};
  j["sample"] = {{"count", c.sample.count},     {"seed", c.sample.seed},
                 {"cfg", c.sample.cfg_scale},   {"labels", c.sample.labels},
                 {"use_ema", c.sample.use_ema}, {"pf_jump", to_string(c.sample.pf_jump)},
                 {"cfg_per_scale", false}};
  j["edify"] = {{"mean_schedule", to_string(c.edify_mean)}};
  j["eval"] = {{"samples", c.eval.samples}, {"n_proj", c.eval.n_proj}};
  j["stages"] = c.stages;
  return j.dump(2);
}

void apply_seed_override(RunConfig& c, const char* value) {
  if (!value) return;
  const std::string s(value);
  std::size_t used = 0;
  std::uint64_t seed = 0;
  try {
    seed = std::stoull(s, &used, 10);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size() || s.front() == '-') {
    throw ConfigError("seed", "LAPFLOW_SEED must be a non-negative integer, got '" + s + "'");
  }
  c.seed = seed;
  if (!c.sample_seed_set) c.sample.seed = seed;
}

std::shared_ptr<const Objective> make_objective(const RunConfig& c) {
  if (c.method == "edify") {
    EdifySpec spec;
    spec.schedule = c.schedule;
    spec.mean = c.edify_mean;
    return std::make_shared<EdifyObjective>(spec);
  }
  if (c.method == "pyramidal") {
    return std::make_shared<PyramidalObjective>(PyramidalSpec::from_schedule(c.schedule));
  }
  return std::make_shared<LapFlowObjective>(c.schedule);
}

}  // namespace lapflow
