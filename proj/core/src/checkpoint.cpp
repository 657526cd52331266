#include "lapflow/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "internal/json_io.hpp"
#include "lapflow/error.hpp"

namespace lapflow {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little endian");

constexpr char kMagic[4] = {'L', 'A', 'P', 'F'};

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U take(std::istream& is, const std::string& path) {
  U v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw std::runtime_error(path + ": truncated checkpoint");
  }
  return v;
}

detail::json tensor_entries(const std::vector<NamedTensor<float>>& ts) {
  detail::json arr = detail::json::array();
  for (const auto& t : ts) {
    arr.push_back({{"name", t.name}, {"shape", t.value.shape()}, {"dtype", "f32"}});
  }
  return arr;
}

std::vector<NamedTensor<float>> read_entries(const detail::json& arr, std::istream& is,
                                             const std::string& path) {
  std::vector<NamedTensor<float>> out;
  for (const auto& e : arr) {
    if (e.at("dtype").get<std::string>() != "f32") {
      throw std::runtime_error(path + ": unsupported dtype for " + e.at("name").get<std::string>());
    }
    Tensor<float> t(e.at("shape").get<Shape>());
    if (!is.read(reinterpret_cast<char*>(t.data().data()),
                 static_cast<std::streamsize>(t.size() * sizeof(float)))) {
      throw std::runtime_error(path + ": truncated payload for " + e.at("name").get<std::string>());
    }
    out.push_back({e.at("name").get<std::string>(), std::move(t)});
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  detail::json header;
  header["format"] = "lapflow-checkpoint";
  header["method"] = ckpt.method;
  header["step"] = ckpt.step;
  header["model"] = detail::to_json(ckpt.model);
  header["schedule"] = detail::to_json(ckpt.schedule);
  header["run_config"] = detail::json::parse(ckpt.run_config);
  header["params"] = tensor_entries(ckpt.params);
  header["ema"] = tensor_entries(ckpt.ema);
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* group : {&ckpt.params, &ckpt.ema}) {
    for (const auto& t : *group) {
      os.write(reinterpret_cast<const char*>(t.value.data().data()),
               static_cast<std::streamsize>(t.value.size() * sizeof(float)));
    }
  }
  if (!os) throw std::runtime_error("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error(path + ": not a lapflow checkpoint");
  }
  const auto version = take<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = take<std::uint64_t>(is, path);
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) {
    throw std::runtime_error(path + ": truncated header");
  }
  const detail::json header = detail::json::parse(text);
  Checkpoint ck;
  ck.method = header.at("method").get<std::string>();
  ck.step = header.at("step").get<std::uint64_t>();
  detail::ObjectReader mr(header.at("model"), "model");
  detail::read_model(mr, ck.model);
  detail::ObjectReader sr(header.at("schedule"), "schedule");
  detail::read_schedule(sr, ck.schedule, true);
  ck.run_config = header.at("run_config").dump();
  ck.params = read_entries(header.at("params"), is, path);
  ck.ema = read_entries(header.at("ema"), is, path);
  return ck;
}

MoTModel<float> model_from_checkpoint(const Checkpoint& ckpt, bool use_ema) {
  MoTModel<float> model(ckpt.model);
  const auto& src = (use_ema && !ckpt.ema.empty()) ? ckpt.ema : ckpt.params;
  if (src.size() != model.params().size()) {
    throw DimensionError("checkpoint holds " + std::to_string(src.size()) +
                         " tensors, model expects " + std::to_string(model.params().size()));
  }
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto& dst = model.params()[i];
    if (dst.name != src[i].name || dst.value.shape() != src[i].value.shape()) {
      throw DimensionError("checkpoint tensor '" + src[i].name + "' " +
                           shape_str(src[i].value.shape()) + " does not match model tensor '" +
                           dst.name + "' " + shape_str(dst.value.shape()));
    }
    dst.value = src[i].value;
  }
  return model;
}

}  // namespace lapflow
