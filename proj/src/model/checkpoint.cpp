#include "fbd/checkpoint.hpp"

#include <cstring>

#include "fbd/binary_io.hpp"
#include "fbd/errors.hpp"

namespace fbd {

namespace {

constexpr char kMagic[8] = {'F', 'B', 'D', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put_floats(std::vector<unsigned char>& out, std::span<const T> values) {
  for (T v : values) bin::put<float>(out, static_cast<float>(v));
}

template <typename T>
void get_floats(bin::Reader& in, std::span<T> values) {
  for (auto& v : values) v = static_cast<T>(in.get<float>());
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const CascadeModel<T>& model) {
  std::vector<unsigned char> out;
  bin::put_bytes(out, kMagic, sizeof(kMagic));
  bin::put<std::uint32_t>(out, kCheckpointVersion);
  const std::string config = nlohmann::json(model.config()).dump();
  bin::put<std::uint64_t>(out, config.size());
  bin::put_bytes(out, config.data(), config.size());
  const auto& params = model.parameters();
  bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    bin::put_bytes(out, p.name.data(), p.name.size());
    bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.ndim()));
    for (auto d : p.tensor.shape()) bin::put<std::int64_t>(out, d);
    put_floats<T>(out, p.tensor.data());
  }
  bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.task_weights().size()));
  put_floats<T>(out, model.task_weights().data());
  bin::write_file(path, out);
}

template <typename T>
CascadeModel<T> load_checkpoint(const std::string& path) {
  const auto bytes = bin::read_file(path);
  bin::Reader in(bytes.data(), bytes.size(), "checkpoint '" + path + "'");
  if (std::memcmp(in.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("'" + path + "' is not a checkpoint (bad magic)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto config_len = in.get<std::uint64_t>();
  if (config_len > in.remaining()) throw FormatError("checkpoint config block truncated");
  const auto* cfg = reinterpret_cast<const char*>(in.take(static_cast<std::size_t>(config_len)));
  ModelConfig config;
  try {
    config = nlohmann::json::parse(cfg, cfg + config_len).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config block: ") + e.what());
  }
  CascadeModel<T> model(config, 0);
  const auto& params = model.parameters();
  const auto count = in.get<std::uint32_t>();
  if (count != params.size()) {
    throw FormatError("checkpoint has " + std::to_string(count) + " parameters, config implies " +
                      std::to_string(params.size()));
  }
  for (const auto& p : params) {
    const auto name_len = in.get<std::uint32_t>();
    const auto* name = reinterpret_cast<const char*>(in.take(name_len));
    if (std::string(name, name_len) != p.name) {
      throw FormatError("checkpoint parameter '" + std::string(name, name_len) + "' where '" + p.name +
                        "' was expected");
    }
    const auto ndim = in.get<std::uint32_t>();
    Shape shape(ndim);
    for (auto& d : shape) d = in.get<std::int64_t>();
    if (shape != p.tensor.shape()) {
      throw FormatError("checkpoint parameter '" + p.name + "' has shape " + shape_str(shape) + ", expected " +
                        shape_str(p.tensor.shape()));
    }
    Tensor<T> handle = p.tensor;  // shares storage
    get_floats<T>(in, handle.mutable_data());
  }
  const auto w_len = in.get<std::uint32_t>();
  if (static_cast<std::int64_t>(w_len) != model.task_weights().size()) {
    throw FormatError("checkpoint w vector has length " + std::to_string(w_len));
  }
  get_floats<T>(in, model.task_weights().mutable_data());
  if (in.remaining() != 0) throw FormatError("trailing bytes after checkpoint payload");
  return model;
}

template void save_checkpoint(const std::string&, const CascadeModel<float>&);
template void save_checkpoint(const std::string&, const CascadeModel<double>&);
template CascadeModel<float> load_checkpoint(const std::string&);
template CascadeModel<double> load_checkpoint(const std::string&);

}  // namespace fbd
