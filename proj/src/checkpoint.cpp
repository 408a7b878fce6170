#include "tabrec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "tabrec/config.hpp"
#include "tabrec/errors.hpp"

namespace tabrec {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "tabrec-checkpoint";
constexpr int kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_floats(std::string& out, std::span<const float> values) {
  for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TableModel<float>& model, const Adam<float>* optimizer,
                     const TrainingState& state) {
  const auto& entries = model.parameters().entries();
  if (optimizer && optimizer->slots() != entries.size()) {
    throw std::invalid_argument("save_checkpoint: optimizer has " + std::to_string(optimizer->slots()) +
                                " slots for " + std::to_string(entries.size()) + " parameters");
  }
  json manifest = json::array();
  std::string blob;
  auto append = [&](const std::string& name, const Shape& shape, std::span<const float> values) {
    manifest.push_back({{"name", name}, {"shape", shape}, {"offset", blob.size()}});
    put_floats(blob, values);
  };
  for (const auto& [name, t] : entries) append(name, t.shape(), t.data());
  if (optimizer) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      append("adam.m/" + entries[i].first, entries[i].second.shape(), optimizer->first_moment(i));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
      append("adam.v/" + entries[i].first, entries[i].second.shape(), optimizer->second_moment(i));
    }
  }
  json header{
      {"format", kFormat},
      {"version", kVersion},
      {"config", to_json(model.config())},
      {"manifest", manifest},
      {"optimizer", optimizer ? json{{"step", optimizer->step_count()},
                                     {"beta1", optimizer->config().beta1},
                                     {"beta2", optimizer->config().beta2},
                                     {"eps", optimizer->config().eps}}
                              : json(nullptr)},
      {"step", state.step},
      {"seed", state.seed},
      {"epoch", state.epoch},
  };
  const std::string text = header.dump();
  std::string out;
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xFF));
  out += text;
  out += blob;

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 8) throw FormatError("checkpoint " + path.string() + " is truncated");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(raw[i]) << (8 * i);
  if (len > bytes.size() - 8) throw FormatError("checkpoint header length exceeds file size");

  json header;
  try {
    header = json::parse(bytes.substr(8, len));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  Checkpoint ck;
  try {
    if (header.at("format") != kFormat || header.at("version") != kVersion) {
      throw FormatError("unsupported checkpoint format or version");
    }
    ck.state.step = header.at("step").get<std::uint64_t>();
    ck.state.seed = header.at("seed").get<std::uint64_t>();
    ck.state.epoch = header.at("epoch").get<int>();
    ModelConfig config;
    try {
      config = model_config_from_json(header.at("config"));
    } catch (const ConfigError& e) {
      throw FormatError(std::string("checkpoint config: ") + e.what());
    }
    ck.model = std::make_unique<TableModel<float>>(config, ck.state.seed);
    const auto& entries = ck.model->parameters().entries();
    const json& manifest = header.at("manifest");
    const bool has_opt = !header.at("optimizer").is_null();
    const std::size_t expected = entries.size() * (has_opt ? 3 : 1);
    if (manifest.size() != expected) {
      throw FormatError("checkpoint manifest has " + std::to_string(manifest.size()) + " entries, expected " +
                        std::to_string(expected));
    }
    const std::size_t blob_start = 8 + len;
    auto read_into = [&](const json& entry, const std::string& name, const Shape& shape, std::span<float> dst) {
      if (entry.at("name") != name || entry.at("shape").get<Shape>() != shape) {
        throw FormatError("checkpoint manifest entry " + entry.dump() + " does not match parameter " + name + " " +
                          shape_str(shape));
      }
      const std::size_t off = blob_start + entry.at("offset").get<std::size_t>();
      if (off + dst.size() * 4 > bytes.size()) throw FormatError("checkpoint blob for " + name + " is truncated");
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::bit_cast<float>(get_u32(raw + off + 4 * i));
    };
    for (std::size_t i = 0; i < entries.size(); ++i) {
      Tensor<float> t = entries[i].second;
      read_into(manifest[i], entries[i].first, t.shape(), t.mutable_data());
    }
    if (has_opt) {
      const json& o = header.at("optimizer");
      ck.optimizer = std::make_unique<Adam<float>>(
          ck.model->parameters().tensors(),
          AdamConfig{o.at("beta1").get<double>(), o.at("beta2").get<double>(), o.at("eps").get<double>()});
      ck.optimizer->set_step_count(o.at("step").get<std::uint64_t>());
      const std::size_t n = entries.size();
      for (std::size_t i = 0; i < n; ++i) {
        read_into(manifest[n + i], "adam.m/" + entries[i].first, entries[i].second.shape(),
                  ck.optimizer->first_moment(i));
        read_into(manifest[2 * n + i], "adam.v/" + entries[i].first, entries[i].second.shape(),
                  ck.optimizer->second_moment(i));
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header is malformed: ") + e.what());
  }
  return ck;
}

}  // namespace tabrec
