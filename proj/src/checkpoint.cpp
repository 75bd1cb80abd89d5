#include "prood/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "prood/error.hpp"

namespace prood {

using nlohmann::json;

namespace {

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t read_u32(std::string_view bytes, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  return v;
}

void append_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  append_u32(out, bits);
}

float read_f32(std::string_view bytes, std::size_t pos) {
  const std::uint32_t bits = read_u32(bytes, pos);
  float f;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

json param_entry(const char* name, const Tensor& t, std::size_t& offset) {
  json e = {{"name", name},
            {"shape", t.shape()},
            {"offset", offset},
            {"count", t.size()},
            {"dtype", "f32"}};
  offset += 4 * t.size();
  return e;
}

json layer_manifest(const Layer<float>& layer, std::size_t& offset) {
  json j = {{"type", layer_kind(layer)}};
  if (const auto* fc = std::get_if<FullyConnected<float>>(&layer)) {
    j["params"] = {param_entry("weight", fc->weight, offset), param_entry("bias", fc->bias, offset)};
  } else if (const auto* conv = std::get_if<Conv2d<float>>(&layer)) {
    j["stride"] = conv->stride;
    j["padding"] = conv->padding;
    j["params"] = {param_entry("kernel", conv->kernel, offset),
                   param_entry("bias", conv->bias, offset)};
  } else if (const auto* head = std::get_if<NegExpHead<float>>(&layer)) {
    j["params"] = {param_entry("h", head->h, offset), param_entry("bias", head->bias, offset)};
  } else if (const auto* leaky = std::get_if<LeakyReLU>(&layer)) {
    j["slope"] = leaky->slope;
  } else if (const auto* pool = std::get_if<AvgPool>(&layer)) {
    j["window"] = pool->window;
  }
  return j;
}

Tensor read_param(const json& entry, const char* expected, std::string_view data) {
  if (entry.at("name").get<std::string>() != expected) {
    throw FormatError(std::string("checkpoint: expected parameter '") + expected + "'");
  }
  if (entry.at("dtype").get<std::string>() != "f32") {
    throw FormatError("checkpoint: unsupported dtype " + entry.at("dtype").dump());
  }
  const auto shape = entry.at("shape").get<Shape>();
  const auto offset = entry.at("offset").get<std::size_t>();
  const auto count = entry.at("count").get<std::size_t>();
  if (count != shape_size(shape)) throw FormatError("checkpoint: count does not match shape");
  if (offset % 4 != 0 || offset > data.size() || count > (data.size() - offset) / 4) {
    throw FormatError("checkpoint: parameter '" + std::string(expected) + "' at byte offset " +
                      std::to_string(offset) + " exceeds the data section");
  }
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) values[i] = read_f32(data, offset + 4 * i);
  return Tensor(shape, std::move(values));
}

Layer<float> read_layer(const json& j, std::string_view data) {
  const auto type = j.at("type").get<std::string>();
  if (type == "fc") {
    const auto& p = j.at("params");
    return FullyConnected<float>{read_param(p.at(0), "weight", data),
                                 read_param(p.at(1), "bias", data)};
  }
  if (type == "conv2d") {
    const auto& p = j.at("params");
    return Conv2d<float>{read_param(p.at(0), "kernel", data), read_param(p.at(1), "bias", data),
                         j.at("stride").get<std::size_t>(), j.at("padding").get<std::size_t>()};
  }
  if (type == "negexp_head") {
    const auto& p = j.at("params");
    return NegExpHead<float>{read_param(p.at(0), "h", data), read_param(p.at(1), "bias", data)};
  }
  if (type == "relu") return ReLU{};
  if (type == "leaky_relu") return LeakyReLU{j.at("slope").get<double>()};
  if (type == "avgpool") return AvgPool{j.at("window").get<std::size_t>()};
  if (type == "flatten") return Flatten{};
  throw FormatError("checkpoint: unknown layer type '" + type + "'");
}

}  // namespace

const Network& Checkpoint::network(const std::string& tag) const {
  for (const auto& n : networks) {
    if (n.tag == tag) return n.net;
  }
  throw FormatError("checkpoint has no network tagged '" + tag + "'");
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  json manifest;
  manifest["format"] = "PROOD1";
  manifest["networks"] = json::array();
  std::size_t offset = 0;
  std::string data;
  for (const auto& tn : ckpt.networks) {
    json net = {{"tag", tn.tag}, {"input_shape", tn.net.input_shape()}};
    net["layers"] = json::array();
    for (const auto& layer : tn.net.layers()) net["layers"].push_back(layer_manifest(layer, offset));
    for (const auto* p : tn.net.parameters()) {
      for (float v : *p) append_f32(data, v);
    }
    manifest["networks"].push_back(std::move(net));
  }
  if (ckpt.delta) manifest["delta"] = *ckpt.delta;

  const std::string header = manifest.dump();
  std::string out(kCheckpointMagic);
  append_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  out += data;
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  const std::size_t magic_len = kCheckpointMagic.size();
  if (bytes.size() < magic_len + 4 || bytes.substr(0, magic_len) != kCheckpointMagic) {
    throw FormatError("checkpoint: bad magic at byte offset 0");
  }
  const std::uint32_t len = read_u32(bytes, magic_len);
  const std::size_t header_start = magic_len + 4;
  if (len > bytes.size() - header_start) {
    throw FormatError("checkpoint: manifest length " + std::to_string(len) +
                      " exceeds file size at byte offset " + std::to_string(magic_len));
  }
  json manifest;
  try {
    manifest = json::parse(bytes.substr(header_start, len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  const std::string_view data = bytes.substr(header_start + len);

  Checkpoint ckpt;
  try {
    for (const auto& net : manifest.at("networks")) {
      std::vector<Layer<float>> layers;
      for (const auto& lj : net.at("layers")) layers.push_back(read_layer(lj, data));
      ckpt.networks.push_back(
          {net.at("tag").get<std::string>(),
           Network(net.at("input_shape").get<Shape>(), std::move(layers))});
    }
    if (manifest.contains("delta")) ckpt.delta = manifest.at("delta").get<double>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed manifest: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint: inconsistent layer shapes: ") + e.what());
  }
  return ckpt;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace prood
