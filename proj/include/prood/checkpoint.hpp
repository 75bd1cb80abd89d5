#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "prood/layers.hpp"

namespace prood {

/// PROOD1 container:
///   "PROOD1\n" | u32 little-endian manifest length | JSON manifest | f32 LE parameter data
/// The manifest lists every network (tagged "classifier" / "discriminator") with its
/// layers; each parameter entry records name, shape, byte offset into the data
/// section, element count and dtype "f32". A NegExpHead stores h and bias only.
struct TaggedNetwork {
  std::string tag;
  Network net;
};

struct Checkpoint {
  std::vector<TaggedNetwork> networks;
  std::optional<double> delta;

  const Network& network(const std::string& tag) const;
};

inline constexpr std::string_view kCheckpointMagic = "PROOD1\n";

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

}  // namespace prood
