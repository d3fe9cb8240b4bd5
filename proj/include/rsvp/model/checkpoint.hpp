#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rsvp/numerics/optim.hpp"

namespace rsvp::model {

enum class StageTag { retrieval, generation, finetuned };

std::string_view to_string(StageTag s);
StageTag parse_stage_tag(std::string_view name);

// Warning text when a checkpoint from a later stage is loaded into an
// earlier one; nullopt otherwise.
std::optional<std::string> stage_warning(StageTag file_stage, StageTag target);

template <typename T>
constexpr std::string_view precision_name();
template <>
constexpr std::string_view precision_name<float>() { return "float32"; }
template <>
constexpr std::string_view precision_name<double>() { return "float64"; }

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Raw little-endian payload of one named parameter.
struct CheckpointBlob {
  std::string name;
  num::Shape shape;
  std::uint64_t step = 0;
  std::vector<std::uint8_t> value;
  std::vector<std::uint8_t> first_moment;  // empty reads back as zeros
  std::vector<std::uint8_t> second_moment;
};

struct Checkpoint {
  StageTag stage = StageTag::retrieval;
  std::string precision;
  nlohmann::json header;  // caller-supplied metadata (config, vocab, labels...)
  std::vector<CheckpointBlob> blobs;

  const CheckpointBlob* find(std::string_view name) const;
};

// Layout: "RSVPCKPT", u32 version, u64 header length, JSON header, u64 blob
// count, blobs, u64 FNV-1a of all preceding bytes.
template <typename T>
void write_checkpoint(const std::filesystem::path& path, StageTag stage,
                      const nlohmann::json& header,
                      std::span<const num::Parameter<T>* const> params);

std::vector<std::uint8_t> serialize_checkpoint_bytes(const Checkpoint& ckpt);
Checkpoint parse_checkpoint_bytes(std::span<const std::uint8_t> bytes);

// Throws IntegrityError on bad magic, version, truncation or checksum.
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Fills each target from the blob of the same name (values, moments, step).
// Blobs with no matching target are ignored.
template <typename T>
void restore_parameters(const Checkpoint& ckpt, std::span<num::Parameter<T>* const> targets);

template <typename T>
CheckpointBlob make_blob(const num::Parameter<T>& p);

}  // namespace rsvp::model
