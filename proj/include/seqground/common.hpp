#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace seqground {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string_view tool_version();

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t value);

/// SplitMix64 finalizer; used to derive independent child seeds from a base seed.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);

/// Provenance stamped into every artifact the CLI writes.
struct ArtifactMeta {
  std::uint64_t seed = 0;
  std::string config_hash;  // hex FNV-1a of the canonical config dump
  std::string command;

  json to_json() const;
};

/// Canonical hash of a config document (sorted keys, compact dump).
std::string config_hash(const json& config);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view contents);

/// Line-delimited JSON. Blank lines are skipped on read.
std::vector<json> read_jsonl(const std::filesystem::path& path);
std::string to_jsonl(const std::vector<json>& records);

/// Lowercased word tokens: maximal runs of [a-z0-9'] after lowercasing.
std::vector<std::string> word_tokens(std::string_view text);

std::string trim(std::string_view text);
std::vector<std::string> split_lines(std::string_view text);

}  // namespace seqground
