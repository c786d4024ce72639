#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace safecfg {

// Little-endian binary container shared by dataset, vocab and checkpoint
// files: 8-byte magic, u32 version, JSON header, then tagged raw blocks.
// Doubles are written bit-exact.
struct Envelope {
  std::string magic;  // exactly 8 bytes
  uint32_t version = 1;
  nlohmann::ordered_json header;
  std::vector<std::vector<double>> double_blocks;
  std::vector<std::vector<int32_t>> int_blocks;
};

void write_envelope(const std::string& path, const Envelope& env);

// Throws std::runtime_error on missing file, wrong magic, unsupported
// version, or truncation; messages identify the failure.
Envelope read_envelope(const std::string& path, const std::string& expected_magic,
                       uint32_t expected_version);

inline constexpr uint32_t kFormatVersion = 1;
inline const char* kDatasetMagic = "SCFGDATA";
inline const char* kVocabMagic = "SCFGVOCB";
inline const char* kCheckpointMagic = "SCFGCKPT";

}  // namespace safecfg
