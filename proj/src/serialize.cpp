#include "safecfg/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace safecfg {

namespace {

void put_bytes(std::ofstream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void get_bytes(std::ifstream& is, void* p, size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) {
    throw std::runtime_error(std::string("envelope: truncated file while reading ") + what);
  }
}

template <typename T>
void put_pod(std::ofstream& os, T v) {
  put_bytes(os, &v, sizeof(T));
}

template <typename T>
T get_pod(std::ifstream& is, const char* what) {
  T v;
  get_bytes(is, &v, sizeof(T), what);
  return v;
}

}  // namespace

void write_envelope(const std::string& path, const Envelope& env) {
  if (env.magic.size() != 8) throw std::runtime_error("envelope: magic must be 8 bytes");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("envelope: cannot open for write: " + path);
  put_bytes(os, env.magic.data(), 8);
  put_pod<uint32_t>(os, env.version);
  std::string header = env.header.dump();
  put_pod<uint64_t>(os, header.size());
  put_bytes(os, header.data(), header.size());
  put_pod<uint32_t>(os, static_cast<uint32_t>(env.double_blocks.size()));
  for (const auto& blk : env.double_blocks) {
    put_pod<uint64_t>(os, blk.size());
    put_bytes(os, blk.data(), blk.size() * sizeof(double));
  }
  put_pod<uint32_t>(os, static_cast<uint32_t>(env.int_blocks.size()));
  for (const auto& blk : env.int_blocks) {
    put_pod<uint64_t>(os, blk.size());
    put_bytes(os, blk.data(), blk.size() * sizeof(int32_t));
  }
  if (!os) throw std::runtime_error("envelope: write failed: " + path);
}

Envelope read_envelope(const std::string& path, const std::string& expected_magic,
                       uint32_t expected_version) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("envelope: cannot open: " + path);
  Envelope env;
  char magic[8];
  get_bytes(is, magic, 8, "magic");
  env.magic.assign(magic, 8);
  if (env.magic != expected_magic) {
    throw std::runtime_error("envelope: bad magic in " + path + " (expected " + expected_magic +
                             ", got " + env.magic + ")");
  }
  env.version = get_pod<uint32_t>(is, "version");
  if (env.version != expected_version) {
    throw std::runtime_error("envelope: unsupported version " + std::to_string(env.version) +
                             " in " + path);
  }
  uint64_t hlen = get_pod<uint64_t>(is, "header length");
  std::string header(hlen, '\0');
  get_bytes(is, header.data(), hlen, "header");
  try {
    env.header = nlohmann::ordered_json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("envelope: corrupt JSON header in " + path + ": " + e.what());
  }
  uint32_t nd = get_pod<uint32_t>(is, "double block count");
  env.double_blocks.resize(nd);
  for (auto& blk : env.double_blocks) {
    uint64_t n = get_pod<uint64_t>(is, "double block length");
    blk.resize(n);
    get_bytes(is, blk.data(), n * sizeof(double), "double block");
  }
  uint32_t ni = get_pod<uint32_t>(is, "int block count");
  env.int_blocks.resize(ni);
  for (auto& blk : env.int_blocks) {
    uint64_t n = get_pod<uint64_t>(is, "int block length");
    blk.resize(n);
    get_bytes(is, blk.data(), n * sizeof(int32_t), "int block");
  }
  return env;
}

}  // namespace safecfg
