#pragma once

// Binary parameter checkpoint.
//
//   "MASHCKPT" | u32 version | u32 meta_len | meta (JSON text) | u32 block_count |
//   per block: u32 name_len | name | u64 rows | u64 cols | rows*cols f64 (column-major)
//
// Integers and doubles are little-endian; doubles are stored as raw IEEE-754 bit
// patterns, so a save/load round trip is bit-exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "json.hpp"
#include "mashost/error.hpp"
#include "mashost/policy.hpp"

namespace mashost {

inline constexpr char kCheckpointMagic[8] = {'M', 'A', 'S', 'H', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian");

struct Checkpoint {
  PolicyParams params;
  nlohmann::json meta = nlohmann::json::object();
};

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ValidationError("checkpoint truncated");
  return v;
}

inline std::string get_string(std::istream& is, std::size_t n) {
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n)))
    throw ValidationError("checkpoint truncated");
  return s;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  const std::string meta = ck.meta.dump();
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(meta.size()));
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  const auto blocks = ck.params.blocks();
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(b.name.size()));
    os.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    detail::put<std::uint64_t>(os, static_cast<std::uint64_t>(b.rows));
    detail::put<std::uint64_t>(os, static_cast<std::uint64_t>(b.cols));
    os.write(reinterpret_cast<const char*>(b.data),
             static_cast<std::streamsize>(b.size() * static_cast<Eigen::Index>(sizeof(double))));
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw ValidationError("not a checkpoint file");
  if (auto v = detail::get<std::uint32_t>(is); v != kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(v));
  Checkpoint ck;
  const auto meta_len = detail::get<std::uint32_t>(is);
  try {
    ck.meta = nlohmann::json::parse(detail::get_string(is, meta_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("checkpoint metadata: ") + e.what());
  }

  const auto count = detail::get<std::uint32_t>(is);
  std::vector<std::pair<std::string, MatrixXd>> raw;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = detail::get_string(is, detail::get<std::uint32_t>(is));
    const auto rows = detail::get<std::uint64_t>(is);
    const auto cols = detail::get<std::uint64_t>(is);
    if (rows * cols > (1ULL << 28)) throw ValidationError("checkpoint block too large");
    MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!is.read(reinterpret_cast<char*>(m.data()),
                 static_cast<std::streamsize>(rows * cols * sizeof(double))))
      throw ValidationError("checkpoint truncated");
    raw.emplace_back(std::move(name), std::move(m));
  }
  if (raw.size() != 8) throw ValidationError("checkpoint must hold 8 parameter blocks");
  const char* expected[] = {"node.w1", "node.b1", "node.w2", "node.b2",
                            "edge.w1", "edge.b1", "edge.w2", "edge.b2"};
  for (std::size_t i = 0; i < 8; ++i)
    if (raw[i].first != expected[i]) throw ValidationError("unexpected block " + raw[i].first);

  auto& p = ck.params;
  p.node.w1 = raw[0].second;
  p.node.b1 = raw[1].second.col(0);
  p.node.w2 = raw[2].second;
  p.node.b2 = raw[3].second.col(0);
  p.edge.w1 = raw[4].second;
  p.edge.b1 = raw[5].second.col(0);
  p.edge.w2 = raw[6].second;
  p.edge.b2 = raw[7].second.col(0);
  const bool consistent = p.node.b1.size() == p.node.w1.rows() && p.node.w2.cols() == p.node.w1.rows() &&
                          p.node.b2.size() == p.node.w2.rows() && p.edge.w1.cols() == p.node.w1.cols() &&
                          p.edge.b1.size() == p.edge.w1.rows() && p.edge.w2.cols() == p.edge.w1.rows() &&
                          p.edge.w2.rows() == 1 && p.edge.b2.size() == 1 && p.node.w2.rows() >= 3;
  if (!consistent) throw ValidationError("checkpoint block shapes are inconsistent");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write checkpoint: " + path);
  write_checkpoint(os, ck);
  if (!os) throw Error("failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint: " + path);
  return read_checkpoint(is);
}

// Structured-text dump (shapes + values) for inspection/export.
inline nlohmann::ordered_json checkpoint_to_json(const Checkpoint& ck) {
  nlohmann::ordered_json j;
  j["version"] = kCheckpointVersion;
  j["meta"] = ck.meta;
  j["blocks"] = nlohmann::ordered_json::array();
  for (const auto& b : ck.params.blocks()) {
    nlohmann::ordered_json blk;
    blk["name"] = b.name;
    blk["shape"] = {b.rows, b.cols};
    blk["values"] = std::vector<double>(b.data, b.data + b.size());
    j["blocks"].push_back(std::move(blk));
  }
  return j;
}

}  // namespace mashost
