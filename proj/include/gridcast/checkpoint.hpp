// Checkpoint format:
//   "GCKP" | version u8 | StackConfig fields as LE u32
//   (num_layers, hidden_channels, kernel_size, input_channels, in_len,
//   out_len) | parameter records until EOF.
// Each record: name_len u32 | name | dim_count u32 | dims u32... |
// little-endian IEEE-754 float32 payload. Round trips are bit exact.
#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "gridcast/data.hpp"
#include "gridcast/model.hpp"

namespace gridcast {

inline constexpr char kCkptMagic[4] = {'G', 'C', 'K', 'P'};
inline constexpr std::uint8_t kCkptVersion = 1;

namespace detail {

inline void put_u32_le_s(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

}  // namespace detail

inline void save_checkpoint(const CascadeNetwork<float>& net, const std::string& path) {
  std::string buf;
  buf.append(kCkptMagic, 4);
  buf.push_back(static_cast<char>(kCkptVersion));
  for (int field : {net.cfg.num_layers, net.cfg.hidden_channels,
                    net.cfg.kernel_size, net.cfg.input_channels, net.cfg.in_len,
                    net.cfg.out_len})
    detail::put_u32_le_s(buf, static_cast<std::uint32_t>(field));

  visit_network_params(net,
                       [&](const std::string& name, const std::vector<float>& data,
                           const std::vector<int>& dims) {
                         detail::put_u32_le_s(buf, static_cast<std::uint32_t>(name.size()));
                         buf.append(name);
                         detail::put_u32_le_s(buf, static_cast<std::uint32_t>(dims.size()));
                         for (int d : dims)
                           detail::put_u32_le_s(buf, static_cast<std::uint32_t>(d));
                         for (float v : data)
                           detail::put_u32_le_s(buf, std::bit_cast<std::uint32_t>(v));
                       });

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error(io_errc::io_failure, "cannot open for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw io_error(io_errc::io_failure, "short write: " + path);
}

inline CascadeNetwork<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(io_errc::io_failure, "cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());

  const std::size_t header = 4 + 1 + 6 * 4;
  if (bytes.size() < header)
    throw io_error(io_errc::truncated,
                   detail::cat("checkpoint header truncated: expected at least ",
                               header, " bytes, found ", bytes.size()));
  if (std::memcmp(bytes.data(), kCkptMagic, 4) != 0)
    throw io_error(io_errc::bad_magic, "not a gridcast checkpoint: " + path);
  if (static_cast<std::uint8_t>(bytes[4]) != kCkptVersion)
    throw io_error(io_errc::bad_version,
                   detail::cat("unsupported checkpoint version ",
                               int(static_cast<std::uint8_t>(bytes[4]))));

  auto u32_at = [&](std::size_t off) {
    return detail::get_u32_le(reinterpret_cast<const unsigned char*>(bytes.data()) + off);
  };

  StackConfig cfg;
  cfg.num_layers = static_cast<int>(u32_at(5));
  cfg.hidden_channels = static_cast<int>(u32_at(9));
  cfg.kernel_size = static_cast<int>(u32_at(13));
  cfg.input_channels = static_cast<int>(u32_at(17));
  cfg.in_len = static_cast<int>(u32_at(21));
  cfg.out_len = static_cast<int>(u32_at(25));

  // Parse every record up front, validating lengths against the remaining
  // byte count before touching the payload.
  std::map<std::string, std::vector<float>> records;
  std::size_t off = header;
  while (off < bytes.size()) {
    auto need = [&](std::size_t n, const char* what) {
      if (off + n > bytes.size())
        throw io_error(io_errc::truncated,
                       detail::cat("checkpoint record truncated reading ", what,
                                   " at offset ", off));
    };
    need(4, "name length");
    const std::uint32_t name_len = u32_at(off);
    off += 4;
    need(name_len, "name");
    std::string name = bytes.substr(off, name_len);
    off += name_len;
    need(4, "dim count");
    const std::uint32_t dim_count = u32_at(off);
    off += 4;
    need(4 * static_cast<std::size_t>(dim_count), "dims");
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < dim_count; ++d) {
      count *= u32_at(off);
      off += 4;
    }
    need(4 * count, "payload");
    std::vector<float> data(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      data[i] = std::bit_cast<float>(u32_at(off));
      off += 4;
    }
    records.emplace(std::move(name), std::move(data));
  }

  CascadeNetwork<float> net = CascadeNetwork<float>::init(cfg, 0);
  visit_network_params(net, [&](const std::string& name, std::vector<float>& data,
                                const std::vector<int>&) {
    auto it = records.find(name);
    if (it == records.end())
      throw io_error(io_errc::truncated, "checkpoint missing parameter: " + name);
    detail::require(it->second.size() == data.size(),
                    detail::cat("checkpoint parameter ", name, " has ",
                                it->second.size(), " values, expected ",
                                data.size()));
    data = it->second;
  });
  return net;
}

}  // namespace gridcast
