#include "maskqa/neural/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace maskqa::nn {

namespace {

void put_f32_le(std::vector<std::uint8_t>& out, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
}

float get_f32_le(const std::uint8_t* p) {
  std::uint32_t u = 0;
  for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  return std::bit_cast<float>(u);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<Parameter<float>* const> params) {
  std::string header = "DAEW1 " + std::to_string(params.size()) + "\n";
  for (const auto* p : params) {
    require(!p->name.empty() && p->name.find_first_of(" \n") == std::string::npos,
            ErrorKind::InvalidArgument, "checkpoint: bad tensor name '" + p->name + "'");
    header += p->name + " " + std::to_string(p->value.rank());
    for (int d : p->value.shape) header += " " + std::to_string(d);
    header += "\n";
  }
  header += "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (const auto* p : params)
    for (float f : p->value.data) put_f32_le(out, f);
  return out;
}

void decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                       std::span<Parameter<float>* const> params) {
  require(bytes.size() >= 6 && std::memcmp(bytes.data(), "DAEW1 ", 6) == 0,
          ErrorKind::MagicMismatch, "checkpoint: bad magic");
  std::size_t pos = 0;
  auto next_line = [&]() {
    auto it = std::find(bytes.begin() + pos, bytes.end(), std::uint8_t{'\n'});
    require(it != bytes.end(), ErrorKind::Truncated, "checkpoint: truncated header");
    std::string line(bytes.begin() + pos, it);
    pos = static_cast<std::size_t>(it - bytes.begin()) + 1;
    return line;
  };
  std::istringstream first(next_line());
  std::string magic;
  std::size_t count = 0;
  require(static_cast<bool>(first >> magic >> count), ErrorKind::MalformedFile,
          "checkpoint: bad first line");

  struct Entry {
    std::string name;
    std::vector<int> shape;
  };
  std::vector<Entry> entries;
  for (std::size_t t = 0; t < count; ++t) {
    std::istringstream line(next_line());
    Entry e;
    int rank = 0;
    require(static_cast<bool>(line >> e.name >> rank) && rank >= 0 && rank <= 8,
            ErrorKind::MalformedFile, "checkpoint: bad tensor header");
    e.shape.resize(static_cast<std::size_t>(rank));
    for (int& d : e.shape)
      require(static_cast<bool>(line >> d) && d > 0, ErrorKind::MalformedFile,
              "checkpoint: bad tensor dimension");
    entries.push_back(std::move(e));
  }
  require(next_line().empty(), ErrorKind::MalformedFile, "checkpoint: missing blank line");

  std::map<std::string, std::pair<std::size_t, const Entry*>> offsets;
  std::size_t offset = pos;
  for (const auto& e : entries) {
    offsets[e.name] = {offset, &e};
    offset += static_cast<std::size_t>(Tensor<float>::numel(e.shape)) * 4;
  }
  require(bytes.size() >= offset, ErrorKind::Truncated, "checkpoint: payload is truncated");
  require(bytes.size() == offset, ErrorKind::MalformedFile, "checkpoint: trailing bytes");

  for (auto* p : params) {
    auto it = offsets.find(p->name);
    require(it != offsets.end(), ErrorKind::SchemaMismatch,
            "checkpoint: missing tensor " + p->name);
    require(it->second.second->shape == p->value.shape, ErrorKind::SchemaMismatch,
            "checkpoint: shape mismatch for " + p->name + ": file " +
                shape_string(it->second.second->shape) + ", model " + shape_string(p->value.shape));
  }
  require(offsets.size() == params.size(), ErrorKind::SchemaMismatch,
          "checkpoint: tensor count differs from model");
  for (auto* p : params) {
    const std::uint8_t* src = bytes.data() + offsets[p->name].first;
    for (std::int64_t i = 0; i < p->value.size(); ++i) p->value.data[i] = get_f32_le(src + 4 * i);
  }
}

void save_checkpoint(std::span<Parameter<float>* const> params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

void load_checkpoint(std::span<Parameter<float>* const> params, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::MissingFile, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  decode_checkpoint(bytes, params);
}

}  // namespace maskqa::nn
