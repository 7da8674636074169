#include "maskqa/voxelgrid.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <sstream>

#include "maskqa/error.hpp"

namespace maskqa {

bool Spacing::valid() const {
  return std::isfinite(x) && std::isfinite(y) && std::isfinite(z) && x > 0 && y > 0 && z > 0;
}

VoxelMask::VoxelMask(Dims dims, Spacing spacing)
    : dims_(dims), spacing_(spacing) {
  require(dims.valid(), ErrorKind::InvalidArgument, "mask dims must be positive");
  require(spacing.valid(), ErrorKind::InvalidArgument, "mask spacing must be positive");
  data_.assign(static_cast<std::size_t>(dims.count()), 0);
}

VoxelMask::VoxelMask(Dims dims, Spacing spacing, std::vector<std::uint8_t> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  require(dims.valid(), ErrorKind::InvalidArgument, "mask dims must be positive");
  require(spacing.valid(), ErrorKind::InvalidArgument, "mask spacing must be positive");
  require(static_cast<std::int64_t>(data_.size()) == dims.count(), ErrorKind::InvalidArgument,
          "mask data length does not match dims");
  for (auto& v : data_) v = v ? 1 : 0;
}

std::int64_t VoxelMask::count() const {
  return std::count(data_.begin(), data_.end(), std::uint8_t{1});
}

MultiChannelVolume::MultiChannelVolume(std::vector<std::string> names, Dims dims,
                                       Spacing spacing)
    : names_(std::move(names)), dims_(dims), spacing_(spacing) {
  require(!names_.empty(), ErrorKind::InvalidArgument, "volume needs at least one channel");
  require(dims.valid(), ErrorKind::InvalidArgument, "volume dims must be positive");
  require(spacing.valid(), ErrorKind::InvalidArgument, "volume spacing must be positive");
  values_.assign(static_cast<std::size_t>(dims.count() * channels()), 0.0f);
}

MultiChannelVolume MultiChannelVolume::stack(const std::vector<std::string>& names,
                                             const std::vector<VoxelMask>& masks) {
  require(names.size() == masks.size() && !masks.empty(), ErrorKind::InvalidArgument,
          "stack needs one name per mask");
  MultiChannelVolume vol(names, masks.front().dims(), masks.front().spacing());
  for (int c = 0; c < vol.channels(); ++c) vol.set_channel(c, masks[c]);
  return vol;
}

VoxelMask MultiChannelVolume::channel(int c) const {
  require(c >= 0 && c < channels(), ErrorKind::InvalidArgument, "channel index out of range");
  VoxelMask mask(dims_, spacing_);
  const float* src = values_.data() + c * voxels();
  auto& dst = mask.data();
  for (std::int64_t v = 0; v < voxels(); ++v) dst[v] = src[v] > 0.5f ? 1 : 0;
  return mask;
}

void MultiChannelVolume::set_channel(int c, const VoxelMask& mask) {
  require(c >= 0 && c < channels(), ErrorKind::InvalidArgument, "channel index out of range");
  require(mask.dims() == dims_ && mask.spacing() == spacing_, ErrorKind::DimensionMismatch,
          "channel geometry differs from volume");
  float* dst = values_.data() + c * voxels();
  const auto& src = mask.data();
  for (std::int64_t v = 0; v < voxels(); ++v) dst[v] = src[v] ? 1.0f : 0.0f;
}

int MultiChannelVolume::channel_index(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  return it == names_.end() ? -1 : static_cast<int>(it - names_.begin());
}

bool MultiChannelVolume::is_binary() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](float v) { return v == 0.0f || v == 1.0f; });
}

// Geometry ------------------------------------------------------------------

VoxelMask resample_nearest(const VoxelMask& mask, const Spacing& target) {
  require(mask.dims().valid() && mask.spacing().valid(), ErrorKind::InvalidArgument,
          "resample: invalid mask");
  require(target.valid(), ErrorKind::InvalidArgument, "resample: target spacing must be positive");
  const Dims& in = mask.dims();
  const Spacing& s = mask.spacing();
  Dims out;
  for (int a = 0; a < 3; ++a) {
    out[a] = std::max(1, static_cast<int>(std::lround(in[a] * s[a] / target[a])));
  }
  std::array<std::vector<int>, 3> lut;
  for (int a = 0; a < 3; ++a) {
    lut[a].resize(out[a]);
    for (int o = 0; o < out[a]; ++o) {
      const double p = (o + 0.5) * target[a];
      const int i = static_cast<int>(std::floor(p / s[a]));
      lut[a][o] = std::clamp(i, 0, in[a] - 1);
    }
  }
  VoxelMask result(out, target);
  for (int k = 0; k < out.z; ++k)
    for (int j = 0; j < out.y; ++j)
      for (int i = 0; i < out.x; ++i)
        result.set(i, j, k, mask.at(lut[0][i], lut[1][j], lut[2][k]));
  return result;
}

namespace {

// Offset o_in = o_out - shift maps output index to input index.
int center_shift(int in, int out) {
  const int diff = out - in;
  return diff >= 0 ? diff / 2 : -((-diff) / 2);
}

}  // namespace

VoxelMask pad_or_crop_center(const VoxelMask& mask, const Dims& size) {
  require(size.valid(), ErrorKind::InvalidArgument, "pad_or_crop: size must be positive");
  const Dims& in = mask.dims();
  const int sx = center_shift(in.x, size.x);
  const int sy = center_shift(in.y, size.y);
  const int sz = center_shift(in.z, size.z);
  VoxelMask out(size, mask.spacing());
  for (int k = 0; k < size.z; ++k) {
    const int kk = k - sz;
    if (kk < 0 || kk >= in.z) continue;
    for (int j = 0; j < size.y; ++j) {
      const int jj = j - sy;
      if (jj < 0 || jj >= in.y) continue;
      for (int i = 0; i < size.x; ++i) {
        const int ii = i - sx;
        if (ii < 0 || ii >= in.x) continue;
        out.set(i, j, k, mask.at(ii, jj, kk));
      }
    }
  }
  return out;
}

MultiChannelVolume extract_window(const MultiChannelVolume& vol,
                                  const std::array<int, 3>& origin, const Dims& size) {
  require(size.valid(), ErrorKind::InvalidArgument, "window size must be positive");
  MultiChannelVolume out(vol.names(), size, vol.spacing());
  out.set_soft(vol.soft());
  const Dims& in = vol.dims();
  for (int c = 0; c < vol.channels(); ++c) {
    const float* src = vol.values().data() + c * vol.voxels();
    float* dst = out.values().data() + c * out.voxels();
    for (int k = 0; k < size.z; ++k) {
      const int kk = k + origin[2];
      if (kk < 0 || kk >= in.z) continue;
      for (int j = 0; j < size.y; ++j) {
        const int jj = j + origin[1];
        if (jj < 0 || jj >= in.y) continue;
        for (int i = 0; i < size.x; ++i) {
          const int ii = i + origin[0];
          if (ii < 0 || ii >= in.x) continue;
          dst[i + static_cast<std::int64_t>(size.x) * (j + static_cast<std::int64_t>(size.y) * k)] =
              src[ii + static_cast<std::int64_t>(in.x) * (jj + static_cast<std::int64_t>(in.y) * kk)];
        }
      }
    }
  }
  return out;
}

MultiChannelVolume pad_or_crop_center(const MultiChannelVolume& vol, const Dims& size) {
  require(size.valid(), ErrorKind::InvalidArgument, "pad_or_crop: size must be positive");
  std::array<int, 3> origin{};
  for (int a = 0; a < 3; ++a) origin[a] = -center_shift(vol.dims()[a], size[a]);
  return extract_window(vol, origin, size);
}

VoxelMask union_foreground(const MultiChannelVolume& vol) {
  VoxelMask mask(vol.dims(), vol.spacing());
  auto& d = mask.data();
  for (int c = 0; c < vol.channels(); ++c) {
    const float* src = vol.values().data() + c * vol.voxels();
    for (std::int64_t v = 0; v < vol.voxels(); ++v)
      if (src[v] > 0.5f) d[v] = 1;
  }
  return mask;
}

std::array<int, 3> com_crop_origin(const MultiChannelVolume& vol, const Dims& size) {
  require(size.valid(), ErrorKind::InvalidArgument, "crop size must be positive");
  const VoxelMask fg = union_foreground(vol);
  require(!fg.empty_foreground(), ErrorKind::EmptyForeground,
          "crop_about_foreground_com: union foreground is empty");
  const Point3 com = center_of_mass(fg);
  std::array<int, 3> origin{};
  for (int a = 0; a < 3; ++a) {
    const int n = vol.dims()[a];
    if (size[a] > n) {
      origin[a] = -center_shift(n, size[a]);
      continue;
    }
    const int center = std::clamp(static_cast<int>(std::floor(com[a] / vol.spacing()[a])), 0, n - 1);
    origin[a] = std::clamp(center - size[a] / 2, 0, n - size[a]);
  }
  return origin;
}

MultiChannelVolume crop_about_foreground_com(const MultiChannelVolume& vol, const Dims& size) {
  return extract_window(vol, com_crop_origin(vol, size), size);
}

VoxelMask flip_axis(const VoxelMask& mask, Axis axis) {
  const Dims& d = mask.dims();
  VoxelMask out(d, mask.spacing());
  for (int k = 0; k < d.z; ++k)
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i) {
        int si = i, sj = j, sk = k;
        switch (axis) {
          case Axis::X: si = d.x - 1 - i; break;
          case Axis::Y: sj = d.y - 1 - j; break;
          case Axis::Z: sk = d.z - 1 - k; break;
        }
        out.set(i, j, k, mask.at(si, sj, sk));
      }
  return out;
}

MultiChannelVolume flip_axis(const MultiChannelVolume& vol, Axis axis,
                             const std::vector<std::pair<int, int>>& channel_swap_pairs) {
  const int nc = vol.channels();
  std::vector<int> source(nc);
  std::iota(source.begin(), source.end(), 0);
  std::vector<bool> used(nc, false);
  for (auto [a, b] : channel_swap_pairs) {
    require(a >= 0 && b >= 0 && a < nc && b < nc && a != b, ErrorKind::InvalidArgument,
            "flip_axis: invalid channel index in swap pair");
    require(!used[a] && !used[b], ErrorKind::InvalidArgument,
            "flip_axis: swap pairs must be disjoint");
    used[a] = used[b] = true;
    std::swap(source[a], source[b]);
  }
  const Dims& d = vol.dims();
  MultiChannelVolume out(vol.names(), d, vol.spacing());
  out.set_soft(vol.soft());
  for (int c = 0; c < nc; ++c) {
    const float* src = vol.values().data() + source[c] * vol.voxels();
    float* dst = out.values().data() + c * vol.voxels();
    for (int k = 0; k < d.z; ++k)
      for (int j = 0; j < d.y; ++j)
        for (int i = 0; i < d.x; ++i) {
          int si = i, sj = j, sk = k;
          switch (axis) {
            case Axis::X: si = d.x - 1 - i; break;
            case Axis::Y: sj = d.y - 1 - j; break;
            case Axis::Z: sk = d.z - 1 - k; break;
          }
          dst[i + static_cast<std::int64_t>(d.x) * (j + static_cast<std::int64_t>(d.y) * k)] =
              src[si + static_cast<std::int64_t>(d.x) * (sj + static_cast<std::int64_t>(d.y) * sk)];
        }
  }
  return out;
}

namespace {

// Exact values for multiples of 90 degrees.
std::pair<double, double> cos_sin_degrees(double degrees) {
  const double turns = degrees / 90.0;
  if (turns == std::round(turns)) {
    const long q = ((static_cast<long>(std::round(turns)) % 4) + 4) % 4;
    constexpr double c[4] = {1, 0, -1, 0};
    constexpr double s[4] = {0, 1, 0, -1};
    return {c[q], s[q]};
  }
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  return {std::cos(rad), std::sin(rad)};
}

}  // namespace

VoxelMask rotate_mask(const VoxelMask& mask, Axis axis, double degrees) {
  require(std::isfinite(degrees), ErrorKind::InvalidArgument, "rotate: angle must be finite");
  const Dims& d = mask.dims();
  const Spacing& s = mask.spacing();
  const auto [c, sn] = cos_sin_degrees(degrees);
  // The two axes spanning the rotation plane, in right-handed order.
  int u = 0, v = 1;
  switch (axis) {
    case Axis::X: u = 1; v = 2; break;
    case Axis::Y: u = 2; v = 0; break;
    case Axis::Z: u = 0; v = 1; break;
  }
  const Point3 center{d.x * s.x / 2.0, d.y * s.y / 2.0, d.z * s.z / 2.0};
  VoxelMask out(d, s);
  for (int k = 0; k < d.z; ++k)
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i) {
        Point3 p{(i + 0.5) * s.x - center[0], (j + 0.5) * s.y - center[1],
                 (k + 0.5) * s.z - center[2]};
        // Inverse rotation pulls the source position.
        Point3 q = p;
        q[u] = c * p[u] + sn * p[v];
        q[v] = -sn * p[u] + c * p[v];
        int src[3];
        bool inside = true;
        for (int a = 0; a < 3; ++a) {
          src[a] = static_cast<int>(std::floor((q[a] + center[a]) / s[a]));
          if (src[a] < 0 || src[a] >= d[a]) inside = false;
        }
        if (inside) out.set(i, j, k, mask.at(src[0], src[1], src[2]));
      }
  return out;
}

Point3 center_of_mass(const VoxelMask& mask) {
  const Dims& d = mask.dims();
  double sum[3] = {0, 0, 0};
  std::int64_t n = 0;
  for (int k = 0; k < d.z; ++k)
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i)
        if (mask.at(i, j, k)) {
          sum[0] += i;
          sum[1] += j;
          sum[2] += k;
          ++n;
        }
  require(n > 0, ErrorKind::EmptyForeground, "center_of_mass: empty foreground");
  const Spacing& s = mask.spacing();
  return {(sum[0] / n + 0.5) * s.x, (sum[1] / n + 0.5) * s.y, (sum[2] / n + 0.5) * s.z};
}

BoundingBox tight_bounding_box(const VoxelMask& mask) {
  const Dims& d = mask.dims();
  BoundingBox box{{d.x, d.y, d.z}, {-1, -1, -1}};
  for (int k = 0; k < d.z; ++k)
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i)
        if (mask.at(i, j, k)) {
          box.lo = {std::min(box.lo[0], i), std::min(box.lo[1], j), std::min(box.lo[2], k)};
          box.hi = {std::max(box.hi[0], i), std::max(box.hi[1], j), std::max(box.hi[2], k)};
        }
  require(box.hi[0] >= 0, ErrorKind::EmptyForeground, "tight_bounding_box: empty foreground");
  return box;
}

// OMV I/O -------------------------------------------------------------------

namespace {

constexpr std::uint64_t kMaxPayload = std::uint64_t{1} << 40;

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  parts.push_back(cur);
  return parts;
}

std::uint64_t parse_u64(const std::string& tok, const char* what) {
  std::uint64_t v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec == std::errc::result_out_of_range)
    fail(ErrorKind::DimensionOverflow, std::string("OMV: ") + what + " overflows");
  require(res.ec == std::errc() && res.ptr == tok.data() + tok.size() && !tok.empty(),
          ErrorKind::MalformedFile, std::string("OMV: bad ") + what + " '" + tok + "'");
  return v;
}

double parse_double(const std::string& tok) {
  double v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  require(res.ec == std::errc() && res.ptr == tok.data() + tok.size() && !tok.empty(),
          ErrorKind::MalformedFile, "OMV: bad spacing value '" + tok + "'");
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_omv(const OmvImage& image) {
  require(image.dims.valid(), ErrorKind::InvalidArgument, "OMV: dims must be positive");
  require(image.spacing.valid(), ErrorKind::InvalidArgument, "OMV: spacing must be positive");
  require(!image.channel_names.empty(), ErrorKind::InvalidArgument, "OMV: no channels");
  for (const auto& n : image.channel_names)
    require(!n.empty() && n.find_first_of(",\n\r ") == std::string::npos,
            ErrorKind::InvalidArgument, "OMV: channel name '" + n + "' is not encodable");
  const std::uint64_t expected =
      static_cast<std::uint64_t>(image.dims.count()) * image.channel_names.size();
  require(image.payload.size() == expected, ErrorKind::InvalidArgument,
          "OMV: payload size does not match header");
  std::string header = "OMV1 " + std::to_string(image.dims.x) + " " + std::to_string(image.dims.y) +
                       " " + std::to_string(image.dims.z) + " " +
                       std::to_string(image.channel_names.size()) + "\n";
  header += "spacing " + format_double(image.spacing.x) + " " + format_double(image.spacing.y) +
            " " + format_double(image.spacing.z) + "\n";
  header += "channels ";
  for (std::size_t c = 0; c < image.channel_names.size(); ++c) {
    if (c) header += ",";
    header += image.channel_names[c];
  }
  header += "\n";
  header += image.encoding == OmvEncoding::U8 ? "encoding u8\n" : "encoding u8soft\n";
  header += "\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), image.payload.begin(), image.payload.end());
  return bytes;
}

OmvImage decode_omv(const std::vector<std::uint8_t>& bytes) {
  static constexpr char kMagic[] = "OMV1 ";
  require(bytes.size() >= 5 && std::equal(kMagic, kMagic + 5, bytes.begin()),
          ErrorKind::MagicMismatch, "OMV: bad magic");
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    auto it = std::find(bytes.begin() + pos, bytes.end(), std::uint8_t{'\n'});
    require(it != bytes.end(), ErrorKind::Truncated, "OMV: header is truncated");
    std::string line(bytes.begin() + pos, it);
    pos = static_cast<std::size_t>(it - bytes.begin()) + 1;
    return line;
  };

  OmvImage image;
  const auto head = split(next_line(), ' ');
  require(head.size() == 5 && head[0] == "OMV1", ErrorKind::MalformedFile,
          "OMV: first line must be 'OMV1 nx ny nz C'");
  std::uint64_t dim[3];
  for (int a = 0; a < 3; ++a) {
    dim[a] = parse_u64(head[1 + a], "dimension");
    require(dim[a] > 0, ErrorKind::MalformedFile, "OMV: zero dimension");
    if (dim[a] > static_cast<std::uint64_t>(std::numeric_limits<int>::max()))
      fail(ErrorKind::DimensionOverflow, "OMV: dimension exceeds int range");
  }
  const std::uint64_t nchan = parse_u64(head[4], "channel count");
  require(nchan > 0, ErrorKind::MalformedFile, "OMV: zero channels");
  std::uint64_t total = 1;
  for (std::uint64_t f : {dim[0], dim[1], dim[2], nchan}) {
    if (total > kMaxPayload / f) fail(ErrorKind::DimensionOverflow, "OMV: payload size overflows");
    total *= f;
  }
  image.dims = {static_cast<int>(dim[0]), static_cast<int>(dim[1]), static_cast<int>(dim[2])};

  const auto sp = split(next_line(), ' ');
  require(sp.size() == 4 && sp[0] == "spacing", ErrorKind::MalformedFile,
          "OMV: second line must be 'spacing sx sy sz'");
  image.spacing = {parse_double(sp[1]), parse_double(sp[2]), parse_double(sp[3])};
  require(image.spacing.valid(), ErrorKind::MalformedFile, "OMV: spacing must be positive");

  const std::string ch = next_line();
  require(ch.rfind("channels ", 0) == 0, ErrorKind::MalformedFile,
          "OMV: third line must be 'channels ...'");
  image.channel_names = split(ch.substr(9), ',');
  require(image.channel_names.size() == nchan, ErrorKind::MalformedFile,
          "OMV: channel name count does not match header");

  const std::string enc = next_line();
  if (enc == "encoding u8") {
    image.encoding = OmvEncoding::U8;
  } else if (enc == "encoding u8soft") {
    image.encoding = OmvEncoding::U8Soft;
  } else {
    fail(ErrorKind::MalformedFile, "OMV: unknown encoding line '" + enc + "'");
  }
  require(next_line().empty(), ErrorKind::MalformedFile, "OMV: missing blank line after header");

  const std::uint64_t avail = bytes.size() - pos;
  require(avail >= total, ErrorKind::Truncated,
          "OMV: payload has " + std::to_string(avail) + " bytes, expected " + std::to_string(total));
  require(avail == total, ErrorKind::MalformedFile, "OMV: trailing bytes after payload");
  image.payload.assign(bytes.begin() + pos, bytes.end());
  return image;
}

OmvImage read_omv_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::MissingFile, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_omv(bytes);
}

void write_omv_image(const OmvImage& image, const std::filesystem::path& path) {
  const auto bytes = encode_omv(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

OmvImage to_omv_image(const MultiChannelVolume& vol) {
  OmvImage image;
  image.dims = vol.dims();
  image.spacing = vol.spacing();
  image.channel_names = vol.names();
  image.encoding = vol.soft() ? OmvEncoding::U8Soft : OmvEncoding::U8;
  image.payload.resize(vol.values().size());
  for (std::size_t v = 0; v < vol.values().size(); ++v) {
    const float x = vol.values()[v];
    if (vol.soft()) {
      image.payload[v] = static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0f, 1.0f) * 255.0f));
    } else {
      require(x == 0.0f || x == 1.0f, ErrorKind::InvalidArgument,
              "OMV: binary volume holds a non-binary value");
      image.payload[v] = x == 1.0f ? 1 : 0;
    }
  }
  return image;
}

MultiChannelVolume from_omv_image(const OmvImage& image) {
  MultiChannelVolume vol(image.channel_names, image.dims, image.spacing);
  vol.set_soft(image.encoding == OmvEncoding::U8Soft);
  for (std::size_t v = 0; v < image.payload.size(); ++v) {
    const std::uint8_t b = image.payload[v];
    if (vol.soft()) {
      vol.values()[v] = static_cast<float>(b) / 255.0f;
    } else {
      require(b <= 1, ErrorKind::SchemaMismatch, "OMV: binary payload holds a value above 1");
      vol.values()[v] = static_cast<float>(b);
    }
  }
  return vol;
}

MultiChannelVolume read_omv(const std::filesystem::path& path) {
  return from_omv_image(read_omv_image(path));
}

void write_omv(const MultiChannelVolume& vol, const std::filesystem::path& path) {
  write_omv_image(to_omv_image(vol), path);
}

}  // namespace maskqa
