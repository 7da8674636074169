#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace maskqa {

/// Millimetres per voxel along x, y, z.
struct Spacing {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;

  double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  double voxel_volume() const { return x * y * z; }
  bool valid() const;
  bool operator==(const Spacing&) const = default;
};

struct Dims {
  int x = 0;
  int y = 0;
  int z = 0;

  int operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  int& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
  std::int64_t count() const {
    return static_cast<std::int64_t>(x) * y * z;
  }
  bool valid() const { return x > 0 && y > 0 && z > 0; }
  bool operator==(const Dims&) const = default;
};

enum class Axis { X = 0, Y = 1, Z = 2 };

/// Inclusive voxel index corners.
struct BoundingBox {
  std::array<int, 3> lo{};
  std::array<int, 3> hi{};

  int extent(int axis) const { return hi[axis] - lo[axis] + 1; }
  bool operator==(const BoundingBox&) const = default;
};

using Point3 = std::array<double, 3>;

/// Binary 3D mask, x-fastest storage. Voxel (i,j,k) has its centre at
/// ((i+0.5)*sx, (j+0.5)*sy, (k+0.5)*sz) mm.
class VoxelMask {
 public:
  VoxelMask() = default;
  VoxelMask(Dims dims, Spacing spacing);
  VoxelMask(Dims dims, Spacing spacing, std::vector<std::uint8_t> data);

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  const std::vector<std::uint8_t>& data() const { return data_; }
  std::vector<std::uint8_t>& data() { return data_; }

  std::int64_t index(int i, int j, int k) const {
    return i + static_cast<std::int64_t>(dims_.x) * (j + static_cast<std::int64_t>(dims_.y) * k);
  }
  bool in_bounds(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims_.x && j < dims_.y && k < dims_.z;
  }
  std::uint8_t at(int i, int j, int k) const { return data_[index(i, j, k)]; }
  void set(int i, int j, int k, std::uint8_t v) { data_[index(i, j, k)] = v; }

  std::int64_t count() const;
  bool empty_foreground() const { return count() == 0; }

  bool operator==(const VoxelMask&) const = default;

 private:
  Dims dims_;
  Spacing spacing_;
  std::vector<std::uint8_t> data_;
};

/// C channel-stacked masks or soft probabilities, channel-major, x-fastest
/// within a channel.
class MultiChannelVolume {
 public:
  MultiChannelVolume() = default;
  MultiChannelVolume(std::vector<std::string> names, Dims dims, Spacing spacing);

  static MultiChannelVolume stack(const std::vector<std::string>& names,
                                  const std::vector<VoxelMask>& masks);

  int channels() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::int64_t voxels() const { return dims_.count(); }

  bool soft() const { return soft_; }
  void set_soft(bool soft) { soft_ = soft; }

  const std::vector<float>& values() const { return values_; }
  std::vector<float>& values() { return values_; }

  float value(int c, std::int64_t voxel) const { return values_[c * voxels() + voxel]; }
  float& value(int c, std::int64_t voxel) { return values_[c * voxels() + voxel]; }

  /// Channel c thresholded at 0.5.
  VoxelMask channel(int c) const;
  void set_channel(int c, const VoxelMask& mask);
  int channel_index(const std::string& name) const;  // -1 when absent

  /// True when every value is exactly 0 or 1.
  bool is_binary() const;

  bool operator==(const MultiChannelVolume&) const = default;

 private:
  std::vector<std::string> names_;
  Dims dims_;
  Spacing spacing_;
  bool soft_ = false;
  std::vector<float> values_;
};

/// Nearest-neighbour resampling onto `target` spacing. Output dims are
/// round(n * s_in / s_out), at least 1. Ties go to the higher input index.
VoxelMask resample_nearest(const VoxelMask& mask, const Spacing& target);

/// Centre the mask in a grid of `size`; padding is 0 and any odd excess
/// (pad or crop) goes to the high-index side.
VoxelMask pad_or_crop_center(const VoxelMask& mask, const Dims& size);
MultiChannelVolume pad_or_crop_center(const MultiChannelVolume& vol, const Dims& size);

/// Low-corner index offsets of the crop window `crop_about_foreground_com`
/// would use. Negative entries mean zero padding on that axis.
std::array<int, 3> com_crop_origin(const MultiChannelVolume& vol, const Dims& size);

/// Window of `size` centred on the voxel holding the centre of mass of the
/// union foreground, clamped to stay inside the volume.
MultiChannelVolume crop_about_foreground_com(const MultiChannelVolume& vol, const Dims& size);

/// Extracts the window with low corner `origin`; out-of-grid voxels are 0.
MultiChannelVolume extract_window(const MultiChannelVolume& vol,
                                  const std::array<int, 3>& origin, const Dims& size);

VoxelMask flip_axis(const VoxelMask& mask, Axis axis);
MultiChannelVolume flip_axis(const MultiChannelVolume& vol, Axis axis,
                             const std::vector<std::pair<int, int>>& channel_swap_pairs);

/// Rotation about the physical centre of the grid, nearest-neighbour onto the
/// same grid; voxels whose source falls outside the field become 0.
VoxelMask rotate_mask(const VoxelMask& mask, Axis axis, double degrees);

/// Mean foreground voxel centre in mm.
Point3 center_of_mass(const VoxelMask& mask);
BoundingBox tight_bounding_box(const VoxelMask& mask);

/// Voxelwise union of all channels.
VoxelMask union_foreground(const MultiChannelVolume& vol);

// OMV container --------------------------------------------------------------

enum class OmvEncoding { U8, U8Soft };

/// Raw on-disk content of an OMV file.
struct OmvImage {
  Dims dims;
  Spacing spacing;
  std::vector<std::string> channel_names;
  OmvEncoding encoding = OmvEncoding::U8;
  std::vector<std::uint8_t> payload;

  bool operator==(const OmvImage&) const = default;
};

OmvImage read_omv_image(const std::filesystem::path& path);
void write_omv_image(const OmvImage& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_omv(const OmvImage& image);
OmvImage decode_omv(const std::vector<std::uint8_t>& bytes);

/// Binary volumes must hold only 0/1 bytes under `u8`; soft volumes are
/// stored as round(255 * value).
MultiChannelVolume read_omv(const std::filesystem::path& path);
void write_omv(const MultiChannelVolume& vol, const std::filesystem::path& path);

OmvImage to_omv_image(const MultiChannelVolume& vol);
MultiChannelVolume from_omv_image(const OmvImage& image);

}  // namespace maskqa
