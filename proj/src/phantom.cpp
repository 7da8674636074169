#include "maskqa/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "maskqa/error.hpp"
#include "maskqa/metrics.hpp"
#include "maskqa/parallel.hpp"
#include "maskqa/rng.hpp"

namespace maskqa {

const char* layout_name(Layout layout) {
  return layout == Layout::PelvisLike7 ? "pelvis7" : "kidney2";
}

Layout parse_layout(const std::string& text) {
  if (text == "pelvis7" || text == "PelvisLike7") return Layout::PelvisLike7;
  if (text == "kidney2" || text == "KidneyLike2") return Layout::KidneyLike2;
  fail(ErrorKind::ConfigParse, "unknown phantom layout '" + text + "'");
}

std::vector<std::string> layout_organs(Layout layout) {
  if (layout == Layout::PelvisLike7)
    return {"bladder", "femoral_head_l", "femoral_head_r", "penile_bulb", "prostate", "rectum", "urethra"};
  return {"kidney_l", "kidney_r"};
}

std::vector<std::pair<int, int>> layout_mirror_pairs(Layout layout) {
  if (layout == Layout::PelvisLike7) return {{1, 2}};
  return {{0, 1}};
}

namespace {

using Vec3 = std::array<double, 3>;

Vec3 add(Vec3 a, Vec3 b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }

struct Draw {
  Vec3 shift{};
  Vec3 scale{1.0, 1.0, 1.0};
};

struct Ellipsoid {
  Vec3 c;
  Vec3 r;
  bool contains(const Vec3& q) const {
    double s = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double d = (q[a] - c[a]) / r[a];
      s += d * d;
    }
    return s <= 1.0;
  }
};

struct Tube {
  std::vector<Vec3> polyline;
  double radius = 1.0;

  Tube(Vec3 p0, Vec3 p1, Vec3 p2, double r) : radius(r) {
    constexpr int kSegments = 48;
    for (int s = 0; s <= kSegments; ++s) {
      const double t = static_cast<double>(s) / kSegments;
      Vec3 p;
      for (int a = 0; a < 3; ++a)
        p[a] = (1 - t) * (1 - t) * p0[a] + 2 * (1 - t) * t * p1[a] + t * t * p2[a];
      polyline.push_back(p);
    }
  }
  bool contains(const Vec3& q) const {
    double best = 1e300;
    for (std::size_t s = 0; s + 1 < polyline.size(); ++s) {
      const Vec3& a = polyline[s];
      const Vec3& b = polyline[s + 1];
      Vec3 ab{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
      Vec3 aq{q[0] - a[0], q[1] - a[1], q[2] - a[2]};
      const double len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
      double t = len2 > 0 ? (aq[0] * ab[0] + aq[1] * ab[1] + aq[2] * ab[2]) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      double d2 = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double d = aq[k] - t * ab[k];
        d2 += d * d;
      }
      best = std::min(best, d2);
    }
    return best <= radius * radius;
  }
};

// Paints organs in priority order; each voxel goes to the first organ that
// claims it, which keeps channels disjoint.
struct Painter {
  std::vector<std::function<bool(const Vec3&)>> shapes;  // indexed by channel
  std::vector<int> priority;
};

Draw draw(Rng& rng, const AnatomySpec& spec) {
  Draw d;
  for (int a = 0; a < 3; ++a) d.shift[a] = uniform_real(rng, -spec.organ_jitter, spec.organ_jitter);
  for (int a = 0; a < 3; ++a) d.scale[a] = uniform_real(rng, 1.0 - spec.radius_jitter, 1.0 + spec.radius_jitter);
  return d;
}

Vec3 scaled(Vec3 r, const Draw& d) { return {r[0] * d.scale[0], r[1] * d.scale[1], r[2] * d.scale[2]}; }

Painter pelvis(const AnatomySpec& spec, Rng& rng, const Vec3& g) {
  // Nominal 32^3 layout: x left-right, y anterior-posterior, z inferior-superior.
  std::vector<Draw> d;
  for (int o = 0; o < 7; ++o) d.push_back(draw(rng, spec));
  const Ellipsoid bladder{add(add({16, 13, 21}, g), d[0].shift), scaled({6, 5, 5}, d[0])};
  const double rl = 4.5 * d[1].scale[0];
  const double rr = 4.5 * d[2].scale[0];
  const Ellipsoid head_l{add(add({25.5, 16, 13}, g), d[1].shift), {rl, rl, rl}};
  const Ellipsoid head_r{add(add({6.5, 16, 13}, g), d[2].shift), {rr, rr, rr}};
  const Ellipsoid bulb{add(add({16, 13, 6}, g), d[3].shift), scaled({4.8, 4.8, 3.52}, d[3])};
  const Ellipsoid prostate{add(add({16, 14, 12}, g), d[4].shift), scaled({6, 5.25, 6}, d[4])};
  const Ellipsoid rectum{add(add({16, 21, 14}, g), d[5].shift), scaled({3, 3, 8}, d[5])};
  const Vec3 p0{bladder.c[0], bladder.c[1], bladder.c[2] - 0.6 * bladder.r[2]};
  const Vec3 p1 = add(add(prostate.c, {0, -0.5, 0}), d[6].shift);
  const Vec3 p2{bulb.c[0], bulb.c[1], bulb.c[2] + 0.3 * bulb.r[2]};
  const Tube urethra(p0, p1, p2, 2.5 * d[6].scale[0]);

  Painter p;
  p.shapes = {
      [=](const Vec3& q) { return bladder.contains(q); },
      [=](const Vec3& q) { return head_l.contains(q); },
      [=](const Vec3& q) { return head_r.contains(q); },
      [=](const Vec3& q) { return bulb.contains(q); },
      [=](const Vec3& q) { return prostate.contains(q); },
      [=](const Vec3& q) { return rectum.contains(q); },
      [=](const Vec3& q) { return urethra.contains(q); },
  };
  p.priority = {1, 2, 0, 5, 6, 4, 3};
  return p;
}

Painter kidneys(const AnatomySpec& spec, Rng& rng, const Vec3& g) {
  std::vector<Draw> d{draw(rng, spec), draw(rng, spec)};
  auto bean = [](Ellipsoid body, double medial_sign) {
    const Ellipsoid hilum{{body.c[0] + medial_sign * 0.85 * body.r[0], body.c[1] - 0.5, body.c[2]},
                          {2.2, 2.2, 2.2}};
    return [=](const Vec3& q) { return body.contains(q) && !hilum.contains(q); };
  };
  const Ellipsoid left{add(add({24, 16, 16}, g), d[0].shift), scaled({3.5, 4.5, 7}, d[0])};
  const Ellipsoid right{add(add({8, 16, 16}, g), d[1].shift), scaled({3.5, 4.5, 7}, d[1])};
  Painter p;
  p.shapes = {bean(left, -1.0), bean(right, +1.0)};
  p.priority = {0, 1};
  return p;
}

}  // namespace

MultiChannelVolume generate_anatomy(const AnatomySpec& spec) {
  require(spec.dims.valid() && spec.spacing.valid(), ErrorKind::InvalidArgument,
          "anatomy: dims and spacing must be positive");
  require(spec.global_jitter >= 0 && spec.organ_jitter >= 0 && spec.radius_jitter >= 0 &&
              spec.radius_jitter < 0.5,
          ErrorKind::InvalidArgument, "anatomy: jitters must be >= 0 and radius_jitter < 0.5");
  Rng rng(derive_seed(spec.seed, {0xA7A7}));
  Vec3 g;
  for (int a = 0; a < 3; ++a) g[a] = uniform_real(rng, -spec.global_jitter, spec.global_jitter);
  const Painter painter =
      spec.layout == Layout::PelvisLike7 ? pelvis(spec, rng, g) : kidneys(spec, rng, g);

  const auto names = layout_organs(spec.layout);
  MultiChannelVolume vol(names, spec.dims, spec.spacing);
  const Vec3 to_nominal{32.0 / spec.dims.x, 32.0 / spec.dims.y, 32.0 / spec.dims.z};
  std::int64_t v = 0;
  for (int k = 0; k < spec.dims.z; ++k)
    for (int j = 0; j < spec.dims.y; ++j)
      for (int i = 0; i < spec.dims.x; ++i, ++v) {
        const Vec3 q{(i + 0.5) * to_nominal[0], (j + 0.5) * to_nominal[1], (k + 0.5) * to_nominal[2]};
        for (int c : painter.priority)
          if (painter.shapes[c](q)) {
            vol.value(c, v) = 1.0f;
            break;
          }
      }
  for (int c = 0; c < vol.channels(); ++c)
    require(!vol.channel(c).empty_foreground(), ErrorKind::InvalidArgument,
            "anatomy: organ " + names[c] + " does not fit the grid");
  return vol;
}

// Degradations -------------------------------------------------------------------

const char* degradation_kind_name(DegradationKind kind) {
  switch (kind) {
    case DegradationKind::Identity: return "identity";
    case DegradationKind::Erode: return "erode";
    case DegradationKind::Dilate: return "dilate";
    case DegradationKind::TruncatePlane: return "truncate";
    case DegradationKind::CutGap: return "gap";
    case DegradationKind::PatchNoise: return "patch";
  }
  return "unknown";
}

void DegradationSpec::validate() const {
  require(k >= 0, ErrorKind::InvalidArgument, "degradation: k must be >= 0");
  require(fraction >= 0.0 && fraction <= 1.0, ErrorKind::InvalidArgument,
          "degradation: fraction must lie in [0, 1]");
  require(thickness >= 1, ErrorKind::InvalidArgument, "degradation: thickness must be >= 1");
  if (kind == DegradationKind::PatchNoise) noise.validate();
}

std::string DegradationSpec::describe() const {
  static const char* axes = "xyz";
  std::string s = degradation_kind_name(kind);
  switch (kind) {
    case DegradationKind::Identity: break;
    case DegradationKind::Erode:
    case DegradationKind::Dilate: s += ":" + std::to_string(k); break;
    case DegradationKind::TruncatePlane:
      s += std::string(":") + axes[static_cast<int>(axis)] + ":" + format_real(fraction) +
           (from_high ? ":high" : ":low");
      break;
    case DegradationKind::CutGap: s += ":" + std::to_string(thickness); break;
    case DegradationKind::PatchNoise:
      s += ":" + std::to_string(noise.max_patches) + ":" + std::to_string(noise.min_patch) + ":" +
           std::to_string(noise.max_patch);
      break;
  }
  return s;
}

VoxelMask dilate(const VoxelMask& mask, int k) {
  require(k >= 0, ErrorKind::InvalidArgument, "dilate: k must be >= 0");
  VoxelMask cur = mask;
  const Dims& d = mask.dims();
  for (int it = 0; it < k; ++it) {
    VoxelMask next = cur;
    for (int z = 0; z < d.z; ++z)
      for (int y = 0; y < d.y; ++y)
        for (int x = 0; x < d.x; ++x) {
          if (cur.at(x, y, z)) continue;
          const bool hit = (x > 0 && cur.at(x - 1, y, z)) || (x + 1 < d.x && cur.at(x + 1, y, z)) ||
                           (y > 0 && cur.at(x, y - 1, z)) || (y + 1 < d.y && cur.at(x, y + 1, z)) ||
                           (z > 0 && cur.at(x, y, z - 1)) || (z + 1 < d.z && cur.at(x, y, z + 1));
          if (hit) next.set(x, y, z, 1);
        }
    cur = std::move(next);
  }
  return cur;
}

VoxelMask erode(const VoxelMask& mask, int k) {
  require(k >= 0, ErrorKind::InvalidArgument, "erode: k must be >= 0");
  VoxelMask cur = mask;
  const Dims& d = mask.dims();
  for (int it = 0; it < k; ++it) {
    VoxelMask next = cur;
    for (int z = 0; z < d.z; ++z)
      for (int y = 0; y < d.y; ++y)
        for (int x = 0; x < d.x; ++x) {
          if (!cur.at(x, y, z)) continue;
          const bool keep = x > 0 && cur.at(x - 1, y, z) && x + 1 < d.x && cur.at(x + 1, y, z) &&
                            y > 0 && cur.at(x, y - 1, z) && y + 1 < d.y && cur.at(x, y + 1, z) &&
                            z > 0 && cur.at(x, y, z - 1) && z + 1 < d.z && cur.at(x, y, z + 1);
          if (!keep) next.set(x, y, z, 0);
        }
    cur = std::move(next);
  }
  return cur;
}

namespace {

VoxelMask zero_slab(const VoxelMask& mask, int axis, int lo, int hi) {
  VoxelMask out = mask;
  const Dims& d = mask.dims();
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        const int c = axis == 0 ? x : (axis == 1 ? y : z);
        if (c >= lo && c <= hi) out.set(x, y, z, 0);
      }
  return out;
}

}  // namespace

Degraded degrade(const VoxelMask& gt, const DegradationSpec& spec) {
  spec.validate();
  require(!gt.empty_foreground(), ErrorKind::EmptyForeground, "degrade: empty ground truth");
  Degraded out;
  switch (spec.kind) {
    case DegradationKind::Identity: out.mask = gt; break;
    case DegradationKind::Erode: out.mask = erode(gt, spec.k); break;
    case DegradationKind::Dilate: out.mask = dilate(gt, spec.k); break;
    case DegradationKind::TruncatePlane: {
      const BoundingBox box = tight_bounding_box(gt);
      const int a = static_cast<int>(spec.axis);
      const int n = static_cast<int>(std::floor(spec.fraction * box.extent(a)));
      if (n == 0) {
        out.mask = gt;
      } else if (spec.from_high) {
        out.mask = zero_slab(gt, a, box.hi[a] - n + 1, box.hi[a]);
      } else {
        out.mask = zero_slab(gt, a, box.lo[a], box.lo[a] + n - 1);
      }
      break;
    }
    case DegradationKind::CutGap: {
      const BoundingBox box = tight_bounding_box(gt);
      int a = 0;
      for (int ax = 1; ax < 3; ++ax)
        if (box.extent(ax) > box.extent(a)) a = ax;
      const Point3 com = center_of_mass(gt);
      const int c = static_cast<int>(std::floor(com[a] / gt.spacing()[a]));
      const int lo = c - spec.thickness / 2;
      out.mask = zero_slab(gt, a, lo, lo + spec.thickness - 1);
      break;
    }
    case DegradationKind::PatchNoise: out.mask = corrupt_mask(gt, spec.noise, RngSeed{spec.seed}); break;
  }
  out.true_dice = dice(out.mask, gt);
  return out;
}

void DegradationMix::validate() const {
  for (double w : {identity, erode, dilate, truncate, gap, patch})
    require(w >= 0.0 && std::isfinite(w), ErrorKind::InvalidArgument, "mix: weights must be >= 0");
  require(identity + erode + dilate + truncate + gap + patch > 0.0, ErrorKind::InvalidArgument,
          "mix: weights sum to zero");
  require(morph_max_k >= 1 && gap_min >= 1 && gap_min <= gap_max && truncate_min >= 0.0 &&
              truncate_min <= truncate_max && truncate_max <= 1.0,
          ErrorKind::InvalidArgument, "mix: bad parameter ranges");
  if (patch > 0) patch_noise.validate();
}

DegradationSpec draw_degradation(const DegradationMix& mix, std::uint64_t seed) {
  mix.validate();
  Rng rng(seed);
  const std::array<double, 6> w{mix.identity, mix.erode, mix.dilate, mix.truncate, mix.gap, mix.patch};
  double total = 0.0;
  for (double x : w) total += x;
  double u = uniform01(rng) * total;
  int pick = 0;
  for (; pick < 5; ++pick) {
    if (u < w[pick] && w[pick] > 0) break;
    u -= w[pick];
  }
  while (w[pick] == 0.0) --pick;  // rounding landed past the last positive weight
  DegradationSpec s;
  s.kind = static_cast<DegradationKind>(pick);
  switch (s.kind) {
    case DegradationKind::Identity: break;
    case DegradationKind::Erode:
    case DegradationKind::Dilate: s.k = static_cast<int>(uniform_int(rng, 1, mix.morph_max_k)); break;
    case DegradationKind::TruncatePlane:
      s.axis = static_cast<Axis>(uniform_int(rng, 0, 2));
      s.fraction = uniform_real(rng, mix.truncate_min, mix.truncate_max);
      s.from_high = uniform_int(rng, 0, 1) == 1;
      break;
    case DegradationKind::CutGap: s.thickness = static_cast<int>(uniform_int(rng, mix.gap_min, mix.gap_max)); break;
    case DegradationKind::PatchNoise:
      s.noise = mix.patch_noise;
      s.seed = rng();
      break;
  }
  return s;
}

// Datasets --------------------------------------------------------------------

std::string case_id_for(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "case_%04d", index);
  return buf;
}

std::uint64_t anatomy_seed(std::uint64_t master, int case_index) {
  return derive_seed(master, {0xA0A7, static_cast<std::uint64_t>(case_index)});
}

Dataset build_dataset(const DatasetSpec& spec, int threads) {
  require(spec.cases >= 1, ErrorKind::InvalidArgument, "dataset: need at least one case");
  spec.mix.validate();
  const auto organs = layout_organs(spec.anatomy.layout);
  const int n = spec.cases;
  const int C = static_cast<int>(organs.size());
  require(spec.thresholds.empty() || static_cast<int>(spec.thresholds.size()) == C,
          ErrorKind::InvalidArgument, "dataset: one threshold per organ required");

  Dataset data;
  data.ground_truth.resize(static_cast<std::size_t>(n));
  data.auto_seg.resize(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) data.case_ids.push_back(case_id_for(c));
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t c) {
    AnatomySpec a = spec.anatomy;
    a.seed = anatomy_seed(spec.seed, static_cast<int>(c));
    data.ground_truth[c] = generate_anatomy(a);
    data.auto_seg[c] = data.ground_truth[c];
  });

  std::vector<double> true_dice(static_cast<std::size_t>(n * C), 1.0);
  std::vector<std::string> tags(static_cast<std::size_t>(n * C));
  auto degrade_organ = [&](int organ, int attempt) {
    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t c) {
      const auto seed = derive_seed(spec.seed, {0xDE6A, c, static_cast<std::uint64_t>(organ),
                                                static_cast<std::uint64_t>(attempt)});
      const DegradationSpec d = draw_degradation(spec.mix, seed);
      const Degraded r = degrade(data.ground_truth[c].channel(organ), d);
      data.auto_seg[c].set_channel(organ, r.mask);
      true_dice[c * C + organ] = r.true_dice;
      tags[c * C + organ] = d.describe();
    });
  };
  const bool degrading = spec.mix.identity <
                         spec.mix.identity + spec.mix.erode + spec.mix.dilate + spec.mix.truncate +
                             spec.mix.gap + spec.mix.patch;
  for (int organ = 0; organ < C; ++organ) {
    for (int attempt = 0;; ++attempt) {
      degrade_organ(organ, attempt);
      if (spec.thresholds.empty() || !degrading) break;
      int inaccurate = 0;
      for (int c = 0; c < n; ++c) inaccurate += true_dice[c * C + organ] < spec.thresholds[organ];
      if (inaccurate > 0 && inaccurate < n) break;
      require(attempt + 1 < spec.max_redraws, ErrorKind::InvalidArgument,
              "dataset: could not obtain both labels for " + organs[organ]);
    }
  }
  for (int c = 0; c < n; ++c)
    for (int o = 0; o < C; ++o)
      data.manifest.push_back({data.case_ids[c], organs[o], true_dice[c * C + o], tags[c * C + o]});
  return data;
}

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "gt");
  std::filesystem::create_directories(dir / "auto");
  for (std::size_t c = 0; c < data.case_ids.size(); ++c) {
    write_omv(data.ground_truth[c], dir / "gt" / (data.case_ids[c] + ".omv"));
    write_omv(data.auto_seg[c], dir / "auto" / (data.case_ids[c] + ".omv"));
  }
  write_manifest(data.manifest, dir / "manifest.csv");
}

void write_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << "case_id,organ,true_dice,degradation\n";
  for (const auto& r : rows)
    out << r.case_id << ',' << r.organ << ',' << format_real(r.true_dice) << ',' << r.degradation << '\n';
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingFile, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  require(line == "case_id,organ,true_dice,degradation", ErrorKind::SchemaMismatch,
          "unexpected manifest header in " + path.string());
  std::vector<ManifestRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    require(f.size() == 4, ErrorKind::SchemaMismatch, "manifest row needs 4 fields: " + line);
    rows.push_back({f[0], f[1], parse_real(f[2]), f[3]});
  }
  return rows;
}

}  // namespace maskqa
