#include "maskqa/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "maskqa/error.hpp"
#include "maskqa/rng.hpp"

namespace maskqa {

double dice(const VoxelMask& a, const VoxelMask& b) {
  require(a.dims() == b.dims(), ErrorKind::DimensionMismatch, "dice: dimension mismatch");
  std::int64_t na = 0, nb = 0, both = 0;
  const auto& x = a.data();
  const auto& y = b.data();
  for (std::size_t v = 0; v < x.size(); ++v) {
    na += x[v];
    nb += y[v];
    both += x[v] & y[v];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double dice(const MultiChannelVolume& a, int channel_a, const MultiChannelVolume& b,
            int channel_b) {
  return dice(a.channel(channel_a), b.channel(channel_b));
}

double mean_dice_loss(const MultiChannelVolume& recon, const MultiChannelVolume& target) {
  require(recon.channels() == target.channels() && recon.dims() == target.dims(),
          ErrorKind::DimensionMismatch, "mean_dice_loss: shape mismatch");
  const std::int64_t n = recon.voxels();
  double total = 0.0;
  for (int c = 0; c < recon.channels(); ++c) {
    const float* r = recon.values().data() + c * n;
    const float* t = target.values().data() + c * n;
    double inter = 0.0, sr = 0.0, st = 0.0;
    for (std::int64_t v = 0; v < n; ++v) {
      inter += static_cast<double>(r[v]) * t[v];
      sr += r[v];
      st += t[v];
    }
    if (sr + st > 0.0) total += 1.0 - 2.0 * inter / (sr + st);
  }
  return total / recon.channels();
}

namespace {

std::int64_t count_positives(const std::vector<ScoredCase>& cases) {
  return std::count_if(cases.begin(), cases.end(), [](const ScoredCase& c) { return c.label == 1; });
}

void check_labels(const std::vector<ScoredCase>& cases) {
  for (const auto& c : cases)
    require(c.label == 0 || c.label == 1, ErrorKind::InvalidArgument, "labels must be 0 or 1");
}

// Indices sorted by descending score; NaN scores are rejected.
std::vector<std::size_t> order_desc(const std::vector<ScoredCase>& cases) {
  for (const auto& c : cases)
    require(!std::isnan(c.score), ErrorKind::InvalidArgument, "score is NaN");
  std::vector<std::size_t> idx(cases.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return cases[a].score > cases[b].score; });
  return idx;
}

}  // namespace

bool metric_defined(Metric m, const std::vector<ScoredCase>& cases) {
  const auto pos = count_positives(cases);
  const auto neg = static_cast<std::int64_t>(cases.size()) - pos;
  return m == Metric::Auroc ? (pos > 0 && neg > 0) : pos > 0;
}

double auroc(const std::vector<ScoredCase>& cases) {
  check_labels(cases);
  const auto pos = count_positives(cases);
  const auto neg = static_cast<std::int64_t>(cases.size()) - pos;
  require(pos > 0 && neg > 0, ErrorKind::UndefinedMetric, "auroc: needs both labels");
  // Walk ascending; each positive beats every negative strictly below it and
  // ties half of the negatives inside its block.
  auto idx = order_desc(cases);
  std::reverse(idx.begin(), idx.end());
  double wins = 0.0;
  std::int64_t neg_below = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    std::int64_t bp = 0, bn = 0;
    while (j < idx.size() && cases[idx[j]].score == cases[idx[i]].score) {
      (cases[idx[j]].label == 1 ? bp : bn) += 1;
      ++j;
    }
    wins += static_cast<double>(bp) * (static_cast<double>(neg_below) + 0.5 * static_cast<double>(bn));
    neg_below += bn;
    i = j;
  }
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

double aupr(const std::vector<ScoredCase>& cases) {
  check_labels(cases);
  const auto pos = count_positives(cases);
  require(pos > 0, ErrorKind::UndefinedMetric, "aupr: needs at least one positive");
  const auto idx = order_desc(cases);
  double ap = 0.0;
  std::int64_t tp = 0, seen = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    std::int64_t bp = 0;
    while (j < idx.size() && cases[idx[j]].score == cases[idx[i]].score) {
      bp += cases[idx[j]].label;
      ++j;
    }
    tp += bp;
    seen += static_cast<std::int64_t>(j - i);
    if (bp > 0) {
      const double precision = static_cast<double>(tp) / static_cast<double>(seen);
      ap += static_cast<double>(bp) / static_cast<double>(pos) * precision;
    }
    i = j;
  }
  return ap;
}

const char* metric_name(Metric m) { return m == Metric::Auroc ? "auroc" : "aupr"; }

double evaluate_metric(Metric m, const std::vector<ScoredCase>& cases) {
  return m == Metric::Auroc ? auroc(cases) : aupr(cases);
}

std::vector<std::vector<std::size_t>> bootstrap_indices(std::size_t n, int resamples,
                                                        std::uint64_t seed) {
  require(resamples >= 0, ErrorKind::InvalidArgument, "bootstrap: negative resample count");
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(resamples));
  for (auto& r : out) {
    r.resize(n);
    for (auto& i : r) i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(n) - 1));
  }
  return out;
}

double percentile(std::vector<double> values, double q) {
  require(!values.empty(), ErrorKind::InvalidArgument, "percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

BootstrapResult bootstrap_ci(const std::vector<ScoredCase>& cases, Metric metric, int resamples,
                             std::uint64_t seed, double confidence) {
  require(confidence > 0.0 && confidence < 1.0, ErrorKind::InvalidArgument,
          "bootstrap: confidence must lie in (0,1)");
  BootstrapResult res;
  res.point = evaluate_metric(metric, cases);
  const auto lists = bootstrap_indices(cases.size(), resamples, seed);
  std::vector<double> values;
  values.reserve(lists.size());
  std::vector<ScoredCase> sample(cases.size());
  for (const auto& list : lists) {
    for (std::size_t i = 0; i < list.size(); ++i) sample[i] = cases[list[i]];
    if (!metric_defined(metric, sample)) {
      ++res.skipped;
      continue;
    }
    values.push_back(evaluate_metric(metric, sample));
  }
  res.used = static_cast<int>(values.size());
  if (values.empty()) {
    res.lo = res.hi = res.point;
    return res;
  }
  const double alpha = (1.0 - confidence) / 2.0;
  res.lo = percentile(values, alpha);
  res.hi = percentile(values, 1.0 - alpha);
  return res;
}

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_real(const std::string& text) {
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  require(res.ec == std::errc() && res.ptr == text.data() + text.size() && !text.empty(),
          ErrorKind::SchemaMismatch, "not a number: '" + text + "'");
  return v;
}

void write_scored_cases_csv(const std::vector<ScoredCase>& cases, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << "case_id,organ,score,true_dice,label\n";
  for (const auto& c : cases) {
    out << c.case_id << ',' << c.organ << ',' << format_real(c.score) << ','
        << (c.true_dice ? format_real(*c.true_dice) : std::string()) << ',' << c.label << '\n';
  }
}

std::vector<ScoredCase> read_scored_cases_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingFile, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  require(line == "case_id,organ,score,true_dice,label", ErrorKind::SchemaMismatch,
          "unexpected scored-case header in " + path.string());
  std::vector<ScoredCase> cases;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    require(f.size() == 5, ErrorKind::SchemaMismatch, "scored-case row needs 5 fields: " + line);
    ScoredCase c;
    c.case_id = f[0];
    c.organ = f[1];
    c.score = parse_real(f[2]);
    if (!f[3].empty()) c.true_dice = parse_real(f[3]);
    require(f[4] == "0" || f[4] == "1", ErrorKind::SchemaMismatch, "label must be 0 or 1");
    c.label = f[4] == "1" ? 1 : 0;
    cases.push_back(std::move(c));
  }
  return cases;
}

}  // namespace maskqa
