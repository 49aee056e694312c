#include "tforce/pipeline.hpp"

#include "tforce/error.hpp"
#include "tforce/geometry.hpp"
#include "tforce/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tforce::pipeline {

namespace {

constexpr int kMinFilterLength = 12;

// Direct form II transposed, state initialised to the steady state of a
// constant input equal to the first sample.
void run_biquad(const Biquad& bq, std::vector<double>& x) {
  if (x.empty()) return;
  const double z2_unit = bq.b2 - bq.a2;
  const double z1_unit = bq.b1 - bq.a1 + z2_unit;
  double z1 = z1_unit * x.front();
  double z2 = z2_unit * x.front();
  for (double& v : x) {
    const double in = v;
    const double out = bq.b0 * in + z1;
    z1 = bq.b1 * in - bq.a1 * out + z2;
    z2 = bq.b2 * in - bq.a2 * out;
    v = out;
  }
}

std::string column_name(bool force, Eigen::Index c) {
  static const char* axes = "xyz";
  if (force) return std::string("f_") + axes[c];
  return "x_" + std::to_string(c / 3) + "_" + axes[c % 3];
}

TimeSeries interpolate(const TimeSeries& s, const std::vector<double>& grid, bool quaternion) {
  TimeSeries out;
  out.t = grid;
  out.values.resize(static_cast<Eigen::Index>(grid.size()), s.dims());
  std::size_t seg = 0;
  const std::size_t last = s.t.size() - 1;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double t = grid[k];
    while (seg + 1 < last && s.t[seg + 1] <= t) ++seg;
    const auto i0 = static_cast<Eigen::Index>(seg);
    const auto row = static_cast<Eigen::Index>(k);
    if (last == 0) {
      out.values.row(row) = s.values.row(0);
      continue;
    }
    const double frac = (t - s.t[seg]) / (s.t[seg + 1] - s.t[seg]);
    Eigen::RowVectorXd a = s.values.row(i0);
    Eigen::RowVectorXd b = s.values.row(i0 + 1);
    if (quaternion && a.dot(b) < 0.0) b = -b;
    Eigen::RowVectorXd v = a + frac * (b - a);
    if (quaternion) v.normalize();
    out.values.row(row) = v;
  }
  return out;
}

double column_mean_over(const TimeSeries& s, const std::vector<Interval>& segments, Eigen::Index col,
                        std::size_t& count) {
  double sum = 0.0;
  count = 0;
  for (std::size_t k = 0; k < s.t.size(); ++k) {
    const double t = s.t[k];
    if (std::any_of(segments.begin(), segments.end(), [t](const Interval& iv) { return iv.contains(t); })) {
      sum += s.values(static_cast<Eigen::Index>(k), col);
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace

void Dataset::validate() const {
  if (X.rows() == 0) throw DataError("dataset is empty");
  if (F.rows() != X.rows() || F.cols() != 3) throw ShapeError("dataset: F must be N x 3 with N = rows of X");
  if (scales.x.size() != X.cols()) throw ShapeError("dataset: scale vector does not match X");
  if (!X.allFinite() || !F.allFinite()) throw DataError("dataset contains non-finite entries");
  if ((scales.x.array() <= 0.0).any() || (scales.f.array() <= 0.0).any()) {
    throw DataError("dataset scales must be strictly positive");
  }
}

Biquad butterworth_lowpass(double fc, double fs) {
  if (!(fs > 0.0) || !(fc > 0.0)) throw ConfigError("lowpass: frequencies must be positive");
  if (!(fc < 0.5 * fs)) throw ConfigError("lowpass: cut-off must be below the Nyquist frequency");
  const double k = std::tan(std::numbers::pi * fc / fs);
  const double sqrt2 = std::numbers::sqrt2;
  const double norm = 1.0 / (1.0 + sqrt2 * k + k * k);
  Biquad bq{};
  bq.b0 = k * k * norm;
  bq.b1 = 2.0 * bq.b0;
  bq.b2 = bq.b0;
  bq.a1 = 2.0 * (k * k - 1.0) * norm;
  bq.a2 = (1.0 - sqrt2 * k + k * k) * norm;
  return bq;
}

int settle_length(const Biquad& bq) {
  // Complex or real poles of z^2 + a1 z + a2; the slowest one sets the decay.
  const double disc = bq.a1 * bq.a1 - 4.0 * bq.a2;
  double radius = 0.0;
  if (disc < 0.0) {
    radius = std::sqrt(bq.a2);
  } else {
    const double r = std::sqrt(disc);
    radius = std::max(std::abs(0.5 * (-bq.a1 + r)), std::abs(0.5 * (-bq.a1 - r)));
  }
  if (radius <= 0.0) return 1;
  return static_cast<int>(std::ceil(std::log(1e-3) / std::log(radius)));
}

std::vector<double> lowpass_zero_phase(std::span<const double> signal, double fc, double fs) {
  const Biquad bq = butterworth_lowpass(fc, fs);
  const auto len = static_cast<int>(signal.size());
  if (len < kMinFilterLength) {
    throw DataError("lowpass: signal needs at least " + std::to_string(kMinFilterLength) + " samples");
  }
  const int pad = std::min(3 * settle_length(bq), len - 1);

  // Odd reflection about the end samples keeps constants and slopes intact.
  std::vector<double> ext;
  ext.reserve(static_cast<std::size_t>(len + 2 * pad));
  for (int k = pad; k >= 1; --k) ext.push_back(2.0 * signal[0] - signal[static_cast<std::size_t>(k)]);
  ext.insert(ext.end(), signal.begin(), signal.end());
  for (int k = 1; k <= pad; ++k) {
    ext.push_back(2.0 * signal[static_cast<std::size_t>(len - 1)] - signal[static_cast<std::size_t>(len - 1 - k)]);
  }

  run_biquad(bq, ext);
  std::reverse(ext.begin(), ext.end());
  run_biquad(bq, ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + pad, ext.begin() + pad + len};
}

Eigen::MatrixXd lowpass_zero_phase(const Eigen::MatrixXd& columns, double fc, double fs) {
  Eigen::MatrixXd out(columns.rows(), columns.cols());
  std::vector<double> col(static_cast<std::size_t>(columns.rows()));
  for (Eigen::Index c = 0; c < columns.cols(); ++c) {
    for (Eigen::Index r = 0; r < columns.rows(); ++r) col[static_cast<std::size_t>(r)] = columns(r, c);
    const auto filtered = lowpass_zero_phase(col, fc, fs);
    for (Eigen::Index r = 0; r < columns.rows(); ++r) out(r, c) = filtered[static_cast<std::size_t>(r)];
  }
  return out;
}

Recording resample_align(const Recording& rec, double rate) {
  rec.validate();
  if (!(rate > 0.0)) throw ConfigError("resample: rate must be positive");
  const TimeSeries* channels[] = {&rec.taxels, &rec.force, &rec.frame, &rec.joints};
  double start = -std::numeric_limits<double>::infinity();
  double end = std::numeric_limits<double>::infinity();
  for (const auto* ch : channels) {
    if (ch->size() == 0) throw DataError("resample: empty channel");
    start = std::max(start, ch->front());
    end = std::min(end, ch->back());
  }
  if (!(end - start >= 1.0)) throw DataError("resample: channels overlap for less than 1 s");

  const auto count = static_cast<std::size_t>(std::floor((end - start) * rate + 1e-9)) + 1;
  std::vector<double> grid(count);
  for (std::size_t k = 0; k < count; ++k) grid[k] = start + static_cast<double>(k) / rate;

  Recording out;
  out.meta = rec.meta;
  out.meta.nominal_rate = rate;
  out.offsets = rec.offsets;
  out.taxels = interpolate(rec.taxels, grid, false);
  out.force = interpolate(rec.force, grid, false);
  out.frame = interpolate(rec.frame, grid, true);
  out.joints = interpolate(rec.joints, grid, false);
  return out;
}

Eigen::Vector3d project_force(const Eigen::Vector3d& f_ref, const Eigen::Matrix3d& r0_f) {
  geometry::require_rotation(r0_f, "project_force: R0_F");
  return r0_f * f_ref;
}

Recording project_forces(const Recording& rec) {
  rec.validate();
  if (!rec.shares_grid()) throw DataError("project_forces: resample the recording first");
  Recording out = rec;
  for (Eigen::Index k = 0; k < rec.force.size(); ++k) {
    const auto& q = rec.frame.values;
    const Eigen::Matrix3d r = geometry::rotation_from_wxyz({q(k, 0), q(k, 1), q(k, 2), q(k, 3)});
    out.force.values.row(k) = project_force(rec.force.values.row(k).transpose(), r).transpose();
  }
  return out;
}

Offsets estimate_offsets(const Recording& rec) {
  const auto& segs = rec.meta.static_segments;
  if (std::none_of(segs.begin(), segs.end(), [](const Interval& iv) { return iv.length() >= 0.5; })) {
    throw DataError("remove_offsets: recording has no static segment of at least 0.5 s");
  }
  Offsets off;
  off.x.resize(rec.taxels.dims());
  std::size_t count = 0;
  for (Eigen::Index c = 0; c < rec.taxels.dims(); ++c) off.x[c] = column_mean_over(rec.taxels, segs, c, count);
  if (count == 0) throw DataError("remove_offsets: no taxel samples inside the static segments");
  for (Eigen::Index c = 0; c < 3; ++c) off.f[c] = column_mean_over(rec.force, segs, c, count);
  if (count == 0) throw DataError("remove_offsets: no force samples inside the static segments");
  return off;
}

Recording remove_offsets(const Recording& rec) {
  rec.validate();
  const Offsets off = estimate_offsets(rec);
  Recording out = rec;
  out.taxels.values.rowwise() -= off.x.transpose();
  out.force.values.rowwise() -= off.f.transpose();
  if (out.offsets.x.size() != off.x.size()) out.offsets.x = Eigen::VectorXd::Zero(off.x.size());
  out.offsets.x += off.x;
  out.offsets.f += off.f;
  return out;
}

Recording preprocess(const Recording& raw, const PreprocessOptions& options) {
  raw.validate();
  if (raw.meta.processed) throw DataError("preprocess: recording is already processed");
  Recording filtered = raw;
  filtered.taxels.values = lowpass_zero_phase(raw.taxels.values, options.cutoff_hz, raw.meta.nominal_rate);
  filtered.force.values = lowpass_zero_phase(raw.force.values, options.cutoff_hz, raw.meta.nominal_rate);
  Recording out = remove_offsets(project_forces(resample_align(filtered, options.rate_hz)));
  out.meta.processed = true;
  return out;
}

Scales compute_scales(const Eigen::MatrixXd& X, const Eigen::MatrixXd& F) {
  if (X.rows() == 0 || F.rows() != X.rows() || F.cols() != 3) throw ShapeError("compute_scales: bad shapes");
  const double inv_n = 1.0 / static_cast<double>(X.rows());
  auto col_std = [&](const Eigen::MatrixXd& m, Eigen::Index c) {
    const double mean = m.col(c).sum() * inv_n;
    return std::sqrt((m.col(c).array() - mean).square().sum() * inv_n);
  };
  Scales s;
  s.x.resize(X.cols());
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    s.x[c] = col_std(X, c);
    if (!(s.x[c] > 1e-12)) throw DataError("standardize: column " + column_name(false, c) + " has zero variance");
  }
  for (Eigen::Index c = 0; c < 3; ++c) {
    s.f[c] = col_std(F, c);
    if (!(s.f[c] > 1e-12)) throw DataError("standardize: column " + column_name(true, c) + " has zero variance");
  }
  return s;
}

Dataset to_dataset(const Recording& processed) {
  processed.validate();
  if (!processed.meta.processed) throw DataError("to_dataset: recording must be preprocessed first");
  if (!processed.shares_grid()) throw DataError("to_dataset: channels must share one grid");
  Dataset d;
  d.array_id = processed.meta.array_id;
  d.X = processed.taxels.values;
  d.F = processed.force.values;
  d.scales.x = Eigen::VectorXd::Ones(d.X.cols());
  d.scales.f = Eigen::Vector3d::Ones();
  d.offsets = processed.offsets;
  d.validate();
  return d;
}

Dataset standardize(const Dataset& d) {
  d.validate();
  const Scales s = compute_scales(d.X, d.F);
  Dataset out = d;
  out.X = d.X.array().rowwise() / s.x.transpose().array();
  out.F = d.F.array().rowwise() / s.f.transpose().array();
  out.scales.x = d.scales.x.cwiseProduct(s.x);
  out.scales.f = d.scales.f.cwiseProduct(s.f);
  return out;
}

Dataset standardize(const Recording& processed) { return standardize(to_dataset(processed)); }

Dataset apply_scales(const Dataset& d, const Scales& scales) {
  d.validate();
  if (scales.x.size() != d.X.cols()) throw ShapeError("apply_scales: scale vector does not match X");
  Dataset out = d;
  const Eigen::RowVectorXd rx = d.scales.x.cwiseQuotient(scales.x).transpose();
  const Eigen::RowVector3d rf = d.scales.f.cwiseQuotient(scales.f).transpose();
  out.X = d.X.array().rowwise() * rx.array();
  out.F = d.F.array().rowwise() * rf.array();
  out.scales = scales;
  return out;
}

Dataset destandardize(const Dataset& d) {
  Scales unit;
  unit.x = Eigen::VectorXd::Ones(d.X.cols());
  unit.f = Eigen::Vector3d::Ones();
  return apply_scales(d, unit);
}

Dataset select_rows(const Dataset& d, std::span<const Eigen::Index> rows) {
  Dataset out;
  out.array_id = d.array_id;
  out.scales = d.scales;
  out.offsets = d.offsets;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), d.X.cols());
  out.F.resize(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.X.row(static_cast<Eigen::Index>(k)) = d.X.row(rows[k]);
    out.F.row(static_cast<Eigen::Index>(k)) = d.F.row(rows[k]);
  }
  return out;
}

std::vector<Eigen::Index> permutation(Eigen::Index n, std::uint64_t seed) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) idx[static_cast<std::size_t>(k)] = k;
  Rng rng(seed);
  for (std::size_t k = idx.size(); k > 1; --k) std::swap(idx[k - 1], idx[rng.below(k)]);
  return idx;
}

std::pair<Dataset, Dataset> split(const Dataset& d, double train_fraction, std::uint64_t seed) {
  if (d.rows() < 10) throw DataError("split: need at least 10 samples");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("split: fraction must be in (0, 1)");
  const auto perm = permutation(d.rows(), seed);
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(d.rows())));
  const std::span<const Eigen::Index> all(perm);
  return {select_rows(d, all.first(n_train)), select_rows(d, all.subspan(n_train))};
}

}  // namespace tforce::pipeline
