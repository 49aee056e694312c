#include "tforce/eval.hpp"

#include "tforce/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace tforce::eval {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

std::optional<double> relative_error(const Vector3d& truth, const Vector3d& est) {
  if (truth.norm() < kExclusionThreshold) return std::nullopt;
  double sum = 0.0;
  int axes = 0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(truth[a]) < kAxisFloor) continue;
    sum += std::abs((truth[a] - est[a]) / truth[a]);
    ++axes;
  }
  return 100.0 * sum / axes;
}

ForceErrors error_metrics(const Vector3d& truth, const Vector3d& est) {
  ForceErrors e;
  const double nt = truth.norm();
  const double ne = est.norm();
  e.magnitude = std::abs(nt - ne);
  if (nt >= kAngleFloor && ne >= kAngleFloor) {
    const double c = std::clamp(truth.dot(est) / (nt * ne), -1.0, 1.0);
    e.angle_deg = std::acos(c) * 180.0 / kPi;
  }
  return e;
}

ErrorReport evaluate(const MatrixXd& truth, const MatrixXd& est) {
  if (truth.rows() != est.rows() || truth.cols() != 3 || est.cols() != 3) {
    throw ShapeError("evaluate: truth and estimate must both be N x 3");
  }
  ErrorReport r;
  std::vector<double> er, mag, ang;
  for (Eigen::Index k = 0; k < truth.rows(); ++k) {
    const Vector3d t = truth.row(k).transpose();
    const Vector3d e = est.row(k).transpose();
    const auto rel = relative_error(t, e);
    if (!rel) {
      ++r.n_excluded;
      continue;
    }
    ++r.n_used;
    er.push_back(*rel);
    const ForceErrors fe = error_metrics(t, e);
    mag.push_back(fe.magnitude);
    if (fe.angle_deg) ang.push_back(*fe.angle_deg);
  }
  r.e_r_mean = mean_of(er);
  double ss = 0.0;
  for (double v : er) ss += (v - r.e_r_mean) * (v - r.e_r_mean);
  r.e_r_std = er.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(er.size()));
  r.mag_err_mean = mean_of(mag);
  r.ang_err_mean = mean_of(ang);
  return r;
}

std::vector<BenchmarkRow> benchmark(const pipeline::Dataset& data, const geometry::ArrayLayout& layout,
                                    const BenchmarkOptions& options) {
  data.validate();
  if (options.seeds.empty()) throw ConfigError("benchmark: no seeds");
  const pipeline::Dataset physical = pipeline::destandardize(data);

  std::vector<BenchmarkRow> rows;
  if (options.include_perfect) rows.push_back({"perfect", 0, {}, 0, 0, 0, 0});
  for (auto kind : options.kinds) rows.push_back({models::to_string(kind), models::param_count(kind, layout.n), {}, 0, 0, 0, 0});

  for (std::uint64_t seed : options.seeds) {
    const auto [train_phys, test_phys] = pipeline::split(physical, options.train_fraction, seed);
    const pipeline::Dataset train = pipeline::standardize(train_phys);
    const pipeline::Dataset test = pipeline::apply_scales(test_phys, train.scales);
    std::size_t r = 0;
    if (options.include_perfect) rows[r++].per_seed.push_back(evaluate(test_phys.F, test_phys.F));
    for (auto kind : options.kinds) {
      models::TrainSpec spec = options.train;
      spec.seed = options.train.seed + seed;
      const models::ForceModel m = models::fit(train, kind, layout, options.damping, spec);
      rows[r++].per_seed.push_back(evaluate(test_phys.F, models::predict(m, test.X, layout)));
    }
  }

  for (auto& row : rows) {
    std::vector<double> er, mag, ang;
    for (const auto& rep : row.per_seed) {
      er.push_back(rep.e_r_mean);
      mag.push_back(rep.mag_err_mean);
      ang.push_back(rep.ang_err_mean);
    }
    row.e_r_mean = mean_of(er);
    double ss = 0.0;
    for (double v : er) ss += (v - row.e_r_mean) * (v - row.e_r_mean);
    row.e_r_std = er.size() > 1 ? std::sqrt(ss / static_cast<double>(er.size() - 1)) : 0.0;
    row.mag_err_mean = mean_of(mag);
    row.ang_err_mean = mean_of(ang);
  }
  return rows;
}

void write_benchmark_csv(std::ostream& out, const std::vector<BenchmarkRow>& rows) {
  out << "model,params,e_r_mean,e_r_std,mag_err_mean,ang_err_mean,seeds\n";
  for (const auto& r : rows) {
    out << r.name << ',' << r.params << ',' << pipeline::format_double(r.e_r_mean) << ','
        << pipeline::format_double(r.e_r_std) << ',' << pipeline::format_double(r.mag_err_mean) << ','
        << pipeline::format_double(r.ang_err_mean) << ',' << r.per_seed.size() << '\n';
  }
}

void write_benchmark_table(std::ostream& out, const std::vector<BenchmarkRow>& rows) {
  out << "model    params   e_r [%]            |f| err [N]  angle [deg]\n";
  for (const auto& r : rows) {
    char line[160];
    std::snprintf(line, sizeof line, "%-8s %6d   %7.2f +- %-7.2f   %9.4f   %9.3f\n", r.name.c_str(), r.params,
                  r.e_r_mean, r.e_r_std, r.mag_err_mean, r.ang_err_mean);
    out << line;
  }
}

StreamResult stream_eval(const models::ForceModel& model, const pipeline::Recording& processed,
                         const geometry::ArrayLayout& layout) {
  processed.validate();
  if (!processed.meta.processed) throw DataError("stream_eval: recording must be preprocessed");
  if (!processed.shares_grid()) throw DataError("stream_eval: channels must share one grid");
  if (model.scales.x.size() != processed.taxels.dims()) {
    throw ShapeError("stream_eval: model scales cover " + std::to_string(model.scales.x.size()) +
                     " activity columns, recording has " + std::to_string(processed.taxels.dims()));
  }
  if ((model.scales.x.array() <= 0.0).any() || !model.scales.x.allFinite()) {
    throw DataError("stream_eval: model scales must be positive and finite");
  }

  StreamResult res;
  const Eigen::Index n = processed.taxels.size();
  res.t = processed.taxels.t;
  res.truth = processed.force.values;
  res.estimate.resize(n, 3);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::VectorXd x = processed.taxels.values.row(k).transpose().cwiseQuotient(model.scales.x);
    res.estimate.row(k) = models::predict(model, x, layout).transpose();
  }
  res.report = evaluate(res.truth, res.estimate);
  return res;
}

void write_stream_trace(std::ostream& out, const StreamResult& result) {
  out << "t,f_x,f_y,f_z,fhat_x,fhat_y,fhat_z,e_r,mag_err,ang_err\n";
  const auto nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t k = 0; k < result.t.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    const Vector3d t = result.truth.row(i).transpose();
    const Vector3d e = result.estimate.row(i).transpose();
    const ForceErrors fe = error_metrics(t, e);
    out << pipeline::format_double(result.t[k]);
    for (int a = 0; a < 3; ++a) out << ',' << pipeline::format_double(t[a]);
    for (int a = 0; a < 3; ++a) out << ',' << pipeline::format_double(e[a]);
    out << ',' << pipeline::format_double(relative_error(t, e).value_or(nan)) << ','
        << pipeline::format_double(fe.magnitude) << ',' << pipeline::format_double(fe.angle_deg.value_or(nan))
        << '\n';
  }
}

void write_report(std::ostream& out, const ErrorReport& r) {
  out << "e_r      " << fixed(r.e_r_mean, 3) << " +- " << fixed(r.e_r_std, 3) << " %\n"
      << "|f| err  " << fixed(r.mag_err_mean, 4) << " N\n"
      << "angle    " << fixed(r.ang_err_mean, 3) << " deg\n"
      << "samples  " << r.n_used << " used, " << r.n_excluded << " excluded\n";
}

}  // namespace tforce::eval
