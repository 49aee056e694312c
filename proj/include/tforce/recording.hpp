#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tforce::pipeline {

/// Samples of one channel. values has one row per timestamp.
struct TimeSeries {
  std::vector<double> t;
  Eigen::MatrixXd values;

  Eigen::Index size() const { return static_cast<Eigen::Index>(t.size()); }
  Eigen::Index dims() const { return values.cols(); }
  double front() const { return t.front(); }
  double back() const { return t.back(); }

  /// Throws DataError unless timestamps strictly increase and match values.
  void validate(const std::string& name) const;
};

struct Interval {
  double t0 = 0.0;
  double t1 = 0.0;
  double length() const { return t1 - t0; }
  bool contains(double t) const { return t >= t0 && t <= t1; }
};

/// Per-column offsets that have been subtracted from a recording.
struct Offsets {
  Eigen::VectorXd x;  // 3n
  Eigen::Vector3d f = Eigen::Vector3d::Zero();
};

struct RecordingMeta {
  std::string array_id;
  int n = 0;
  int h = 0;
  int w = 0;
  double nominal_rate = 100.0;
  std::vector<Interval> static_segments;
  // True once forces are projected into the array frame and offsets removed.
  bool processed = false;
  std::map<std::string, std::string> tags;
};

/// Raw or processed data of one array: taxel activities (3n), reference
/// forces (3), the rotation R0_F as a (w, x, y, z) quaternion, and joint
/// positions (4). Each channel carries its own timestamps.
struct Recording {
  RecordingMeta meta;
  TimeSeries taxels;
  TimeSeries force;
  TimeSeries frame;
  TimeSeries joints;
  Offsets offsets;

  void validate() const;
  /// True when every channel uses the same timestamp vector.
  bool shares_grid() const;
};

/// Writes `<base>.csv` and `<base>.meta.json`. Requires a shared grid.
/// A non-empty `comment` becomes a leading `# ...` line of the CSV.
void write_recording(const Recording& rec, const std::filesystem::path& base, const std::string& comment = {});
Recording read_recording(const std::filesystem::path& base);

/// Shortest round-trip decimal text of a double.
std::string format_double(double v);

}  // namespace tforce::pipeline
