#include "tforce/recording.hpp"

#include "tforce/error.hpp"

#include <json.hpp>

#include <charconv>
#include <fstream>
#include <sstream>

namespace tforce::pipeline {

namespace {

std::filesystem::path strip_csv(const std::filesystem::path& base) {
  auto p = base;
  if (p.extension() == ".csv") p.replace_extension();
  return p;
}

std::filesystem::path with_suffix(const std::filesystem::path& base, const std::string& suffix) {
  auto p = strip_csv(base);
  p += suffix;
  return p;
}

std::vector<std::string> csv_header(int n) {
  std::vector<std::string> cols{"t"};
  const char* axes = "xyz";
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) cols.push_back("x_" + std::to_string(i) + "_" + axes[a]);
  }
  for (const char* c : {"f_x", "f_y", "f_z", "q_w", "q_x", "q_y", "q_z", "q0", "q1", "q2", "q3"}) cols.emplace_back(c);
  return cols;
}

double parse_double(std::string_view s, std::size_t line) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError("recording csv line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error("format_double failed");
  return std::string(buf, ptr);
}

void TimeSeries::validate(const std::string& name) const {
  if (static_cast<Eigen::Index>(t.size()) != values.rows()) {
    throw DataError("channel '" + name + "': timestamp count does not match sample count");
  }
  for (std::size_t k = 1; k < t.size(); ++k) {
    if (!(t[k] > t[k - 1])) throw DataError("channel '" + name + "': timestamps must strictly increase");
  }
}

void Recording::validate() const {
  if (!(meta.nominal_rate > 0.0)) throw DataError("recording: nominal rate must be positive");
  if (meta.n <= 0 || meta.h * meta.w != meta.n) throw DataError("recording: inconsistent array shape");
  taxels.validate("taxels");
  force.validate("force");
  frame.validate("frame");
  joints.validate("joints");
  if (taxels.dims() != 3 * meta.n) throw ShapeError("recording: taxel channel must have 3n columns");
  if (force.dims() != 3 || frame.dims() != 4 || joints.dims() != 4) {
    throw ShapeError("recording: force/frame/joint channels must have 3/4/4 columns");
  }
}

bool Recording::shares_grid() const {
  return taxels.t == force.t && taxels.t == frame.t && taxels.t == joints.t;
}

void write_recording(const Recording& rec, const std::filesystem::path& base, const std::string& comment) {
  rec.validate();
  if (!rec.shares_grid()) throw DataError("write_recording: channels must share one timestamp grid");

  const auto csv_path = with_suffix(base, ".csv");
  std::ofstream csv(csv_path);
  if (!csv) throw ConfigError("cannot write " + csv_path.string());
  if (!comment.empty()) csv << "# " << comment << '\n';
  const auto header = csv_header(rec.meta.n);
  for (std::size_t c = 0; c < header.size(); ++c) csv << (c ? "," : "") << header[c];
  csv << '\n';
  for (Eigen::Index k = 0; k < rec.taxels.size(); ++k) {
    std::string line = format_double(rec.taxels.t[static_cast<std::size_t>(k)]);
    auto put = [&](const Eigen::MatrixXd& m) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        line += ',';
        line += format_double(m(k, c));
      }
    };
    put(rec.taxels.values);
    put(rec.force.values);
    put(rec.frame.values);
    put(rec.joints.values);
    csv << line << '\n';
  }

  nlohmann::ordered_json meta;
  meta["array_id"] = rec.meta.array_id;
  meta["n"] = rec.meta.n;
  meta["h"] = rec.meta.h;
  meta["w"] = rec.meta.w;
  meta["rate"] = rec.meta.nominal_rate;
  auto segs = nlohmann::ordered_json::array();
  for (const auto& s : rec.meta.static_segments) segs.push_back({s.t0, s.t1});
  meta["static_segments"] = segs;
  meta["processed"] = rec.meta.processed;
  std::vector<double> ox(rec.offsets.x.data(), rec.offsets.x.data() + rec.offsets.x.size());
  meta["offsets"] = {{"x", ox}, {"f", {rec.offsets.f.x(), rec.offsets.f.y(), rec.offsets.f.z()}}};
  meta["tags"] = rec.meta.tags;
  const auto meta_path = with_suffix(base, ".meta.json");
  std::ofstream mj(meta_path);
  if (!mj) throw ConfigError("cannot write " + meta_path.string());
  mj << meta.dump(2) << '\n';
}

Recording read_recording(const std::filesystem::path& base) {
  const auto meta_path = with_suffix(base, ".meta.json");
  const auto csv_path = with_suffix(base, ".csv");
  std::ifstream mj(meta_path);
  if (!mj) throw ConfigError("cannot open recording metadata: " + meta_path.string());
  Recording rec;
  try {
    nlohmann::json meta;
    mj >> meta;
    rec.meta.array_id = meta.at("array_id").get<std::string>();
    rec.meta.n = meta.at("n").get<int>();
    rec.meta.h = meta.at("h").get<int>();
    rec.meta.w = meta.at("w").get<int>();
    rec.meta.nominal_rate = meta.at("rate").get<double>();
    for (const auto& s : meta.at("static_segments")) rec.meta.static_segments.push_back({s.at(0), s.at(1)});
    rec.meta.processed = meta.value("processed", false);
    if (meta.contains("offsets")) {
      const auto ox = meta["offsets"].at("x").get<std::vector<double>>();
      rec.offsets.x = Eigen::Map<const Eigen::VectorXd>(ox.data(), static_cast<Eigen::Index>(ox.size()));
      const auto of = meta["offsets"].at("f").get<std::vector<double>>();
      if (of.size() == 3) rec.offsets.f = {of[0], of[1], of[2]};
    }
    if (meta.contains("tags")) rec.meta.tags = meta["tags"].get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed recording metadata " + meta_path.string() + ": " + e.what());
  }
  if (rec.offsets.x.size() == 0) rec.offsets.x = Eigen::VectorXd::Zero(3 * rec.meta.n);

  std::ifstream csv(csv_path);
  if (!csv) throw ConfigError("cannot open recording data: " + csv_path.string());
  const auto expected = csv_header(rec.meta.n);
  const std::size_t cols = expected.size();
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::vector<double> flat;
  while (std::getline(csv, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      std::vector<std::string> names;
      std::stringstream ss(line);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        while (!tok.empty() && (tok.front() == ' ')) tok.erase(tok.begin());
        while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\r')) tok.pop_back();
        names.push_back(tok);
      }
      if (names != expected) throw DataError("recording csv header does not match n=" + std::to_string(rec.meta.n));
      continue;
    }
    std::size_t start = 0;
    std::size_t count = 0;
    while (true) {
      const auto comma = line.find(',', start);
      const auto tok = std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      flat.push_back(parse_double(tok, line_no));
      ++count;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (count != cols) throw DataError("recording csv line " + std::to_string(line_no) + ": wrong column count");
  }
  const Eigen::Index rows = static_cast<Eigen::Index>(flat.size() / cols);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
      flat.data(), rows, static_cast<Eigen::Index>(cols));
  std::vector<double> t(static_cast<std::size_t>(rows));
  for (Eigen::Index k = 0; k < rows; ++k) t[static_cast<std::size_t>(k)] = m(k, 0);
  const Eigen::Index nx = 3 * rec.meta.n;
  rec.taxels = {t, m.block(0, 1, rows, nx)};
  rec.force = {t, m.block(0, 1 + nx, rows, 3)};
  rec.frame = {t, m.block(0, 4 + nx, rows, 4)};
  rec.joints = {t, m.block(0, 8 + nx, rows, 4)};
  rec.validate();
  return rec;
}

}  // namespace tforce::pipeline
