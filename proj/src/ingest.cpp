#include "hagps/ingest.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace hagps {

const char* to_string(Direction d) {
  switch (d) {
    case Direction::North: return "north";
    case Direction::South: return "south";
    case Direction::East: return "east";
    case Direction::West: return "west";
  }
  return "?";
}

namespace {

constexpr double kKmPerDegreeLat = 110.574;
constexpr double kKmPerDegreeLonEquator = 111.320;
constexpr double kEdgeSnap = 1e-9;

int cell_count(double span_km, double cell_km) {
  return std::max(1, static_cast<int>(std::ceil(span_km / cell_km - 1e-9)));
}

// Cell index along one axis with the larger-index tie-break on shared edges.
std::optional<int> axis_cell(double value, double lo, double hi, double step, int cells) {
  if (!(value >= lo && value <= hi)) return std::nullopt;
  const double r = (value - lo) / step;
  const double nearest = std::round(r);
  int cell = std::abs(r - nearest) < kEdgeSnap ? static_cast<int>(nearest) : static_cast<int>(std::floor(r));
  return std::clamp(cell, 0, cells - 1);
}

std::vector<std::string> split_row(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(std::move(field));
  return out;
}

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string format_day(std::chrono::sys_days day) {
  const std::chrono::year_month_day ymd{day};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

}  // namespace

RegionGrid::RegionGrid(BBox bbox, double cell_km) : bbox_(bbox), cell_km_(cell_km) {
  if (!(cell_km > 0.0) || !std::isfinite(cell_km)) throw ConfigError("cell_km must be positive");
  if (!(bbox.lat_max > bbox.lat_min) || !(bbox.lon_max > bbox.lon_min))
    throw ConfigError("degenerate bounding box");
  if (bbox.lat_min < -90.0 || bbox.lat_max > 90.0) throw ConfigError("latitude out of range");
  const double lat_mid = 0.5 * (bbox.lat_min + bbox.lat_max) * M_PI / 180.0;
  const double km_per_lon = kKmPerDegreeLonEquator * std::cos(lat_mid);
  dlat_ = cell_km / kKmPerDegreeLat;
  dlon_ = cell_km / km_per_lon;
  rows_ = cell_count((bbox.lat_max - bbox.lat_min) * kKmPerDegreeLat, cell_km);
  cols_ = cell_count((bbox.lon_max - bbox.lon_min) * km_per_lon, cell_km);
  features_ = FeatureMatrix::Zero(size(), 3);
}

RegionGrid RegionGrid::lattice(int rows, int cols) {
  if (rows < 1 || cols < 1) throw ConfigError("lattice needs at least one row and column");
  RegionGrid g;
  g.bbox_ = {0.0, static_cast<double>(rows), 0.0, static_cast<double>(cols)};
  g.cell_km_ = 1.0;
  g.dlat_ = 1.0;
  g.dlon_ = 1.0;
  g.rows_ = rows;
  g.cols_ = cols;
  g.features_ = FeatureMatrix::Zero(g.size(), 3);
  return g;
}

std::optional<int> RegionGrid::neighbor(int region, Direction dir) const {
  int r = row_of(region);
  int c = col_of(region);
  switch (dir) {
    case Direction::North: ++r; break;
    case Direction::South: --r; break;
    case Direction::East: ++c; break;
    case Direction::West: --c; break;
  }
  if (r < 0 || r >= rows_ || c < 0 || c >= cols_) return std::nullopt;
  return r * cols_ + c;
}

int RegionGrid::neighbor_count(int region) const {
  int n = 0;
  for (Direction d : kDirections) n += neighbor(region, d).has_value();
  return n;
}

std::optional<int> RegionGrid::assign(double lat, double lon) const {
  if (!std::isfinite(lat) || !std::isfinite(lon)) throw ValidationError("non-finite coordinate");
  const auto row = axis_cell(lat, bbox_.lat_min, bbox_.lat_max, dlat_, rows_);
  const auto col = axis_cell(lon, bbox_.lon_min, bbox_.lon_max, dlon_, cols_);
  if (!row || !col) return std::nullopt;
  return *row * cols_ + *col;
}

void RegionGrid::set_static_features(FeatureMatrix features) {
  if (features.rows() != size()) throw ConfigError("static feature rows do not match region count");
  if ((features.array() < 0).any()) throw ConfigError("static feature counts must be nonnegative");
  features_ = std::move(features);
}

std::optional<TimePoint> parse_timestamp(std::string_view text) {
  std::string s(text);
  int y = 0, mo = 0, d = 0, h = 0, mi = 0;
  double sec = 0.0;
  char sep = 0;
  int consumed = 0;
  if (std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%lf%n", &y, &mo, &d, &sep, &h, &mi, &sec, &consumed) != 7)
    return std::nullopt;
  if (sep != ' ' && sep != 'T') return std::nullopt;
  if (h < 0 || h > 23 || mi < 0 || mi > 59 || sec < 0.0 || sec >= 61.0) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year(y), std::chrono::month(static_cast<unsigned>(mo)),
                                        std::chrono::day(static_cast<unsigned>(d))};
  if (!ymd.ok()) return std::nullopt;
  return std::chrono::sys_days(ymd) + std::chrono::hours(h) + std::chrono::minutes(mi) +
         std::chrono::seconds(static_cast<int>(sec));
}

int DemandSeries::weekday(int t) const {
  const std::chrono::weekday wd{start_day + std::chrono::days(t)};
  return static_cast<int>(wd.iso_encoding()) - 1;
}

DemandSeries aggregate(std::span<const TripRecord> trips, const RegionGrid& grid, IngestReport& report,
                       std::optional<Period> period) {
  using std::chrono::floor;
  using std::chrono::sys_days;

  DemandSeries series;
  series.grid_rows = grid.rows();
  series.grid_cols = grid.cols();
  const int K = grid.size();
  report.regions = K;

  if (trips.empty()) {
    series.pickups = CountMat::Zero(0, K);
    series.dropoffs = CountMat::Zero(0, K);
    report.intervals = 0;
    report.warnings.push_back("no trips to aggregate; demand series is empty");
    return series;
  }

  for (const auto& trip : trips) {
    if (trip.end_time < trip.start_time) throw ValidationError("trip ends before it starts");
  }

  if (!period) {
    auto [lo, hi] = std::minmax_element(trips.begin(), trips.end(), [](const TripRecord& a, const TripRecord& b) {
      return a.start_time < b.start_time;
    });
    period = Period{floor<std::chrono::days>(lo->start_time), floor<std::chrono::days>(hi->start_time)};
  }
  if (period->last < period->first) throw ConfigError("ingest period is empty");

  const int T = static_cast<int>((period->last - period->first).count()) + 1;
  series.start_day = period->first;
  series.pickups = CountMat::Zero(T, K);
  series.dropoffs = CountMat::Zero(T, K);

  for (const auto& trip : trips) {
    const auto from = grid.assign(trip.start_lat, trip.start_lon);
    const auto to = grid.assign(trip.end_lat, trip.end_lon);
    if (!from || !to) {
      ++report.dropped_out_of_bounds;
      continue;
    }
    const auto t0 = (floor<std::chrono::days>(trip.start_time) - period->first).count();
    const auto t1 = (floor<std::chrono::days>(trip.end_time) - period->first).count();
    if (t0 < 0 || t0 >= T || t1 < 0 || t1 >= T) {
      ++report.dropped_out_of_period;
      continue;
    }
    ++series.pickups(t0, *from);
    ++series.dropoffs(t1, *to);
    ++report.trips_aggregated;
  }
  report.intervals = T;
  return series;
}

TripFile read_trips(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trip file: " + path.string());

  TripFile out;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("trip file has no header row");
  const char delim = line.find('\t') != std::string::npos && line.find(',') == std::string::npos ? '\t' : ',';
  const auto header = split_row(line, delim);

  static constexpr std::array<const char*, 6> kColumns{"started_at", "ended_at",  "start_lat",
                                                       "start_lng",  "end_lat",   "end_lng"};
  std::array<std::size_t, 6> col{};
  for (std::size_t c = 0; c < kColumns.size(); ++c) {
    auto it = std::find(header.begin(), header.end(), kColumns[c]);
    if (it == header.end()) throw ConfigError(std::string("trip file missing column ") + kColumns[c]);
    col[c] = static_cast<std::size_t>(it - header.begin());
  }
  const std::size_t needed = *std::max_element(col.begin(), col.end()) + 1;

  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++out.report.rows_read;
    const auto fields = split_row(line, delim);
    if (fields.size() < needed) {
      ++out.report.rows_malformed;
      continue;
    }
    const auto start = parse_timestamp(fields[col[0]]);
    const auto end = parse_timestamp(fields[col[1]]);
    const auto slat = parse_double(fields[col[2]]);
    const auto slon = parse_double(fields[col[3]]);
    const auto elat = parse_double(fields[col[4]]);
    const auto elon = parse_double(fields[col[5]]);
    if (!start || !end || !slat || !slon || !elat || !elon || *end < *start) {
      ++out.report.rows_malformed;
      continue;
    }
    out.trips.push_back({*start, *end, *slat, *slon, *elat, *elon});
  }
  return out;
}

Vec pickup_stats(const DemandSeries& series, int t, int history) {
  if (t < 0) throw ValidationError("pickup_stats: negative interval");
  if (history < 1) throw ValidationError("pickup_stats: history must be >= 1");
  const int K = series.regions();
  Vec out = Vec::Zero(2 * K);
  const int lo = std::max(0, t - history);
  const int hi = std::min(t, series.intervals());
  const int n = hi - lo;
  if (n <= 0) return out;
  for (int k = 0; k < K; ++k) {
    const Vec window = series.pickups.col(k).segment(lo, n).cast<double>();
    const double mean = window.mean();
    const double var = (window.array() - mean).square().mean();
    out(2 * k) = mean;
    out(2 * k + 1) = std::sqrt(std::max(0.0, var));
  }
  return out;
}

LoadedFeatures load_static_features(const std::filesystem::path& path, const RegionGrid& grid) {
  LoadedFeatures out;
  out.features = FeatureMatrix::Zero(grid.size(), 3);
  std::ifstream in(path);
  if (path.empty() || !in) {
    out.warnings.push_back("static feature file not found (" + path.string() + "); using zeros");
    return out;
  }
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    const auto fields = split_row(line, line.find('\t') != std::string::npos ? '\t' : ',');
    if (fields.size() != 3) throw ConfigError("static feature row " + std::to_string(row) + " needs 3 columns");
    if (row >= grid.size()) throw ConfigError("static feature file has more rows than regions");
    for (int c = 0; c < 3; ++c) {
      const auto v = parse_double(fields[static_cast<std::size_t>(c)]);
      if (!v || *v != std::floor(*v)) throw ConfigError("static feature values must be integers");
      if (*v < 0) throw ConfigError("static feature counts must be nonnegative");
      out.features(row, c) = static_cast<Count>(*v);
    }
    ++row;
  }
  if (row != grid.size())
    throw ConfigError("static feature file has " + std::to_string(row) + " rows, expected " +
                      std::to_string(grid.size()));
  return out;
}

void save_demand(const DemandSeries& series, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "hagps-demand";
  j["version"] = DemandSeries::kVersion;
  j["interval"] = series.interval_kind;
  j["start_date"] = format_day(series.start_day);
  j["T"] = series.intervals();
  j["K"] = series.regions();
  j["grid"] = {{"rows", series.grid_rows}, {"cols", series.grid_cols}};
  auto rows_of = [](const CountMat& m) {
    nlohmann::json a = nlohmann::json::array();
    for (Index t = 0; t < m.rows(); ++t) {
      std::vector<Count> row(m.row(t).data(), m.row(t).data() + m.cols());
      a.push_back(row);
    }
    return a;
  };
  j["pickups"] = rows_of(series.pickups);
  j["dropoffs"] = rows_of(series.dropoffs);
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write demand artifact: " + path.string());
  out << j.dump() << '\n';
}

DemandSeries load_demand(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open demand artifact: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("demand artifact is not valid JSON: " + std::string(e.what()));
  }
  if (j.value("format", "") != "hagps-demand") throw ConfigError("not a demand artifact");
  if (j.value("version", 0) != DemandSeries::kVersion) throw ConfigError("unsupported demand artifact version");

  DemandSeries s;
  s.interval_kind = j.value("interval", "day");
  const auto date = parse_timestamp(j.at("start_date").get<std::string>() + " 00:00:00");
  if (!date) throw ConfigError("bad start_date in demand artifact");
  s.start_day = std::chrono::floor<std::chrono::days>(*date);
  const int T = j.at("T").get<int>();
  const int K = j.at("K").get<int>();
  s.grid_rows = j.at("grid").at("rows").get<int>();
  s.grid_cols = j.at("grid").at("cols").get<int>();
  if (s.grid_rows * s.grid_cols != K) throw ConfigError("demand artifact grid does not match K");
  auto read = [&](const nlohmann::json& a) {
    if (!a.is_array() || static_cast<int>(a.size()) != T) throw ConfigError("demand tensor has wrong row count");
    CountMat m(T, K);
    for (int t = 0; t < T; ++t) {
      const auto& row = a[static_cast<std::size_t>(t)];
      if (!row.is_array() || static_cast<int>(row.size()) != K) throw ConfigError("demand tensor has wrong width");
      for (int k = 0; k < K; ++k) {
        const Count v = row[static_cast<std::size_t>(k)].get<Count>();
        if (v < 0) throw ConfigError("negative demand count");
        m(t, k) = v;
      }
    }
    return m;
  };
  s.pickups = read(j.at("pickups"));
  s.dropoffs = read(j.at("dropoffs"));
  return s;
}

}  // namespace hagps
