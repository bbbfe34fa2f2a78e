#pragma once

#include "hagps/common.hpp"

#include <chrono>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hagps {

struct BBox {
  double lat_min = 0.0;
  double lat_max = 0.0;
  double lon_min = 0.0;
  double lon_max = 0.0;
};

// Per-region static urban features: columns are roads, bike lanes, POIs.
using FeatureMatrix = Eigen::Matrix<Count, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Rectangular partition of a bounding box into cells of `cell_km` kilometers.
///
/// Rows run south to north (increasing latitude), columns west to east
/// (increasing longitude). Region index is `row * cols + col`.
class RegionGrid {
 public:
  RegionGrid(BBox bbox, double cell_km);

  // Abstract rows x cols grid with unit cells and no geography.
  static RegionGrid lattice(int rows, int cols);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int size() const { return rows_ * cols_; }
  const BBox& bbox() const { return bbox_; }
  double cell_km() const { return cell_km_; }

  int row_of(int region) const { return region / cols_; }
  int col_of(int region) const { return region % cols_; }

  std::optional<int> neighbor(int region, Direction dir) const;
  int neighbor_count(int region) const;

  /// Cell containing (lat, lon), or nullopt when the point lies outside the bbox.
  /// Cells are half-open: a point on a shared edge belongs to the cell with the
  /// larger row/column index. The outer north and east edges are inclusive.
  std::optional<int> assign(double lat, double lon) const;

  const FeatureMatrix& static_features() const { return features_; }
  void set_static_features(FeatureMatrix features);

 private:
  RegionGrid() = default;

  BBox bbox_{};
  double cell_km_ = 1.0;
  double dlat_ = 1.0;
  double dlon_ = 1.0;
  int rows_ = 0;
  int cols_ = 0;
  FeatureMatrix features_;
};

inline RegionGrid build_grid(BBox bbox, double cell_km) { return RegionGrid(bbox, cell_km); }

using TimePoint = std::chrono::sys_seconds;

struct TripRecord {
  TimePoint start_time;
  TimePoint end_time;
  double start_lat = 0.0;
  double start_lon = 0.0;
  double end_lat = 0.0;
  double end_lon = 0.0;
};

/// Parses "YYYY-MM-DD HH:MM:SS" (optionally with a 'T' separator and
/// fractional seconds). Timestamps are naive local times.
std::optional<TimePoint> parse_timestamp(std::string_view text);

/// Per-day pick-up (d) and drop-off (o) counts, T x K.
struct DemandSeries {
  static constexpr int kVersion = 1;

  std::chrono::sys_days start_day{};
  std::string interval_kind = "day";
  // Grid layout the region indices refer to (row-major, rows * cols == K).
  int grid_rows = 0;
  int grid_cols = 0;
  CountMat pickups;
  CountMat dropoffs;

  int intervals() const { return static_cast<int>(pickups.rows()); }
  int regions() const { return static_cast<int>(pickups.cols()); }
  // 0 = Monday .. 6 = Sunday.
  int weekday(int t) const;
};

struct IngestReport {
  std::int64_t rows_read = 0;
  std::int64_t rows_malformed = 0;
  std::int64_t dropped_out_of_bounds = 0;
  std::int64_t dropped_out_of_period = 0;
  std::int64_t trips_aggregated = 0;
  int intervals = 0;
  int regions = 0;
  std::vector<std::string> warnings;
};

struct Period {
  std::chrono::sys_days first;
  std::chrono::sys_days last;  // inclusive
};

/// Bins trips by calendar day of start (pick-up) and end (drop-off) time.
/// Trips with either endpoint outside the grid, or either day outside the
/// period, are dropped from both tensors. Without an explicit period the range
/// of start days is used.
DemandSeries aggregate(std::span<const TripRecord> trips, const RegionGrid& grid,
                       IngestReport& report, std::optional<Period> period = std::nullopt);

struct TripFile {
  std::vector<TripRecord> trips;
  IngestReport report;
};

/// Reads a delimited trip file with a header row containing started_at,
/// ended_at, start_lat, start_lng, end_lat, end_lng. Malformed rows are
/// counted and skipped.
TripFile read_trips(const std::filesystem::path& path);

template <typename Scalar = double>
Eigen::Matrix<Scalar, 4, 1> temporal_encode(double hour, int weekday) {
  if (!(hour >= 0.0 && hour < 24.0)) throw ValidationError("hour must be in [0, 24)");
  if (weekday < 0 || weekday > 6) throw ValidationError("weekday must be in 0..6");
  constexpr double two_pi = 6.283185307179586476925286766559;
  const double a = two_pi * hour / 24.0;
  const double b = two_pi * weekday / 7.0;
  Eigen::Matrix<Scalar, 4, 1> v;
  v << Scalar(std::sin(a)), Scalar(std::cos(a)), Scalar(std::sin(b)), Scalar(std::cos(b));
  return v;
}

/// Interleaved (mean, population std) of pick-ups over intervals
/// [max(0, t - H), t) for every region; zeros when t == 0.
Vec pickup_stats(const DemandSeries& series, int t, int history);

struct LoadedFeatures {
  FeatureMatrix features;
  std::vector<std::string> warnings;
};

/// Reads K rows of "roads,bike_lanes,pois". A missing file yields zeros and a warning.
LoadedFeatures load_static_features(const std::filesystem::path& path, const RegionGrid& grid);

// DemandSeries artifact (JSON, versioned).
void save_demand(const DemandSeries& series, const std::filesystem::path& path);
DemandSeries load_demand(const std::filesystem::path& path);

}  // namespace hagps
