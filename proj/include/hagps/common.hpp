#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace hagps {

template <typename Scalar> using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar> using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vec = VectorX<double>;
using Mat = MatrixX<double>;
using Index = Eigen::Index;

// Integer bike / trip counts.
using Count = std::int64_t;
using CountVec = VectorX<Count>;
using CountMat = Eigen::Matrix<Count, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a NaN or Inf shows up in a forward/backward pass or a loss.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Direction : int { North = 0, South = 1, East = 2, West = 3 };

inline constexpr std::array<Direction, 4> kDirections{Direction::North, Direction::South,
                                                      Direction::East, Direction::West};

constexpr Direction opposite(Direction d) {
  switch (d) {
    case Direction::North: return Direction::South;
    case Direction::South: return Direction::North;
    case Direction::East: return Direction::West;
    case Direction::West: return Direction::East;
  }
  return d;
}

constexpr int index_of(Direction d) { return static_cast<int>(d); }

const char* to_string(Direction d);

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

inline void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + what);
}

}  // namespace hagps
