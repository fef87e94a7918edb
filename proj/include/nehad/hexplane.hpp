#pragma once

// Six-plane multi-resolution space-time feature encoder.
//
// Each level holds planes XY, XZ, YZ, XT, YT, ZT of shape [H, W, C]. A
// normalized query u = (x, y, z, t) in [0,1]^4 is projected onto every plane
// (first axis -> column, second axis -> row), bilinearly interpolated, and the
// six lookups are multiplied elementwise. Levels are concatenated.

#include <array>
#include <atomic>
#include <cstdint>
#include <span>
#include <vector>

#include "nehad/autodiff.hpp"
#include "nehad/tensor.hpp"

namespace nehad {

enum class PlaneAxes { xy, xz, yz, xt, yt, zt };

inline constexpr std::array<PlaneAxes, 6> kAllPlanes{PlaneAxes::xy, PlaneAxes::xz, PlaneAxes::yz,
                                                     PlaneAxes::xt, PlaneAxes::yt, PlaneAxes::zt};

// Coordinate indices (0..3 for x, y, z, t) read by a plane: {column axis, row axis}.
std::array<int, 2> plane_coords(PlaneAxes axes);
const char* plane_name(PlaneAxes axes);

struct PlaneGrid {
  PlaneAxes axes = PlaneAxes::xy;
  Tensor params;  // [H, W, C]

  std::size_t height() const { return params.shape()[0]; }
  std::size_t width() const { return params.shape()[1]; }
  std::size_t channels() const { return params.shape()[2]; }
};

struct HexPlaneConfig {
  std::size_t base_resolution = 64;
  std::vector<std::size_t> upsampling{2, 4};
  std::size_t channels = 16;
  double init_lo = 0.9;
  double init_hi = 1.1;
};

// Copyable event counter (copies take a snapshot of the count).
class Counter {
 public:
  Counter() = default;
  Counter(const Counter& o) : n_(o.get()) {}
  Counter& operator=(const Counter& o) {
    n_.store(o.get());
    return *this;
  }
  void add(std::size_t k = 1) const { n_.fetch_add(k, std::memory_order_relaxed); }
  std::size_t get() const { return n_.load(std::memory_order_relaxed); }
  void reset() const { n_.store(0); }

 private:
  mutable std::atomic<std::size_t> n_{0};
};

class HexPlaneEncoder {
 public:
  HexPlaneEncoder() = default;
  HexPlaneEncoder(const HexPlaneConfig& config, std::uint64_t seed);
  // Direct construction from planes (6 per level, level-major, kAllPlanes order).
  explicit HexPlaneEncoder(std::vector<PlaneGrid> planes);

  std::size_t num_levels() const { return planes_.size() / 6; }
  std::size_t channels() const { return planes_.empty() ? 0 : planes_[0].channels(); }
  std::size_t feature_dim() const { return channels() * num_levels(); }

  std::vector<PlaneGrid>& planes() { return planes_; }
  const std::vector<PlaneGrid>& planes() const { return planes_; }

  std::vector<double> encode(const std::array<double, 4>& u) const;
  // Batched: coords [N, 4] -> features [N, feature_dim].
  Tensor encode(const Tensor& coords) const;
  // Differentiable w.r.t. the coordinates and every plane. `plane_vars` are
  // bound to planes() in order.
  ad::Var encode(ad::Var coords, std::span<const ad::Var> plane_vars) const;

  double tv_loss() const;
  ad::Var tv_loss(std::span<const ad::Var> plane_vars) const;

  // Number of coordinates clamped into [0,1] so far.
  std::size_t clamp_count() const { return clamps_.get(); }
  void reset_clamp_count() const { clamps_.reset(); }

 private:
  std::vector<PlaneGrid> planes_;
  Counter clamps_;
};

}  // namespace nehad
