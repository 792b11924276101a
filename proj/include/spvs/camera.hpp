#pragma once

// Pinhole intrinsics, sphere <-> image projections, the image bound used by
// the visibility constraint and the bounding-box range estimator.

#include "spvs/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

namespace spvs {

/// Features with n_z below this are treated as not visible.
inline constexpr double kFrontEpsilon = 1e-3;

struct PinholeIntrinsics {
  double fx = 376.0;
  double fy = 376.0;
  double cx = 376.0;
  double cy = 240.0;
  double width = 752.0;
  double height = 480.0;

  Mat3 matrix() const {
    Mat3 k;
    k << fx, 0.0, cx,
         0.0, fy, cy,
         0.0, 0.0, 1.0;
    return k;
  }

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
    if (!(width > 0.0 && height > 0.0)) throw std::invalid_argument("intrinsics: image size must be positive");
  }

  /// Normalized half extents of the physical sensor measured from the principal point
  /// (the smaller side per axis).
  double sensor_half_width_n() const { return std::min(cx, width - cx) / fx; }
  double sensor_half_height_n() const { return std::min(cy, height - cy) / fy; }
};

/// Symmetric image bound in normalized coordinates.
struct ImageBound {
  double half_width_n = 0.0;
  double half_height_n = 0.0;

  /// Bound of w x h pixels centered on the principal point.
  static ImageBound from_pixels(double width_px, double height_px, const PinholeIntrinsics& k) {
    return {0.5 * width_px / k.fx, 0.5 * height_px / k.fy};
  }

  void validate(const PinholeIntrinsics& k) const {
    if (!(half_width_n > 0.0 && half_height_n > 0.0)) throw std::invalid_argument("image bound: half extents must be positive");
    if (!(half_width_n < k.sensor_half_width_n())) throw std::invalid_argument("image bound: width exceeds the frame");
    if (!(half_height_n < k.sensor_half_height_n())) throw std::invalid_argument("image bound: height exceeds the frame");
  }
};

struct BoundingBox {
  double center_u = 0.0;
  double center_v = 0.0;
  double w_box = 0.0;
  double h_box = 0.0;
};

struct NormalizedPoint {
  double x = 0.0;
  double y = 0.0;
};

struct BoundCheck {
  bool inside = false;
  double margin_x = 0.0;
  double margin_y = 0.0;
};

inline Vec3 to_sphere(const Vec3& s, const PinholeIntrinsics& k) {
  const Vec3 v((s.x() / s.z() - k.cx) / k.fx, (s.y() / s.z() - k.cy) / k.fy, 1.0);
  return v.normalized();
}

/// Perspective division. Empty when the bearing is behind (or grazing) the image plane.
inline std::optional<NormalizedPoint> to_image_normalized(const Vec3& rho) {
  if (!(rho.z() > kFrontEpsilon)) return std::nullopt;
  return NormalizedPoint{rho.x() / rho.z(), rho.y() / rho.z()};
}

inline Vec3 to_pixel(const NormalizedPoint& p, const PinholeIntrinsics& k) {
  return {k.fx * p.x + k.cx, k.fy * p.y + k.cy, 1.0};
}

/// Closed-set membership test; margins are positive inside.
inline BoundCheck in_bound(const Vec3& rho, const ImageBound& b) {
  const auto p = to_image_normalized(rho);
  if (!p) return {false, -b.half_width_n, -b.half_height_n};
  BoundCheck out;
  out.margin_x = b.half_width_n - std::abs(p->x);
  out.margin_y = b.half_height_n - std::abs(p->y);
  out.inside = out.margin_x >= 0.0 && out.margin_y >= 0.0;
  return out;
}

/// Range to a target of known diameter from its detected bounding box.
///
/// The box center is back-projected to the unit-depth ray K^-1 s, so an
/// off-axis target of the same apparent size lies farther away than an
/// on-axis one.
inline double range_from_bbox(const BoundingBox& box, const PinholeIntrinsics& k, double d_gate) {
  if (!(box.w_box > 0.0 && box.h_box > 0.0)) throw std::invalid_argument("range_from_bbox: degenerate box");
  if (!(d_gate > 0.0)) throw std::invalid_argument("range_from_bbox: gate diameter must be positive");
  const Vec3 ray((box.center_u - k.cx) / k.fx, (box.center_v - k.cy) / k.fy, 1.0);
  const double depth = d_gate / std::max(box.w_box / k.fx, box.h_box / k.fy);
  return (ray * depth).norm();
}

}  // namespace spvs
