#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "uvs/tensor.hpp"

namespace uvs {

class GeometryError : public std::runtime_error {
 public:
  explicit GeometryError(const std::string& msg) : std::runtime_error(msg) {}
};

// Camera pose as (azimuth, elevation) in degrees. Azimuth is normalized to
// [0, 360); elevation must lie in [-90, 90].
struct Pose {
  double azimuth = 0.0;
  double elevation = 0.0;

  Pose() = default;
  Pose(double az, double el) {
    az = std::fmod(az, 360.0);
    if (az < 0) az += 360.0;
    azimuth = az;
    if (el < -90.0 || el > 90.0)
      throw GeometryError("elevation " + std::to_string(el) + " outside [-90, 90]");
    elevation = el;
  }

  bool operator==(const Pose& o) const {
    return azimuth == o.azimuth && elevation == o.elevation;
  }
};

// Axis convention: right-handed, +y up. Azimuth rotates about y, elevation
// about x, composed as R_world(p) = R_y(az) * R_x(el). Volume index (d,h,w)
// maps to physical (z,y,x), voxel centers at (i+0.5)/D*2-1 in [-1,1].
struct RotationMatrix {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static RotationMatrix identity() { return RotationMatrix{}; }

  RotationMatrix transpose() const {
    RotationMatrix r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[i * 3 + j] = m[j * 3 + i];
    return r;
  }

  RotationMatrix operator*(const RotationMatrix& o) const {
    RotationMatrix r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += m[i * 3 + k] * o.m[k * 3 + j];
        r.m[i * 3 + j] = s;
      }
    return r;
  }

  std::array<double, 3> apply(const std::array<double, 3>& v) const {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
  }

  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  bool is_orthonormal(double tol = 1e-6) const {
    RotationMatrix rt = transpose();
    RotationMatrix p = *this * rt;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double expect = i == j ? 1.0 : 0.0;
        if (std::fabs(p.m[i * 3 + j] - expect) > tol) return false;
      }
    return std::fabs(det() - 1.0) <= tol;
  }
};

inline RotationMatrix rotation_x(double degrees) {
  double r = degrees * 3.14159265358979323846 / 180.0;
  double c = std::cos(r), s = std::sin(r);
  RotationMatrix R;
  R.m = {1, 0, 0, 0, c, -s, 0, s, c};
  return R;
}

inline RotationMatrix rotation_y(double degrees) {
  double r = degrees * 3.14159265358979323846 / 180.0;
  double c = std::cos(r), s = std::sin(r);
  RotationMatrix R;
  R.m = {c, 0, s, 0, 1, 0, -s, 0, c};
  return R;
}

inline RotationMatrix rotation_world(const Pose& p) {
  return rotation_y(p.azimuth) * rotation_x(p.elevation);
}

// Relative rotation taking content seen at `from` to how it appears at `to`.
inline RotationMatrix rotation_between(const Pose& from, const Pose& to) {
  if (from == to) return RotationMatrix::identity();
  return rotation_world(to) * rotation_world(from).transpose();
}

// Azimuths evenly spaced from 0 with step 360/n, crossed with elevations;
// azimuth-major order.
inline std::vector<Pose> pose_grid(int n_azimuth, const std::vector<double>& elevations) {
  if (n_azimuth < 1) throw GeometryError("pose_grid requires n_azimuth >= 1");
  std::vector<Pose> out;
  out.reserve(static_cast<size_t>(n_azimuth) * elevations.size());
  double step = 360.0 / n_azimuth;
  for (int a = 0; a < n_azimuth; ++a)
    for (double el : elevations) out.emplace_back(a * step, el);
  return out;
}

enum class Interp { nearest, trilinear };

// Resamples a cubic volume [N,C,D,D,D] under rotation R about the volume
// center: output voxel o samples the input at R^-1 * o. Out-of-bounds reads
// are zero. Trilinear mode is differentiable w.r.t. the volume (the adjoint
// scatters with the same weights). Rs holds either one matrix for the whole
// batch or one per sample.
template <typename T>
Tensor<T> rotate_volume(const Tensor<T>& vol, const std::vector<RotationMatrix>& Rs,
                        Interp interp) {
  const Shape& s = vol.shape();
  if (s.size() != 5) throw ShapeError("rotate_volume expects [N,C,D,H,W], got " + shape_str(s));
  int64_t N = s[0], C = s[1], D = s[2], H = s[3], W = s[4];
  if (D != H || H != W)
    throw GeometryError("rotate_volume requires a cubic volume, got " + shape_str(s));
  if (Rs.size() != 1 && Rs.size() != static_cast<size_t>(N))
    throw GeometryError("rotate_volume: need 1 or N rotation matrices");
  for (const auto& R : Rs)
    if (!R.is_orthonormal()) throw GeometryError("rotate_volume: matrix is not a rotation");

  // Rotation about the center expressed directly in index space. This is the
  // same map as rotating normalized [-1,1] coordinates (the index<->normalized
  // transform is a uniform scale about the center), but keeps grid-aligned
  // samples exact in floating point.
  double c = (static_cast<double>(D) - 1.0) / 2.0;
  int64_t voxels = D * D * D;
  std::vector<T> out(N * C * voxels, T(0));
  const T* xv = vol.values().data();

  // per-sample source coordinates, shared across channels
  struct Src {
    double x, y, z;
  };
  std::vector<Src> src(static_cast<size_t>(Rs.size()) * voxels);
  for (size_t ri = 0; ri < Rs.size(); ++ri) {
    RotationMatrix Rinv = Rs[ri].transpose();
    Src* sp = src.data() + ri * voxels;
    int64_t i = 0;
    for (int64_t d = 0; d < D; ++d) {
      for (int64_t h = 0; h < D; ++h) {
        for (int64_t w = 0; w < D; ++w, ++i) {
          std::array<double, 3> q{static_cast<double>(w) - c, static_cast<double>(h) - c,
                                  static_cast<double>(d) - c};
          auto p = Rinv.apply(q);
          sp[i] = {p[0] + c, p[1] + c, p[2] + c};
        }
      }
    }
  }

  auto sample_nearest = [&](const T* plane, const Src& sc) -> T {
    int64_t iw = llround(sc.x), ih = llround(sc.y), id = llround(sc.z);
    if (iw < 0 || iw >= D || ih < 0 || ih >= D || id < 0 || id >= D) return T(0);
    return plane[(id * D + ih) * D + iw];
  };

#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (N * C * voxels > 4096)
#endif
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t ch = 0; ch < C; ++ch) {
      const Src* sp = src.data() + (Rs.size() == 1 ? 0 : n) * voxels;
      const T* plane = xv + (n * C + ch) * voxels;
      T* op = out.data() + (n * C + ch) * voxels;
      if (interp == Interp::nearest) {
        for (int64_t i = 0; i < voxels; ++i) op[i] = sample_nearest(plane, sp[i]);
      } else {
        for (int64_t i = 0; i < voxels; ++i) {
          const Src& sc = sp[i];
          double fx = std::floor(sc.x), fy = std::floor(sc.y), fz = std::floor(sc.z);
          int64_t x0 = static_cast<int64_t>(fx), y0 = static_cast<int64_t>(fy),
                  z0 = static_cast<int64_t>(fz);
          T tx = static_cast<T>(sc.x - fx), ty = static_cast<T>(sc.y - fy),
            tz = static_cast<T>(sc.z - fz);
          T acc = 0;
          for (int dz = 0; dz < 2; ++dz) {
            int64_t z = z0 + dz;
            if (z < 0 || z >= D) continue;
            T wz = dz ? tz : T(1) - tz;
            for (int dy = 0; dy < 2; ++dy) {
              int64_t y = y0 + dy;
              if (y < 0 || y >= D) continue;
              T wy = dy ? ty : T(1) - ty;
              for (int dx = 0; dx < 2; ++dx) {
                int64_t x = x0 + dx;
                if (x < 0 || x >= D) continue;
                T wx = dx ? tx : T(1) - tx;
                acc += wz * wy * wx * plane[(z * D + y) * D + x];
              }
            }
          }
          op[i] = acc;
        }
      }
    }
  }

  Tensor<T> vc = vol;
  return make_op<T>(
      "rotate_volume", s, std::move(out), {vol},
      [vc, src = std::move(src), N, C, D, voxels, interp, nper = Rs.size()](
          const std::vector<T>& g, GradSink<T>& sink) {
        if (!vc.requires_grad()) return;
        auto& buf = sink.buffer(vc.node().get());
        T* bp_all = buf.data();
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (N * C > 1)
#endif
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t ch = 0; ch < C; ++ch) {
            const Src* sp = src.data() + (nper == 1 ? 0 : n) * voxels;
            const T* gp = g.data() + (n * C + ch) * voxels;
            T* bp = bp_all + (n * C + ch) * voxels;
            for (int64_t i = 0; i < voxels; ++i) {
              T gval = gp[i];
              if (gval == T(0)) continue;
              const Src& sc = sp[i];
              if (interp == Interp::nearest) {
                int64_t iw = llround(sc.x), ih = llround(sc.y), id = llround(sc.z);
                if (iw < 0 || iw >= D || ih < 0 || ih >= D || id < 0 || id >= D) continue;
                bp[(id * D + ih) * D + iw] += gval;
              } else {
                double fx = std::floor(sc.x), fy = std::floor(sc.y), fz = std::floor(sc.z);
                int64_t x0 = static_cast<int64_t>(fx), y0 = static_cast<int64_t>(fy),
                        z0 = static_cast<int64_t>(fz);
                T tx = static_cast<T>(sc.x - fx), ty = static_cast<T>(sc.y - fy),
                  tz = static_cast<T>(sc.z - fz);
                for (int dz = 0; dz < 2; ++dz) {
                  int64_t z = z0 + dz;
                  if (z < 0 || z >= D) continue;
                  T wz = dz ? tz : T(1) - tz;
                  for (int dy = 0; dy < 2; ++dy) {
                    int64_t y = y0 + dy;
                    if (y < 0 || y >= D) continue;
                    T wy = dy ? ty : T(1) - ty;
                    for (int dx = 0; dx < 2; ++dx) {
                      int64_t x = x0 + dx;
                      if (x < 0 || x >= D) continue;
                      T wx = dx ? tx : T(1) - tx;
                      bp[(z * D + y) * D + x] += gval * wz * wy * wx;
                    }
                  }
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> rotate_volume(const Tensor<T>& vol, const RotationMatrix& R, Interp interp) {
  return rotate_volume(vol, std::vector<RotationMatrix>{R}, interp);
}

}  // namespace uvs
