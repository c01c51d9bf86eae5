#pragma once

#include <cmath>

namespace avs {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    double n = norm();
    return {x / n, y / n, z / n};
  }
};

// Row-major 3x3.
struct Mat3 {
  double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return {}; }
  static Mat3 from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
    Mat3 r;
    r.m[0] = r0.x; r.m[1] = r0.y; r.m[2] = r0.z;
    r.m[3] = r1.x; r.m[4] = r1.y; r.m[5] = r1.z;
    r.m[6] = r2.x; r.m[7] = r2.y; r.m[8] = r2.z;
    return r;
  }

  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3 transpose() const {
    Mat3 r;
    r.m[0] = m[0]; r.m[1] = m[3]; r.m[2] = m[6];
    r.m[3] = m[1]; r.m[4] = m[4]; r.m[5] = m[7];
    r.m[6] = m[2]; r.m[7] = m[5]; r.m[8] = m[8];
    return r;
  }

  Vec3 row(int i) const { return {m[3 * i], m[3 * i + 1], m[3 * i + 2]}; }

  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }
};

struct Box3 {
  Vec3 lo, hi;

  Vec3 center() const { return {(lo.x + hi.x) * 0.5, (lo.y + hi.y) * 0.5, (lo.z + hi.z) * 0.5}; }
  Vec3 size() const { return hi - lo; }
  double diagonal() const { return (hi - lo).norm(); }
  bool degenerate() const { return hi.x <= lo.x || hi.y <= lo.y || hi.z <= lo.z; }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace avs
