#pragma once

#include <array>

#include "mvstta/autodiff.hpp"
#include "mvstta/tensor.hpp"

namespace mvstta::geo {

struct Vec3 {
    double x = 0, y = 0, z = 0;
    double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline Vec3 normalized(Vec3 a) { return (1.0 / a.norm()) * a; }

struct Mat3 {
    std::array<double, 9> m{};  // row major
    static Mat3 identity();
    double det() const;
    Mat3 transposed() const;
    Mat3 inverse() const;  // throws on singular
    double operator()(int r, int c) const { return m[static_cast<size_t>(r * 3 + c)]; }
    double& operator()(int r, int c) { return m[static_cast<size_t>(r * 3 + c)]; }
};

Mat3 operator*(const Mat3& a, const Mat3& b);
Vec3 operator*(const Mat3& a, Vec3 v);
Mat3 operator-(const Mat3& a, const Mat3& b);

// outer product a * b^T
Mat3 outer(Vec3 a, Vec3 b);

struct Intrinsics {
    Mat3 K;
    void validate() const;  // upper triangular, positive focals, K(2,2)==1
};

// World-to-camera: x_cam = R * x_world + t.
struct Pose {
    Mat3 R;
    Vec3 t;
    void validate() const;  // orthonormal, det +1
    Vec3 center() const;    // camera center in world coordinates, -R^T t
};

struct Camera {
    Intrinsics intr;
    Pose pose;
};

struct PosedImage {
    Tensor image;  // H x W x 3, entries in [0,1]
    Intrinsics intrinsics;
    Pose pose;
    int height() const { return image.shape[0]; }
    int width() const { return image.shape[1]; }
    void validate() const;
};

struct DepthHypotheses {
    double d_min = 0;
    double d_max = 0;
    int count = 0;
    void validate() const;
    double interval() const { return count > 1 ? (d_max - d_min) / (count - 1) : 0.0; }
    std::vector<double> values() const;
};

// Camera viewing direction in world coordinates (paper's n1): R^T e3.
Vec3 principal_axis(const Pose& pose);

// Plane-induced homography between the reference and a source view at
// hypothesis depth d, mapping reference pixels to source pixels.
Mat3 homography(const Camera& ref, const Camera& src, double d);

// H(d) = A - B / d; precomputed parts for differentiable per-pixel depths.
struct HomographyParts {
    Mat3 A;
    Mat3 B;
};
HomographyParts homography_parts(const Camera& ref, const Camera& src);

struct PixelResult {
    double x = 0, y = 0;
    bool valid = false;  // homogeneous component not near zero
};
PixelResult apply_homography(const Mat3& h, double ux, double uy);

// Differentiable pixel coordinates of every reference pixel mapped into the
// source view under a per-pixel depth map. Returns flattened row-major
// coordinate Vars of length H*W and a validity tensor.
struct WarpCoords {
    ad::Var xs;
    ad::Var ys;
    Tensor valid;  // H*W
};
WarpCoords warp_coords(ad::Tape& tape, const Camera& ref, const Camera& src, ad::Var depth,
                       int h, int w);

struct WarpResult {
    ad::Var image;  // H x W x 3
    Tensor mask;    // H x W visibility: in-bounds and valid homogeneous part
};
WarpResult inverse_warp(ad::Tape& tape, const PosedImage& src, const Camera& ref_cam,
                        ad::Var depth);

}  // namespace mvstta::geo
