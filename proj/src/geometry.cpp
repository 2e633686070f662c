#include "mvstta/geometry.hpp"

#include <cmath>

namespace mvstta::geo {

Mat3 Mat3::identity() {
    Mat3 r;
    r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    return r;
}

double Mat3::det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Mat3 Mat3::transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
}

Mat3 Mat3::inverse() const {
    double d = det();
    if (std::abs(d) < 1e-14) throw std::invalid_argument("Mat3::inverse: singular matrix");
    Mat3 r;
    r.m = {m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8], m[1] * m[5] - m[2] * m[4],
           m[5] * m[6] - m[3] * m[8], m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
           m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7], m[0] * m[4] - m[1] * m[3]};
    for (double& v : r.m) v /= d;
    return r;
}

Mat3 operator*(const Mat3& a, const Mat3& b) {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (int k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
            r(i, j) = s;
        }
    return r;
}

Vec3 operator*(const Mat3& a, Vec3 v) {
    return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
            a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
            a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
}

Mat3 operator-(const Mat3& a, const Mat3& b) {
    Mat3 r;
    for (int i = 0; i < 9; ++i) r.m[static_cast<size_t>(i)] = a.m[static_cast<size_t>(i)] - b.m[static_cast<size_t>(i)];
    return r;
}

Mat3 outer(Vec3 a, Vec3 b) {
    Mat3 r;
    r.m = {a.x * b.x, a.x * b.y, a.x * b.z, a.y * b.x, a.y * b.y,
           a.y * b.z, a.z * b.x, a.z * b.y, a.z * b.z};
    return r;
}

void Intrinsics::validate() const {
    if (K(1, 0) != 0 || K(2, 0) != 0 || K(2, 1) != 0)
        throw std::invalid_argument("Intrinsics: K not upper triangular");
    if (K(0, 0) <= 0 || K(1, 1) <= 0)
        throw std::invalid_argument("Intrinsics: nonpositive focal length");
    if (K(2, 2) != 1.0) throw std::invalid_argument("Intrinsics: K(2,2) must be 1");
}

void Pose::validate() const {
    Mat3 rtr = R.transposed() * R;
    Mat3 eye = Mat3::identity();
    for (int i = 0; i < 9; ++i)
        if (std::abs(rtr.m[static_cast<size_t>(i)] - eye.m[static_cast<size_t>(i)]) > 1e-9)
            throw std::invalid_argument("Pose: R not orthonormal");
    if (std::abs(R.det() - 1.0) > 1e-9) throw std::invalid_argument("Pose: det(R) != 1");
}

Vec3 Pose::center() const { return -1.0 * (R.transposed() * t); }

void PosedImage::validate() const {
    if (image.shape.size() != 3 || image.shape[2] != 3)
        throw std::invalid_argument("PosedImage: image must be HxWx3, got " + image.shape_str());
    if (image.shape[0] < 8 || image.shape[1] < 8)
        throw std::invalid_argument("PosedImage: image smaller than 8x8");
    for (double v : image.data)
        if (v < 0.0 || v > 1.0) throw std::invalid_argument("PosedImage: intensity outside [0,1]");
    intrinsics.validate();
    pose.validate();
}

void DepthHypotheses::validate() const {
    if (!(d_min > 0 && d_min < d_max)) throw std::invalid_argument("DepthHypotheses: need 0 < d_min < d_max");
    if (count <= 0) throw std::invalid_argument("DepthHypotheses: count must be positive");
}

std::vector<double> DepthHypotheses::values() const {
    validate();
    std::vector<double> v(static_cast<size_t>(count));
    if (count == 1) {
        v[0] = d_min;
        return v;
    }
    double step = (d_max - d_min) / (count - 1);
    for (int i = 0; i < count; ++i) v[static_cast<size_t>(i)] = d_min + step * i;
    return v;
}

Vec3 principal_axis(const Pose& pose) { return pose.R.transposed() * Vec3{0, 0, 1}; }

// Eq. 1 structure with the translation term taken in the camera-center form
// R^T t; verified against the back-project/re-project oracle for rotated rigs.
HomographyParts homography_parts(const Camera& ref, const Camera& src) {
    const Mat3 k1inv = ref.intr.K.inverse();
    const Mat3 front = src.intr.K * src.pose.R;
    const Mat3 back = ref.pose.R.transposed() * k1inv;
    const Vec3 n1 = principal_axis(ref.pose);
    const Vec3 b1 = ref.pose.R.transposed() * ref.pose.t;
    const Vec3 bi = src.pose.R.transposed() * src.pose.t;
    HomographyParts p;
    p.A = front * back;
    p.B = front * (outer(b1 - bi, n1) * back);
    return p;
}

Mat3 homography(const Camera& ref, const Camera& src, double d) {
    if (d <= 0) throw std::invalid_argument("homography: depth must be positive");
    HomographyParts p = homography_parts(ref, src);
    Mat3 h;
    for (int i = 0; i < 9; ++i)
        h.m[static_cast<size_t>(i)] = p.A.m[static_cast<size_t>(i)] - p.B.m[static_cast<size_t>(i)] / d;
    return h;
}

PixelResult apply_homography(const Mat3& h, double ux, double uy) {
    Vec3 p = h * Vec3{ux, uy, 1.0};
    if (std::abs(p.z) < 1e-12) return {0, 0, false};
    return {p.x / p.z, p.y / p.z, true};
}

WarpCoords warp_coords(ad::Tape& tape, const Camera& ref, const Camera& src, ad::Var depth,
                       int h, int w) {
    const HomographyParts parts = homography_parts(ref, src);
    const int np = h * w;
    if (depth.value().numel() != np)
        throw std::invalid_argument("warp_coords: depth size mismatch " + depth.value().shape_str());

    // per-pixel constants a_j(u) = row_j(A) . (x,y,1), b_j likewise
    Tensor a0({np}), a1({np}), a2({np}), b0({np}), b1({np}), b2({np});
    int q = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x, ++q) {
            Vec3 u{static_cast<double>(x), static_cast<double>(y), 1.0};
            Vec3 pa = parts.A * u;
            Vec3 pb = parts.B * u;
            a0[q] = pa.x;
            a1[q] = pa.y;
            a2[q] = pa.z;
            b0[q] = pb.x;
            b1[q] = pb.y;
            b2[q] = pb.z;
        }

    ad::Var d = tape.reshape(depth, {np});
    auto comp = [&](const Tensor& a, const Tensor& b) {
        return tape.sub(tape.constant(a), tape.div(tape.constant(b), d));
    };
    ad::Var p0 = comp(a0, b0);
    ad::Var p1 = comp(a1, b1);
    ad::Var p2 = comp(a2, b2);

    Tensor valid({np}), fill({np});
    for (int i = 0; i < np; ++i) {
        valid[i] = std::abs(p2.value()[i]) >= 1e-12 ? 1.0 : 0.0;
        fill[i] = 1.0 - valid[i];
    }
    // invalid pixels get denominator 1 so values stay finite; mask kills them
    ad::Var p2safe = tape.add(ad::mul_const(p2, valid), tape.constant(fill));
    return {tape.div(p0, p2safe), tape.div(p1, p2safe), std::move(valid)};
}

WarpResult inverse_warp(ad::Tape& tape, const PosedImage& src, const Camera& ref_cam,
                        ad::Var depth) {
    const int h = src.height(), w = src.width();
    for (double v : depth.value().data)
        if (v <= 0) throw std::invalid_argument("inverse_warp: nonpositive depth entry");
    WarpCoords wc = warp_coords(tape, ref_cam, {src.intrinsics, src.pose}, depth, h, w);
    ad::Var grid = tape.constant(src.image);
    ad::SampleResult s = ad::bilinear_sample(grid, wc.xs, wc.ys, h, w, 3);

    const int np = h * w;
    Tensor mask({h, w});
    Tensor maskc({np, 3});
    for (int i = 0; i < np; ++i) {
        double m = wc.valid[i] * s.mask[i];
        mask.data[static_cast<size_t>(i)] = m;
        for (int c = 0; c < 3; ++c) maskc[i * 3 + c] = m;
    }
    ad::Var img = tape.reshape(ad::mul_const(s.values, maskc), {h, w, 3});
    return {img, std::move(mask)};
}

}  // namespace mvstta::geo
