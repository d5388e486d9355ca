#include "cyclediff/geometry.hpp"

#include <cmath>

namespace cyclediff {

void Intrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy))
        throw ConfigError("intrinsics: focal lengths must be positive and finite");
    if (!std::isfinite(cx) || !std::isfinite(cy))
        throw ConfigError("intrinsics: principal point must be finite");
    if (width < 1 || height < 1)
        throw ConfigError("intrinsics: image size must be at least 1x1");
}

Intrinsics Intrinsics::simple(int width, int height) {
    Intrinsics k;
    k.fx = static_cast<double>(width);
    k.fy = static_cast<double>(width);
    k.cx = (width - 1) * 0.5;
    k.cy = (height - 1) * 0.5;
    k.width = width;
    k.height = height;
    return k;
}

Pose Pose::translate(double tx, double ty, double tz) {
    Pose p;
    p.translation = Vec3(tx, ty, tz);
    return p;
}

Pose Pose::rotate_xyz(double ax, double ay, double az) {
    Pose p;
    p.rotation = (Eigen::AngleAxisd(az, Vec3::UnitZ()) *
                  Eigen::AngleAxisd(ay, Vec3::UnitY()) *
                  Eigen::AngleAxisd(ax, Vec3::UnitX()))
                     .toRotationMatrix();
    return p;
}

bool Pose::is_identity(double tol) const {
    return (rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           translation.cwiseAbs().maxCoeff() <= tol;
}

void Pose::validate(double tol) const {
    const Mat3 gram = rotation.transpose() * rotation;
    if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol)
        throw ConfigError("pose: rotation is not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > tol)
        throw ConfigError("pose: rotation determinant is not +1");
    if (!translation.allFinite()) throw ConfigError("pose: translation must be finite");
}

Point3 unproject(double u, double v, double d, const Intrinsics& k) {
    if (!std::isfinite(d) || d <= 0.0)
        throw InvalidDepthError("unproject: depth must be finite and positive");
    return Point3{(u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d};
}

Projected project(const Point3& p, const Intrinsics& k) {
    if (!(p.z > 0.0))
        throw BehindCameraError("project: point is behind the camera");
    return Projected{k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z};
}

Point3 transform(const Pose& p, const Point3& x) {
    const Vec3 r = p.rotation * Vec3(x.x, x.y, x.z) + p.translation;
    return Point3{r.x(), r.y(), r.z()};
}

Pose pose_inverse(const Pose& p) {
    Pose inv;
    inv.rotation = p.rotation.transpose();
    inv.translation = -(inv.rotation * p.translation);
    return inv;
}

Pose pose_compose(const Pose& a, const Pose& b) {
    Pose out;
    out.rotation = a.rotation * b.rotation;
    out.translation = a.rotation * b.translation + a.translation;
    return out;
}

}  // namespace cyclediff
