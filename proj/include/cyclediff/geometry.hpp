#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "cyclediff/errors.hpp"

namespace cyclediff {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

// Pinhole camera. Pixel (u,v) has u rightward and v downward, pixel centers
// sit at integer coordinates, and the camera looks down +z.
struct Intrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;

    void validate() const;

    // fx = fy = size, principal point at the image center.
    static Intrinsics simple(int width, int height);
};

struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

struct Projected {
    double u = 0.0;
    double v = 0.0;
    double z = 0.0;
};

// Rigid transform taking source-camera coordinates to target-camera
// coordinates: p' = R * p + t.
struct Pose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static Pose identity() { return Pose{}; }
    static Pose translate(double tx, double ty, double tz);
    // R = Rz(az) * Ry(ay) * Rx(ax), angles in radians.
    static Pose rotate_xyz(double ax, double ay, double az);

    bool is_identity(double tol = 0.0) const;
    void validate(double tol = 1e-9) const;
};

Point3 unproject(double u, double v, double d, const Intrinsics& k);
Projected project(const Point3& p, const Intrinsics& k);

Point3 transform(const Pose& p, const Point3& x);
Pose pose_inverse(const Pose& p);
Pose pose_compose(const Pose& a, const Pose& b);

}  // namespace cyclediff
