#pragma once

#include <Eigen/Dense>

namespace groundcap {

/// H x W x 3 image as three planes, values in [0,1], row 0 = top of image.
struct Image {
    Eigen::MatrixXd r, g, b;

    Eigen::Index height() const { return r.rows(); }
    Eigen::Index width() const { return r.cols(); }

    static Image white(Eigen::Index h, Eigen::Index w) {
        return {Eigen::MatrixXd::Ones(h, w), Eigen::MatrixXd::Ones(h, w),
                Eigen::MatrixXd::Ones(h, w)};
    }
};

}  // namespace groundcap
