#pragma once

// Row handling shared by the training loops.

#include <algorithm>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace verdict::detail {

// Rows sorted by content so training does not depend on input order.
inline std::vector<std::size_t> canonical_order(const Eigen::MatrixXd& x) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(x.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            const double va = x(static_cast<Eigen::Index>(a), c);
            const double vb = x(static_cast<Eigen::Index>(b), c);
            if (va != vb) return va < vb;
        }
        return false;
    });
    return idx;
}

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& x, const std::vector<std::size_t>& rows, std::size_t begin,
                            std::size_t end) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(end - begin), x.cols());
    for (std::size_t i = begin; i < end; ++i) out.row(static_cast<Eigen::Index>(i - begin)) = x.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

inline Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& x) {
    const Eigen::RowVectorXd mean = x.colwise().mean();
    Eigen::RowVectorXd sd = (x.rowwise() - mean).array().square().colwise().mean().sqrt().matrix();
    for (Eigen::Index c = 0; c < sd.size(); ++c)
        if (!(sd(c) > 1e-8)) sd(c) = 1.0;   // constant columns (noiseless b0 ratios) pass through centred
    return ((x.rowwise() - mean).array().rowwise() / sd.array()).matrix();
}


}  // namespace verdict::detail
