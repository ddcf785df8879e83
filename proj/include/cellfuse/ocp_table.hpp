/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_OCP_TABLE_HPP
#define CELLFUSE_OCP_TABLE_HPP

#include <string>
#include <vector>

namespace cellfuse {

/// Open-circuit potential of one electrode vs Li/Li+ as a function of
/// stoichiometry, stored as a sampled curve with linear interpolation.
///
/// Invariants enforced on construction: at least 20 samples, strictly
/// increasing stoichiometry within [0, 1], finite positive potentials.
class OcpTable {
public:
    OcpTable() = default;
    OcpTable(std::vector<double> theta, std::vector<double> potential);

    /// CSV with header "theta,potential_V".
    static OcpTable load_csv(const std::string& path);
    void save_csv(const std::string& path) const;

    /// Potential at stoichiometry x, clamped to the sampled range.
    double operator()(double theta) const;

    std::size_t size() const { return theta_.size(); }
    const std::vector<double>& theta() const { return theta_; }
    const std::vector<double>& potential() const { return potential_; }

private:
    std::vector<double> theta_;
    std::vector<double> potential_;
};

}  // namespace cellfuse

#endif
