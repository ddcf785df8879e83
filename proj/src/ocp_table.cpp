/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "cellfuse/ocp_table.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cellfuse/errors.hpp"

namespace cellfuse {

OcpTable::OcpTable(std::vector<double> theta, std::vector<double> potential)
    : theta_(std::move(theta)), potential_(std::move(potential)) {
    if (theta_.size() != potential_.size()) {
        throw ValidationError("ocp table: column length mismatch");
    }
    if (theta_.size() < 20) {
        throw ValidationError("ocp table: need at least 20 samples, got " +
                              std::to_string(theta_.size()));
    }
    for (std::size_t i = 0; i < theta_.size(); ++i) {
        if (!std::isfinite(theta_[i]) || theta_[i] < 0.0 || theta_[i] > 1.0) {
            throw ValidationError("ocp table: stoichiometry outside [0, 1] at row " +
                                  std::to_string(i));
        }
        if (i > 0 && theta_[i] <= theta_[i - 1]) {
            throw ValidationError("ocp table: stoichiometry not strictly increasing at row " +
                                  std::to_string(i));
        }
        if (!std::isfinite(potential_[i]) || potential_[i] <= 0.0) {
            throw ValidationError("ocp table: potential must be finite and positive at row " +
                                  std::to_string(i));
        }
    }
}

OcpTable OcpTable::load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open ocp table: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("empty ocp table: " + path);
    // Header row is required; tolerate trailing \r from CRLF files.
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "theta,potential_V") {
        throw ValidationError(path + ": expected header 'theta,potential_V', got: " + line);
    }
    std::vector<double> theta;
    std::vector<double> pot;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        double x = 0.0;
        double y = 0.0;
        if (std::sscanf(line.c_str(), "%lf,%lf", &x, &y) != 2) {
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": expected 'theta,potential', got: " + line);
        }
        theta.push_back(x);
        pot.push_back(y);
    }
    return OcpTable(std::move(theta), std::move(pot));
}

void OcpTable::save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw StageFailure("cannot write ocp table: " + path);
    out << "theta,potential_V\n";
    char buf[64];
    for (std::size_t i = 0; i < theta_.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.12g,%.12g\n", theta_[i], potential_[i]);
        out << buf;
    }
}

double OcpTable::operator()(double theta) const {
    if (theta <= theta_.front()) return potential_.front();
    if (theta >= theta_.back()) return potential_.back();
    auto it = std::upper_bound(theta_.begin(), theta_.end(), theta);
    std::size_t i = static_cast<std::size_t>(it - theta_.begin());
    double t = (theta - theta_[i - 1]) / (theta_[i] - theta_[i - 1]);
    return potential_[i - 1] + t * (potential_[i] - potential_[i - 1]);
}

}  // namespace cellfuse
