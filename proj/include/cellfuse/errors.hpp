/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_ERRORS_HPP
#define CELLFUSE_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cellfuse {

/// Bad configuration or out-of-domain argument. Maps to CLI exit code 2.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Runtime failure of a computation stage. Maps to CLI exit code 3.
class StageFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Particle surface stoichiometry left (0, 1): the cell was driven past an
/// electrode's lithiation limit (over-charge or over-discharge).
class SurfaceSaturation : public StageFailure {
public:
    SurfaceSaturation(const std::string& what, double time_s)
        : StageFailure(what), time_s(time_s) {}
    double time_s;
};

/// A state or output stopped being finite.
class NonFinite : public StageFailure {
public:
    using StageFailure::StageFailure;
};

/// A bracketed root solve found no sign change in the search interval.
class NoRoot : public StageFailure {
public:
    using StageFailure::StageFailure;
};

/// An iterative fit finished above its acceptance threshold.
class NonConvergence : public StageFailure {
public:
    NonConvergence(const std::string& what, double residual)
        : StageFailure(what), residual(residual) {}
    double residual;
};

/// The swarm objective returned a non-finite value.
class ObjectiveFailure : public StageFailure {
public:
    ObjectiveFailure(const std::string& what, std::size_t particle_index)
        : StageFailure(what), particle_index(particle_index) {}
    std::size_t particle_index;
};

}  // namespace cellfuse

#endif
