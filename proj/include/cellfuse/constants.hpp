/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_CONSTANTS_HPP
#define CELLFUSE_CONSTANTS_HPP

namespace cellfuse {

inline constexpr double kFaraday = 96485.33212331001;  // C/mol
inline constexpr double kGasConstant = 8.31446261815324;  // J/(mol K)

/// Rated capacity used for C-rate conversions and SOH normalization.
inline constexpr double kNominalCapacityAh = 3.35;

inline constexpr double kSecondsPerHour = 3600.0;

}  // namespace cellfuse

#endif
