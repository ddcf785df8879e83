/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_PROTOCOLS_HPP
#define CELLFUSE_PROTOCOLS_HPP

#include <cstddef>
#include <string>
#include <vector>

namespace cellfuse {

/// How a CC stage decides it is finished.
enum class StageEnd { SocReaches, VoltageReaches, TimeElapsed };

/// One constant-current stage. c_rate is signed and dimensionless (positive
/// charges); the ampere setpoint is c_rate times the rated capacity.
struct Stage {
    double c_rate;
    StageEnd end;
    double end_value;  // soc fraction, volts, or seconds
};

/// What finally terminates the program.
enum class Terminal { CvCutoff, VoltageFloor, TimeLimit };

/// Declarative charge/discharge program: ordered CC stages with a hybrid
/// CC/CV rule on top (see Controller) and a terminal condition.
struct Protocol {
    std::vector<Stage> stages;
    double v_max = 4.2;      // CV setpoint and upper trigger, V
    double i_cutoff = 0.16;  // CV termination current, A
    Terminal terminal = Terminal::CvCutoff;
    double terminal_value = 0.0;  // floor volts or limit seconds, per terminal
    double max_time_s = 14400.0;  // hard backstop, simulated seconds
    std::string name;

    void validate() const;
};

enum class ModeKind { CC, CV, Rest, Done };

/// Live setpoint: CC carries amperes, CV carries volts.
struct ControlMode {
    ModeKind kind = ModeKind::Rest;
    double value = 0.0;
};

/// What the controller sees after each simulation step.
struct Observation {
    double soc = 0.0;
    double voltage = 0.0;
    double current = 0.0;
    ModeKind mode = ModeKind::Rest;
    std::size_t stage_index = 0;
    double stage_elapsed_s = 0.0;  // time spent in the current stage
    double time_s = 0.0;
};

struct ControlDecision {
    ControlMode mode;
    std::size_t stage_index = 0;
};

/// Pure transition rule. Within a CC stage, reaching v_max switches to a CV
/// hold; the hold releases to the next (lower) CC rate when the stage's SOC
/// break is reached, or runs down to i_cutoff in the final stage. Done is
/// absorbing.
ControlDecision controller_next(const Protocol& protocol, const Observation& observed);

/// Thin stateful wrapper that tracks stage entry times and enforces the
/// max_time_s backstop on top of controller_next.
class Controller {
public:
    explicit Controller(const Protocol& protocol);
    ControlMode next(const Observation& observed);
    std::size_t stage_index() const { return stage_; }
    ModeKind mode() const { return mode_; }

private:
    const Protocol* protocol_;
    std::size_t stage_ = 0;
    ModeKind mode_ = ModeKind::Rest;
    double stage_entry_s_ = 0.0;
};

/// Single CC stage to v_max, then CV down to i_cutoff.
Protocol make_cccv(double c_rate, double v_max, double i_cutoff);

/// Multi-stage CC staircase. The first soc_breaks.size() stages end on their
/// SOC break; remaining stages end on v_max; the last one hands over to CV.
Protocol make_mscc(const std::vector<double>& stage_rates, const std::vector<double>& soc_breaks,
                   double v_max, double i_cutoff);

/// Single CC discharge stage (rate given positive) to a voltage floor.
Protocol make_discharge(double c_rate, double v_floor);

/// Piecewise-constant current replay: (signed c_rate, duration_s) pairs.
Protocol make_replay(const std::vector<std::pair<double, double>>& segments);

/// Named presets: cccv-1c, cccv-1.5c, cccv-2c, mscc-paper.
Protocol protocol_preset(const std::string& name);

/// Key-value text format with `stages`, `v_max`, `i_cutoff` fields.
Protocol load_protocol(const std::string& path);
void save_protocol(const Protocol& protocol, const std::string& path);

}  // namespace cellfuse

#endif
