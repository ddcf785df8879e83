/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "cellfuse/protocols.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "cellfuse/constants.hpp"
#include "cellfuse/errors.hpp"
#include "cellfuse/kvfile.hpp"

namespace cellfuse {

namespace {

double rate_to_amps(double c_rate) { return c_rate * kNominalCapacityAh; }

bool stage_is_charging(const Stage& s) { return s.c_rate > 0.0; }

/// True when the stage's declared end condition holds for this observation.
/// Voltage ends trigger in the direction the stage drives the voltage.
bool stage_end_reached(const Stage& s, const Observation& o) {
    switch (s.end) {
        case StageEnd::SocReaches:
            return stage_is_charging(s) ? o.soc >= s.end_value : o.soc <= s.end_value;
        case StageEnd::VoltageReaches:
            return stage_is_charging(s) ? o.voltage >= s.end_value : o.voltage <= s.end_value;
        case StageEnd::TimeElapsed:
            return o.stage_elapsed_s >= s.end_value;
    }
    return false;
}

/// Transition past the end of stage k: next CC stage, the final CV phase, or
/// Done, depending on the terminal rule. Skips stages whose SOC break is
/// already behind the observation.
ControlDecision advance_from(const Protocol& p, std::size_t k, const Observation& o) {
    std::size_t next = k + 1;
    while (next < p.stages.size() && p.stages[next].end == StageEnd::SocReaches &&
           stage_end_reached(p.stages[next], o)) {
        ++next;
    }
    if (next < p.stages.size()) {
        return {{ModeKind::CC, rate_to_amps(p.stages[next].c_rate)}, next};
    }
    std::size_t last = p.stages.size() - 1;
    if (p.terminal == Terminal::CvCutoff) {
        return {{ModeKind::CV, p.v_max}, last};
    }
    return {{ModeKind::Done, 0.0}, last};
}

}  // namespace

void Protocol::validate() const {
    if (stages.empty()) throw ValidationError("protocol: needs at least one stage");
    if (!(v_max > 3.0 && v_max <= 4.3)) {
        throw ValidationError("protocol: v_max must lie in (3.0, 4.3] V");
    }
    if (!(i_cutoff > 0.0)) throw ValidationError("protocol: i_cutoff must be positive");
    double prev_break = 0.0;
    bool seen_break = false;
    for (const Stage& s : stages) {
        if (s.c_rate == 0.0 || !std::isfinite(s.c_rate) || std::abs(s.c_rate) > 4.0) {
            throw ValidationError("protocol: stage c_rate must be nonzero and within the 4C guard");
        }
        switch (s.end) {
            case StageEnd::SocReaches:
                if (!(s.end_value > 0.0 && s.end_value < 1.0)) {
                    throw ValidationError("protocol: soc break must lie in (0, 1)");
                }
                if (s.c_rate > 0.0) {
                    if (seen_break && s.end_value <= prev_break) {
                        throw ValidationError(
                            "protocol: soc breaks must be strictly increasing across charging stages");
                    }
                    prev_break = s.end_value;
                    seen_break = true;
                }
                break;
            case StageEnd::VoltageReaches:
                if (!(s.end_value > 2.0 && s.end_value <= 4.3)) {
                    throw ValidationError("protocol: stage voltage end must lie in (2.0, 4.3] V");
                }
                break;
            case StageEnd::TimeElapsed:
                if (!(s.end_value > 0.0)) {
                    throw ValidationError("protocol: stage duration must be positive");
                }
                break;
        }
    }
    if (!(max_time_s > 0.0)) throw ValidationError("protocol: max_time_s must be positive");
}

ControlDecision controller_next(const Protocol& p, const Observation& o) {
    if (o.mode == ModeKind::Done) return {{ModeKind::Done, 0.0}, o.stage_index};
    if (o.time_s >= p.max_time_s ||
        (p.terminal == Terminal::TimeLimit && o.time_s >= p.terminal_value)) {
        return {{ModeKind::Done, 0.0}, o.stage_index};
    }

    std::size_t k = o.stage_index < p.stages.size() ? o.stage_index : p.stages.size() - 1;
    const Stage& stage = p.stages[k];
    bool final_stage = k + 1 == p.stages.size();

    if (o.mode == ModeKind::Rest) {
        // Program start; skip stages whose SOC break is already satisfied.
        Observation start = o;
        start.stage_index = 0;
        if (p.stages[0].end == StageEnd::SocReaches && stage_end_reached(p.stages[0], start)) {
            return advance_from(p, 0, o);
        }
        return {{ModeKind::CC, rate_to_amps(p.stages[0].c_rate)}, 0};
    }

    if (o.mode == ModeKind::CV) {
        if (final_stage) {
            if (std::abs(o.current) <= p.i_cutoff) return {{ModeKind::Done, 0.0}, k};
            return {{ModeKind::CV, p.v_max}, k};
        }
        // Intra-stage hold: release at this stage's SOC break.
        if (stage.end == StageEnd::SocReaches && stage_end_reached(stage, o)) {
            return advance_from(p, k, o);
        }
        return {{ModeKind::CV, p.v_max}, k};
    }

    // CC mode.
    if (stage_end_reached(stage, o)) {
        if (final_stage && p.terminal == Terminal::VoltageFloor) {
            return {{ModeKind::Done, 0.0}, k};
        }
        return advance_from(p, k, o);
    }
    if (stage_is_charging(stage) && o.voltage >= p.v_max) {
        // Early voltage trigger inside a CC stage becomes a CV hold; for a
        // voltage-ended stage this coincides with its end handled above.
        return {{ModeKind::CV, p.v_max}, k};
    }
    return {{ModeKind::CC, rate_to_amps(stage.c_rate)}, k};
}

Controller::Controller(const Protocol& protocol) : protocol_(&protocol) {
    protocol.validate();
}

ControlMode Controller::next(const Observation& observed) {
    Observation o = observed;
    o.mode = mode_;
    o.stage_index = stage_;
    o.stage_elapsed_s = observed.time_s - stage_entry_s_;
    ControlDecision d = controller_next(*protocol_, o);
    if (d.stage_index != stage_) stage_entry_s_ = observed.time_s;
    stage_ = d.stage_index;
    mode_ = d.mode.kind;
    return d.mode;
}

Protocol make_cccv(double c_rate, double v_max, double i_cutoff) {
    if (!(c_rate > 0.0)) throw ValidationError("make_cccv: c_rate must be positive");
    if (i_cutoff >= rate_to_amps(c_rate)) {
        throw ValidationError("make_cccv: i_cutoff must be below the CC current");
    }
    Protocol p;
    p.stages = {{c_rate, StageEnd::VoltageReaches, v_max}};
    p.v_max = v_max;
    p.i_cutoff = i_cutoff;
    p.terminal = Terminal::CvCutoff;
    {
        char buf[32];
        std::snprintf(buf, sizeof buf, "cccv-%gc", c_rate);
        p.name = buf;
    }
    p.validate();
    return p;
}

Protocol make_mscc(const std::vector<double>& stage_rates, const std::vector<double>& soc_breaks,
                   double v_max, double i_cutoff) {
    if (stage_rates.empty()) throw ValidationError("make_mscc: needs at least one rate");
    if (soc_breaks.size() >= stage_rates.size()) {
        throw ValidationError("make_mscc: need at least one voltage-ended stage after the breaks");
    }
    for (std::size_t i = 0; i < stage_rates.size(); ++i) {
        if (!(stage_rates[i] > 0.0)) throw ValidationError("make_mscc: rates must be positive");
        if (i > 0 && stage_rates[i] >= stage_rates[i - 1]) {
            throw ValidationError("make_mscc: rates must be strictly decreasing");
        }
    }
    for (std::size_t i = 0; i < soc_breaks.size(); ++i) {
        if (!(soc_breaks[i] > 0.0 && soc_breaks[i] < 1.0)) {
            throw ValidationError("make_mscc: soc breaks must lie in (0, 1)");
        }
        if (i > 0 && soc_breaks[i] <= soc_breaks[i - 1]) {
            throw ValidationError("make_mscc: soc breaks must be strictly increasing");
        }
    }
    if (i_cutoff >= rate_to_amps(stage_rates.back())) {
        throw ValidationError("make_mscc: i_cutoff must be below the final CC current");
    }
    Protocol p;
    for (std::size_t i = 0; i < stage_rates.size(); ++i) {
        if (i < soc_breaks.size()) {
            p.stages.push_back({stage_rates[i], StageEnd::SocReaches, soc_breaks[i]});
        } else {
            p.stages.push_back({stage_rates[i], StageEnd::VoltageReaches, v_max});
        }
    }
    p.v_max = v_max;
    p.i_cutoff = i_cutoff;
    p.terminal = Terminal::CvCutoff;
    p.name = "mscc";
    p.validate();
    return p;
}

Protocol make_discharge(double c_rate, double v_floor) {
    if (!(c_rate > 0.0)) throw ValidationError("make_discharge: c_rate must be positive");
    if (!(v_floor >= 2.0 && v_floor < 4.0)) {
        throw ValidationError("make_discharge: v_floor must lie in [2.0, 4.0) V");
    }
    Protocol p;
    p.stages = {{-c_rate, StageEnd::VoltageReaches, v_floor}};
    p.v_max = 4.25;  // unused upper trigger, kept in the valid band
    p.i_cutoff = 0.16;
    p.terminal = Terminal::VoltageFloor;
    p.terminal_value = v_floor;
    {
        char buf[40];
        std::snprintf(buf, sizeof buf, "discharge-%gc", c_rate);
        p.name = buf;
    }
    p.validate();
    return p;
}

Protocol make_replay(const std::vector<std::pair<double, double>>& segments) {
    if (segments.empty()) throw ValidationError("make_replay: empty program");
    Protocol p;
    double total = 0.0;
    for (auto [rate, dur] : segments) {
        p.stages.push_back({rate, StageEnd::TimeElapsed, dur});
        total += dur;
    }
    p.v_max = 4.3;
    p.i_cutoff = 0.01;
    p.terminal = Terminal::TimeLimit;
    p.terminal_value = total;
    p.max_time_s = total + 60.0;
    p.name = "replay";
    p.validate();
    return p;
}

Protocol protocol_preset(const std::string& name) {
    if (name == "cccv-1c") return make_cccv(1.0, 4.2, 0.16);
    if (name == "cccv-1.5c") return make_cccv(1.5, 4.2, 0.16);
    if (name == "cccv-2c") return make_cccv(2.0, 4.2, 0.16);
    if (name == "mscc-paper") {
        Protocol p = make_mscc({2.0, 1.5, 1.0, 0.5}, {0.60, 0.80}, 4.2, 0.16);
        p.name = "mscc-paper";
        return p;
    }
    throw ValidationError("unknown protocol preset: " + name +
                          " (known: cccv-1c, cccv-1.5c, cccv-2c, mscc-paper)");
}

namespace {

const char* terminal_name(Terminal t) {
    switch (t) {
        case Terminal::CvCutoff: return "cv_cutoff";
        case Terminal::VoltageFloor: return "voltage_floor";
        case Terminal::TimeLimit: return "time_limit";
    }
    return "cv_cutoff";
}

}  // namespace

Protocol load_protocol(const std::string& path) {
    KvFile kv = KvFile::load(path);
    Protocol p;
    p.name = kv.get_string("name", "custom");
    p.v_max = kv.get_double("v_max");
    p.i_cutoff = kv.get_double("i_cutoff");
    std::string term = kv.get_string("terminal", "cv_cutoff");
    if (term == "cv_cutoff") {
        p.terminal = Terminal::CvCutoff;
    } else if (term == "voltage_floor") {
        p.terminal = Terminal::VoltageFloor;
    } else if (term == "time_limit") {
        p.terminal = Terminal::TimeLimit;
    } else {
        throw ValidationError(path + ": unknown terminal: " + term);
    }
    p.terminal_value = kv.get_double("terminal_value", 0.0);
    p.max_time_s = kv.get_double("max_time_s", 14400.0);

    // Stage list syntax: "<c_rate>@soc:<frac>" | "<c_rate>@v:<volts>" |
    // "<c_rate>@t:<seconds>", comma separated.
    std::istringstream stages(kv.get_string("stages"));
    std::string item;
    while (std::getline(stages, item, ',')) {
        double rate = 0.0;
        double value = 0.0;
        char kind[4] = {0};
        if (std::sscanf(item.c_str(), " %lf @ %3[a-z] : %lf", &rate, kind, &value) != 3) {
            throw ValidationError(path + ": bad stage syntax: " + item);
        }
        std::string k(kind);
        StageEnd end;
        if (k == "soc") {
            end = StageEnd::SocReaches;
        } else if (k == "v") {
            end = StageEnd::VoltageReaches;
        } else if (k == "t") {
            end = StageEnd::TimeElapsed;
        } else {
            throw ValidationError(path + ": unknown stage end kind: " + k);
        }
        p.stages.push_back({rate, end, value});
    }
    p.validate();
    return p;
}

void save_protocol(const Protocol& p, const std::string& path) {
    KvFile kv;
    kv.set("name", p.name);
    kv.set_double("v_max", p.v_max);
    kv.set_double("i_cutoff", p.i_cutoff);
    kv.set("terminal", terminal_name(p.terminal));
    kv.set_double("terminal_value", p.terminal_value);
    kv.set_double("max_time_s", p.max_time_s);
    std::ostringstream stages;
    for (std::size_t i = 0; i < p.stages.size(); ++i) {
        if (i) stages << ", ";
        const Stage& s = p.stages[i];
        char buf[64];
        const char* kind = s.end == StageEnd::SocReaches  ? "soc"
                           : s.end == StageEnd::VoltageReaches ? "v"
                                                               : "t";
        std::snprintf(buf, sizeof buf, "%g@%s:%g", s.c_rate, kind, s.end_value);
        stages << buf;
    }
    kv.set("stages", stages.str());
    kv.save(path);
}

}  // namespace cellfuse
