/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "cellfuse/kvfile.hpp"

#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cellfuse/errors.hpp"

namespace cellfuse {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0;
    std::size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

}  // namespace

KvFile KvFile::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path);
}

KvFile KvFile::parse(const std::string& text, const std::string& origin) {
    KvFile kv;
    kv.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(origin + ":" + std::to_string(lineno) +
                                  ": expected 'key = value', got: " + t);
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw ValidationError(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        if (kv.values_.count(key)) {
            throw ValidationError(origin + ":" + std::to_string(lineno) +
                                  ": duplicate key: " + key);
        }
        kv.values_[key] = value;
    }
    return kv;
}

const std::string& KvFile::get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        throw ValidationError(origin_ + ": missing required key: " + key);
    }
    read_[key] = true;
    return it->second;
}

std::string KvFile::get_string(const std::string& key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    return get_string(key);
}

double KvFile::get_double(const std::string& key) const {
    const std::string& raw = get_string(key);
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(raw.c_str(), &end);
    if (end == raw.c_str() || *end != '\0' || errno == ERANGE) {
        throw ValidationError(origin_ + ": key '" + key + "': not a number: " + raw);
    }
    return v;
}

double KvFile::get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return get_double(key);
}

std::int64_t KvFile::get_int(const std::string& key) const {
    const std::string& raw = get_string(key);
    errno = 0;
    char* end = nullptr;
    long long v = std::strtoll(raw.c_str(), &end, 10);
    if (end == raw.c_str() || *end != '\0' || errno == ERANGE) {
        throw ValidationError(origin_ + ": key '" + key + "': not an integer: " + raw);
    }
    return v;
}

std::int64_t KvFile::get_int(const std::string& key, std::int64_t fallback) const {
    if (!has(key)) return fallback;
    return get_int(key);
}

bool KvFile::get_bool(const std::string& key) const {
    const std::string& raw = get_string(key);
    if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
    if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
    throw ValidationError(origin_ + ": key '" + key + "': not a boolean: " + raw);
}

bool KvFile::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    return get_bool(key);
}

std::vector<double> KvFile::get_doubles(const std::string& key) const {
    const std::string& raw = get_string(key);
    std::vector<double> out;
    std::istringstream in(raw);
    std::string item;
    while (std::getline(in, item, ',')) {
        std::string t = trim(item);
        if (t.empty()) {
            throw ValidationError(origin_ + ": key '" + key + "': empty list item");
        }
        errno = 0;
        char* end = nullptr;
        double v = std::strtod(t.c_str(), &end);
        if (end == t.c_str() || *end != '\0' || errno == ERANGE) {
            throw ValidationError(origin_ + ": key '" + key + "': not a number: " + t);
        }
        out.push_back(v);
    }
    if (out.empty()) {
        throw ValidationError(origin_ + ": key '" + key + "': empty list");
    }
    return out;
}

std::vector<double> KvFile::get_doubles(const std::string& key,
                                        const std::vector<double>& fallback) const {
    if (!has(key)) return fallback;
    return get_doubles(key);
}

void KvFile::set_double(const std::string& key, double value) {
    std::ostringstream s;
    s.precision(17);
    s << value;
    values_[key] = s.str();
}

void KvFile::set_int(const std::string& key, std::int64_t value) {
    values_[key] = std::to_string(value);
}

std::string KvFile::serialize() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) {
        out << k << " = " << v << "\n";
    }
    return out.str();
}

void KvFile::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw StageFailure("cannot write config file: " + path);
    out << serialize();
}

std::vector<std::string> KvFile::unread_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
        (void)v;
        if (!read_.count(k)) out.push_back(k);
    }
    return out;
}

}  // namespace cellfuse
