/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "cellfuse/dataset.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "cellfuse/errors.hpp"
#include "cellfuse/fnv1a.hpp"

namespace cellfuse {

namespace {

constexpr char kMagic[6] = {'C', 'B', 'S', 'E', 'G', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
public:
    Reader(const char* data, std::size_t size) : data_(data), size_(size) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    float f32() { return std::bit_cast<float>(u32()); }

private:
    unsigned char byte() { return static_cast<unsigned char>(data_[pos_++]); }
    void need(std::size_t n) {
        if (pos_ + n > size_) throw ValidationError("dataset: file truncated");
    }
    const char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

}  // namespace

SegmentTensor pack_segment(const Segment& seg, const SegmentNorm& norm) {
    SegmentTensor tensor;
    const double v_span = norm.v_hi - norm.v_lo;
    for (int i = 0; i < 25; ++i) {
        const double v = seg.voltage[static_cast<std::size_t>(i)];
        const double a = seg.current[static_cast<std::size_t>(i)];
        if (!std::isfinite(v) || !std::isfinite(a)) {
            throw ValidationError("pack_segment: non-finite sample");
        }
        tensor.values[static_cast<std::size_t>(i)] = (v - norm.v_lo) / v_span;
        tensor.values[static_cast<std::size_t>(25 + i)] = a / norm.i_scale;
    }
    return tensor;
}

std::array<std::array<double, 2>, 25> unpack_segment(const SegmentTensor& tensor,
                                                     const SegmentNorm& norm) {
    std::array<std::array<double, 2>, 25> out;
    const double v_span = norm.v_hi - norm.v_lo;
    for (std::size_t i = 0; i < 25; ++i) {
        out[i][0] = norm.v_lo + v_span * tensor.values[i];
        out[i][1] = norm.i_scale * tensor.values[25 + i];
    }
    return out;
}

void write_dataset(const SegmentDataset& dataset, const std::string& path) {
    std::string payload;
    payload.reserve(36 + dataset.segments.size() * 228);
    put_u64(payload, dataset.segments.size());
    put_u32(payload, dataset.version);
    put_f64(payload, dataset.norm.v_lo);
    put_f64(payload, dataset.norm.v_hi);
    put_f64(payload, dataset.norm.i_scale);
    for (const auto& s : dataset.segments) {
        put_u32(payload, s.cell_id);
        put_u32(payload, s.cycle);
        put_u32(payload, s.set_id);
        put_f64(payload, s.start_throughput_ah);
        put_f64(payload, s.label_capacity_ah);
        for (float v : s.voltage) put_f32(payload, v);
        for (float a : s.current) put_f32(payload, a);
    }
    const std::uint64_t digest = fnv1a64(payload.data(), payload.size());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("dataset: cannot write " + path);
    out.write(kMagic, sizeof kMagic);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    std::string tail;
    put_u64(tail, digest);
    out.write(tail.data(), static_cast<std::streamsize>(tail.size()));
    if (!out) throw StageFailure("dataset: write failed for " + path);
}

SegmentDataset read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("dataset: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof kMagic + 8 + 4 + 24 + 8) {
        throw ValidationError("dataset: file truncated");
    }
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw ValidationError("dataset: bad magic in " + path);
    }
    const std::size_t payload_size = bytes.size() - sizeof kMagic - 8;
    const char* payload = bytes.data() + sizeof kMagic;

    Reader tail(payload + payload_size, 8);
    const std::uint64_t stored = tail.u64();
    const std::uint64_t digest = fnv1a64(payload, payload_size);
    if (stored != digest) throw ValidationError("dataset: checksum mismatch in " + path);

    Reader r(payload, payload_size);
    SegmentDataset dataset;
    const std::uint64_t count = r.u64();
    dataset.version = r.u32();
    dataset.norm.v_lo = r.f64();
    dataset.norm.v_hi = r.f64();
    dataset.norm.i_scale = r.f64();
    if (payload_size != 36 + count * 228) {
        throw ValidationError("dataset: size does not match record count");
    }
    dataset.segments.resize(count);
    for (auto& s : dataset.segments) {
        s.cell_id = r.u32();
        s.cycle = r.u32();
        s.set_id = r.u32();
        s.start_throughput_ah = r.f64();
        s.label_capacity_ah = r.f64();
        for (auto& v : s.voltage) v = r.f32();
        for (auto& a : s.current) a = r.f32();
    }
    return dataset;
}

}  // namespace cellfuse
