#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "photostat/errors.hpp"

namespace photostat {

/// One detector pixel firing. Coordinates are 0-based pixel indices,
/// time of arrival is in monotonic clock ticks and time over threshold
/// in the same tick unit.
struct RawHit {
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::uint16_t tot = 0;
    std::uint64_t toa_ticks = 0;

    friend bool operator==(const RawHit&, const RawHit&) = default;
};

/// Canonical ordering: time first, then (y, x, tot) so that sorting a
/// permuted hit list always reproduces the same sequence.
inline bool hit_time_order(const RawHit& a, const RawHit& b) {
    return std::tie(a.toa_ticks, a.y, a.x, a.tot) <
           std::tie(b.toa_ticks, b.y, b.x, b.tot);
}

// ---------------------------------------------------------------------------
// .phst time-tag stream format
//
// All multi-byte integers little-endian. Layout (23-byte header):
//   offset 0   4  magic "PHST"
//   offset 4   1  version (currently 1)
//   offset 5   2  reserved, written as 0
//   offset 7   4  tick_picoseconds (u32)
//   offset 11  2  sensor_width    (u16)
//   offset 13  2  sensor_height   (u16)
//   offset 15  8  record_count    (u64)
// followed by record_count records of 14 bytes each:
//   x (u16), y (u16), toa_ticks (u64), tot (u16)
// ---------------------------------------------------------------------------

struct StreamHeader {
    std::uint8_t version = 1;
    std::uint32_t tick_picoseconds = 1562;
    std::uint16_t sensor_width = 256;
    std::uint16_t sensor_height = 256;
    std::uint64_t record_count = 0;

    friend bool operator==(const StreamHeader&, const StreamHeader&) = default;
};

inline constexpr std::array<std::uint8_t, 4> kStreamMagic = {'P', 'H', 'S', 'T'};
inline constexpr std::array<std::uint8_t, 4> kFrameMagic = {'P', 'H', 'F', 'R'};
inline constexpr std::uint8_t kStreamVersion = 1;
inline constexpr std::size_t kStreamHeaderSize = 23;
inline constexpr std::size_t kStreamRecordSize = 14;
inline constexpr std::size_t kFrameHeaderSize = 27;

/// Ceiling of the photon-number-resolving camera; per-pixel counts above
/// this are rejected on read and write.
inline constexpr std::uint16_t kPnrCountCeiling = 200;

namespace detail {

inline std::uint16_t get_u16le(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t get_u32le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint64_t get_u64le(const std::uint8_t* p) {
    return static_cast<std::uint64_t>(get_u32le(p)) |
           (static_cast<std::uint64_t>(get_u32le(p + 4)) << 32);
}

inline void put_u16le(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64le(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u64le(out, bits);
}

inline double get_f64le(const std::uint8_t* p) {
    std::uint64_t bits = get_u64le(p);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

} // namespace detail

/// Result of parsing a stream; `trailing_bytes` counts bytes after the last
/// declared record which were left unconsumed.
struct StreamData {
    StreamHeader header;
    std::vector<RawHit> hits;
    std::size_t trailing_bytes = 0;
};

inline StreamData read_stream(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kStreamMagic.size() ||
        !std::equal(kStreamMagic.begin(), kStreamMagic.end(), bytes.begin()))
        throw BadMagic(0);
    if (bytes.size() < kStreamHeaderSize) throw TruncatedRecord(bytes.size());

    const std::uint8_t* p = bytes.data();
    StreamData out;
    out.header.version = p[4];
    if (out.header.version > kStreamVersion) throw UnsupportedVersion(out.header.version, 4);
    out.header.tick_picoseconds = detail::get_u32le(p + 7);
    out.header.sensor_width = detail::get_u16le(p + 11);
    out.header.sensor_height = detail::get_u16le(p + 13);
    out.header.record_count = detail::get_u64le(p + 15);

    // A declared count beyond the payload is truncation at the first
    // missing record, before any allocation sized from the header.
    const std::uint64_t available =
        (bytes.size() - kStreamHeaderSize) / kStreamRecordSize;
    if (out.header.record_count > available)
        throw TruncatedRecord(kStreamHeaderSize + available * kStreamRecordSize);

    std::size_t offset = kStreamHeaderSize;
    out.hits.reserve(static_cast<std::size_t>(out.header.record_count));
    for (std::uint64_t i = 0; i < out.header.record_count; ++i) {
        if (offset + kStreamRecordSize > bytes.size()) throw TruncatedRecord(offset);
        const std::uint8_t* r = p + offset;
        RawHit hit;
        hit.x = detail::get_u16le(r);
        hit.y = detail::get_u16le(r + 2);
        hit.toa_ticks = detail::get_u64le(r + 4);
        hit.tot = detail::get_u16le(r + 12);
        out.hits.push_back(hit);
        offset += kStreamRecordSize;
    }
    out.trailing_bytes = bytes.size() - offset;
    return out;
}

inline std::vector<std::uint8_t> write_stream(const StreamHeader& header,
                                              std::span<const RawHit> hits) {
    if (header.tick_picoseconds == 0)
        throw ConfigInvalid("tick_picoseconds must be positive");
    if (header.sensor_width == 0 || header.sensor_height == 0)
        throw ConfigInvalid("sensor dimensions must be at least 1x1");
    for (const RawHit& h : hits)
        if (h.x >= header.sensor_width || h.y >= header.sensor_height)
            throw HitOutOfBounds(h.x, h.y, header.sensor_width, header.sensor_height);

    std::vector<std::uint8_t> out;
    out.reserve(kStreamHeaderSize + hits.size() * kStreamRecordSize);
    for (std::uint8_t m : kStreamMagic) out.push_back(m);
    out.push_back(header.version);
    detail::put_u16le(out, 0); // reserved
    detail::put_u32le(out, header.tick_picoseconds);
    detail::put_u16le(out, header.sensor_width);
    detail::put_u16le(out, header.sensor_height);
    detail::put_u64le(out, static_cast<std::uint64_t>(hits.size()));
    for (const RawHit& h : hits) {
        detail::put_u16le(out, h.x);
        detail::put_u16le(out, h.y);
        detail::put_u64le(out, h.toa_ticks);
        detail::put_u16le(out, h.tot);
    }
    return out;
}

// ---------------------------------------------------------------------------
// .phfr photon-number frame stack format
//
// Layout (27-byte header, little-endian):
//   offset 0   4  magic "PHFR"
//   offset 4   1  version (currently 1)
//   offset 5   2  reserved, written as 0
//   offset 7   2  width  (u16)
//   offset 9   2  height (u16)
//   offset 11  8  frame_count (u64)
//   offset 19  8  exposure_us (IEEE-754 f64)
// followed by width*height*frame_count u16 counts, frame-major then
// row-major within a frame.
// ---------------------------------------------------------------------------

struct FrameStack {
    std::uint16_t width = 1;
    std::uint16_t height = 1;
    std::uint64_t frame_count = 0;
    double exposure_us = 172.8;
    std::vector<std::uint16_t> counts; // frame-major, row-major inside frame

    std::size_t pixels_per_frame() const {
        return static_cast<std::size_t>(width) * height;
    }

    std::uint16_t at(std::uint64_t frame, std::uint16_t x, std::uint16_t y) const {
        return counts[static_cast<std::size_t>(frame) * pixels_per_frame() +
                      static_cast<std::size_t>(y) * width + x];
    }

    std::uint16_t& at(std::uint64_t frame, std::uint16_t x, std::uint16_t y) {
        return counts[static_cast<std::size_t>(frame) * pixels_per_frame() +
                      static_cast<std::size_t>(y) * width + x];
    }

    friend bool operator==(const FrameStack&, const FrameStack&) = default;
};

inline FrameStack read_frames(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kFrameMagic.size() ||
        !std::equal(kFrameMagic.begin(), kFrameMagic.end(), bytes.begin()))
        throw BadMagic(0);
    if (bytes.size() < kFrameHeaderSize) throw TruncatedFrame(bytes.size());

    const std::uint8_t* p = bytes.data();
    FrameStack stack;
    std::uint8_t version = p[4];
    if (version > kStreamVersion) throw UnsupportedVersion(version, 4);
    stack.width = detail::get_u16le(p + 7);
    stack.height = detail::get_u16le(p + 9);
    stack.frame_count = detail::get_u64le(p + 11);
    stack.exposure_us = detail::get_f64le(p + 19);

    const std::uint64_t available = (bytes.size() - kFrameHeaderSize) / 2;
    if (stack.pixels_per_frame() > 0 &&
        stack.frame_count > available / stack.pixels_per_frame())
        throw TruncatedFrame(bytes.size());

    const std::size_t n = stack.pixels_per_frame() * static_cast<std::size_t>(stack.frame_count);
    std::size_t offset = kFrameHeaderSize;
    stack.counts.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint16_t c = detail::get_u16le(p + offset);
        if (c > kPnrCountCeiling) throw CountOverLimit(c, offset);
        stack.counts.push_back(c);
        offset += 2;
    }
    return stack;
}

inline std::vector<std::uint8_t> write_frames(const FrameStack& stack) {
    const std::size_t n = stack.pixels_per_frame() * static_cast<std::size_t>(stack.frame_count);
    if (stack.counts.size() != n)
        throw ConfigInvalid("frame stack holds " + std::to_string(stack.counts.size()) +
                            " counts, geometry needs " + std::to_string(n));
    std::vector<std::uint8_t> out;
    out.reserve(kFrameHeaderSize + 2 * n);
    for (std::uint8_t m : kFrameMagic) out.push_back(m);
    out.push_back(kStreamVersion);
    detail::put_u16le(out, 0); // reserved
    detail::put_u16le(out, stack.width);
    detail::put_u16le(out, stack.height);
    detail::put_u64le(out, stack.frame_count);
    detail::put_f64le(out, stack.exposure_us);
    for (std::size_t i = 0; i < stack.counts.size(); ++i) {
        if (stack.counts[i] > kPnrCountCeiling)
            throw CountOverLimit(stack.counts[i], kFrameHeaderSize + 2 * i);
        detail::put_u16le(out, stack.counts[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV import: rows of `x,y,toa_ticks,tot`, optional header row.
// ---------------------------------------------------------------------------

namespace detail {

inline bool parse_u64_field(std::string_view field, std::uint64_t& value) {
    const char* first = field.data();
    const char* last = field.data() + field.size();
    while (first != last && (*first == ' ' || *first == '\t')) ++first;
    while (last != first && (last[-1] == ' ' || last[-1] == '\t')) --last;
    if (first == last) return false;
    auto [ptr, ec] = std::from_chars(first, last, value);
    return ec == std::errc() && ptr == last;
}

} // namespace detail

inline std::vector<RawHit> import_csv(std::string_view text) {
    std::vector<RawHit> hits;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool first_data_row = true;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos
                                                                               : eol - pos);
        pos = eol == std::string_view::npos ? text.size() : eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;

        std::array<std::string_view, 4> fields;
        std::size_t field_count = 0;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                if (field_count >= fields.size()) {
                    field_count = fields.size() + 1;
                    break;
                }
                fields[field_count++] = line.substr(start, i - start);
                start = i + 1;
            }
        }

        // A leading row whose first field is not a number is a header.
        if (first_data_row && field_count >= 1) {
            std::uint64_t probe = 0;
            if (!detail::parse_u64_field(fields[0], probe)) {
                first_data_row = false;
                continue;
            }
        }
        std::array<std::uint64_t, 4> values{};
        bool numeric = field_count == 4;
        for (std::size_t i = 0; numeric && i < 4; ++i)
            numeric = detail::parse_u64_field(fields[i], values[i]);
        if (!numeric) throw MalformedRow(line_no, std::string(line));
        first_data_row = false;
        if (values[0] > 0xffff || values[1] > 0xffff || values[3] > 0xffff)
            throw MalformedRow(line_no, "field out of range");
        hits.push_back(RawHit{static_cast<std::uint16_t>(values[0]),
                              static_cast<std::uint16_t>(values[1]),
                              static_cast<std::uint16_t>(values[3]), values[2]});
    }
    return hits;
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_binary_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path);
}

inline void write_text_file(const std::string& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing: " + path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

} // namespace photostat
