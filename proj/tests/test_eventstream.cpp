#include <doctest.h>

#include <photostat/eventstream.hpp>
#include <photostat/rng.hpp>

using namespace photostat;

namespace {

std::vector<RawHit> random_hits(std::size_t n, std::uint64_t seed, std::uint16_t width = 256,
                                std::uint16_t height = 256) {
    Xoshiro256pp rng(seed);
    std::vector<RawHit> hits(n);
    for (RawHit& h : hits) {
        h.x = static_cast<std::uint16_t>(rng.next() % width);
        h.y = static_cast<std::uint16_t>(rng.next() % height);
        h.tot = static_cast<std::uint16_t>(rng.next() % 1024);
        h.toa_ticks = rng.next() % (1ull << 40);
    }
    return hits;
}

} // namespace

TEST_CASE("empty stream writes a 23-byte header-only file") {
    StreamHeader header;
    auto bytes = write_stream(header, {});
    CHECK(bytes.size() == 23);

    StreamData parsed = read_stream(bytes);
    CHECK(parsed.hits.empty());
    CHECK(parsed.header == header);
    CHECK(parsed.trailing_bytes == 0);
}

TEST_CASE("three records survive a round trip in file order") {
    StreamHeader header;
    std::vector<RawHit> hits = {{10, 20, 5, 1000}, {3, 4, 7, 500}, {200, 100, 9, 2000}};
    auto bytes = write_stream(header, hits);
    CHECK(bytes.size() == 23 + 3 * 14);

    StreamData parsed = read_stream(bytes);
    REQUIRE(parsed.hits.size() == 3);
    CHECK(parsed.hits == hits); // not time-sorted, exactly file order
    CHECK(parsed.header.record_count == 3);
}

TEST_CASE("random 10k-hit streams round trip exactly") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        StreamHeader header;
        header.tick_picoseconds = 1562;
        auto hits = random_hits(10000, seed);
        auto bytes = write_stream(header, hits);
        StreamData parsed = read_stream(bytes);
        header.record_count = hits.size();
        CHECK(parsed.header == header);
        CHECK(parsed.hits == hits);
    }
}

TEST_CASE("extreme field values survive the round trip") {
    StreamHeader header;
    header.sensor_width = 0xffff;
    header.sensor_height = 0xffff;
    header.tick_picoseconds = 0xffffffff;
    std::vector<RawHit> hits = {{0xfffe, 0xfffe, 0xffff, 0xffffffffffffffffULL},
                                {0, 0, 0, 0},
                                {1, 2, 3, 0x8000000000000000ULL}};
    StreamData parsed = read_stream(write_stream(header, hits));
    CHECK(parsed.hits == hits);
    CHECK(parsed.header.tick_picoseconds == 0xffffffff);
}

TEST_CASE("serialization is deterministic") {
    StreamHeader header;
    auto hits = random_hits(500, 77);
    CHECK(write_stream(header, hits) == write_stream(header, hits));
}

TEST_CASE("truncated record reports the offset of the incomplete record") {
    StreamHeader header;
    auto hits = random_hits(3, 5);
    auto bytes = write_stream(header, hits);

    // Chop the file in the middle of the second record.
    std::size_t cut = kStreamHeaderSize + kStreamRecordSize + 6;
    std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + cut);
    CHECK_THROWS_WITH_AS(static_cast<void>(read_stream(truncated)),
                         doctest::Contains("offset 37"), TruncatedRecord);
}

TEST_CASE("bad magic and unsupported version are rejected") {
    StreamHeader header;
    auto bytes = write_stream(header, {});
    bytes[0] = 'X';
    CHECK_THROWS_AS(static_cast<void>(read_stream(bytes)), BadMagic);

    bytes[0] = 'P';
    bytes[4] = 9;
    CHECK_THROWS_AS(static_cast<void>(read_stream(bytes)), UnsupportedVersion);
}

TEST_CASE("trailing bytes are reported, not consumed") {
    StreamHeader header;
    auto hits = random_hits(2, 11);
    auto bytes = write_stream(header, hits);
    bytes.push_back(0xAA);
    bytes.push_back(0xBB);
    StreamData parsed = read_stream(bytes);
    CHECK(parsed.hits.size() == 2);
    CHECK(parsed.trailing_bytes == 2);
}

TEST_CASE("write_stream rejects hits outside the sensor") {
    StreamHeader header;
    header.sensor_width = 64;
    header.sensor_height = 64;
    std::vector<RawHit> hits = {{64, 0, 1, 0}}; // x == sensor_width
    CHECK_THROWS_AS(static_cast<void>(write_stream(header, hits)), HitOutOfBounds);
}

TEST_CASE("frame stack: 1x1x1 zero count round trips") {
    FrameStack stack;
    stack.width = 1;
    stack.height = 1;
    stack.frame_count = 1;
    stack.exposure_us = 172.8;
    stack.counts = {0};
    auto bytes = write_frames(stack);
    CHECK(bytes.size() == kFrameHeaderSize + 2);
    CHECK(read_frames(bytes) == stack);
}

TEST_CASE("frame payload size is exactly 2 bytes per count") {
    // 100 x 100 x 100 keeps the memory small; the payload arithmetic is the
    // same as for any frame count.
    FrameStack stack;
    stack.width = 100;
    stack.height = 100;
    stack.frame_count = 100;
    stack.counts.assign(100 * 100 * 100, 3);
    auto bytes = write_frames(stack);
    CHECK(bytes.size() == kFrameHeaderSize + 2ull * 100 * 100 * 100);
    CHECK(read_frames(bytes) == stack);
}

TEST_CASE("random frame stacks round trip") {
    Xoshiro256pp rng(99);
    FrameStack stack;
    stack.width = 7;
    stack.height = 5;
    stack.frame_count = 40;
    stack.exposure_us = 35.637919;
    stack.counts.resize(7 * 5 * 40);
    for (auto& c : stack.counts) c = static_cast<std::uint16_t>(rng.next() % 201);
    auto bytes = write_frames(stack);
    CHECK(read_frames(bytes) == stack);
    CHECK(write_frames(stack) == bytes);
}

TEST_CASE("counts above the camera ceiling are rejected both ways") {
    FrameStack stack;
    stack.frame_count = 1;
    stack.counts = {201};
    CHECK_THROWS_AS(static_cast<void>(write_frames(stack)), CountOverLimit);

    stack.counts = {200};
    auto bytes = write_frames(stack);
    // Patch the stored count to 201 and re-read.
    bytes[kFrameHeaderSize] = 201;
    CHECK_THROWS_AS(static_cast<void>(read_frames(bytes)), CountOverLimit);
}

TEST_CASE("truncated frame payload names the broken offset") {
    FrameStack stack;
    stack.width = 2;
    stack.height = 2;
    stack.frame_count = 2;
    stack.counts = {1, 2, 3, 4, 5, 6, 7, 8};
    auto bytes = write_frames(stack);
    std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + bytes.size() - 3);
    CHECK_THROWS_AS(static_cast<void>(read_frames(truncated)), TruncatedFrame);
}

TEST_CASE("the documented sample files pin the byte layout") {
    // docs/formats.md annotates these files byte by byte; the writers must
    // keep producing exactly those bytes.
    StreamHeader header;
    std::vector<RawHit> hits = {{12, 34, 57, 250000}, {13, 34, 40, 250001}};
    auto stream_bytes = read_binary_file(std::string(PHOTOSTAT_SOURCE_DIR) + "/docs/sample.phst");
    CHECK(write_stream(header, hits) == stream_bytes);

    FrameStack stack;
    stack.width = 2;
    stack.height = 2;
    stack.frame_count = 1;
    stack.exposure_us = 172.8;
    stack.counts = {3, 0, 1, 7};
    auto frame_bytes = read_binary_file(std::string(PHOTOSTAT_SOURCE_DIR) + "/docs/sample.phfr");
    CHECK(write_frames(stack) == frame_bytes);
}

TEST_CASE("csv import handles the documented cases") {
    SUBCASE("one valid row") {
        auto hits = import_csv("12,34,100000,7\n");
        REQUIRE(hits.size() == 1);
        CHECK(hits[0] == RawHit{12, 34, 7, 100000});
    }
    SUBCASE("empty file") { CHECK(import_csv("").empty()); }
    SUBCASE("header row is skipped") {
        auto hits = import_csv("x,y,toa_ticks,tot\n1,2,3,4\n");
        REQUIRE(hits.size() == 1);
        CHECK(hits[0] == RawHit{1, 2, 4, 3});
    }
    SUBCASE("non-numeric field names the line") {
        CHECK_THROWS_WITH_AS(static_cast<void>(import_csv("1,2,3,4\n1,zz,3,4\n")),
                             doctest::Contains("line 2"), MalformedRow);
    }
    SUBCASE("csv import matches binary semantics") {
        auto hits = random_hits(64, 4);
        std::string csv = "x,y,toa_ticks,tot\n";
        for (const RawHit& h : hits)
            csv += std::to_string(h.x) + ',' + std::to_string(h.y) + ',' +
                   std::to_string(h.toa_ticks) + ',' + std::to_string(h.tot) + '\n';
        CHECK(import_csv(csv) == hits);
    }
}
