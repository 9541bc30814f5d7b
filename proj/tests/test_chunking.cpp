#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "certsmooth/chunking.hpp"
#include "certsmooth/dataset.hpp"

using namespace certsmooth;

TEST_CASE("preprocess pads the header block to the next multiple of z") {
    PeBuildSpec spec;
    spec.file_alignment = 1000; // puts size_of_headers at 1000
    spec.sections.push_back({".text", Bytes(2000, 0xAA), 2000});
    const pe::PeImage img = pe::parse(build_pe(spec));
    REQUIRE(img.size_of_headers() == 1000);

    const pe::PeImage out = preprocess(img, 512);
    CHECK(out.size_of_headers() == 1024);
    CHECK(out.sections[0].pointer_to_raw_data == 1024);
    CHECK(out.sections[0].size_of_raw_data == 2048);
}

TEST_CASE("preprocess leaves aligned parts alone and is idempotent") {
    PeBuildSpec spec;
    spec.sections.push_back({".text", Bytes(2048, 0x11), 2048});
    spec.sections.push_back({".data", Bytes(1024, 0x22), 1000});
    spec.overlay = Bytes(77, 0x33);
    const pe::PeImage img = pe::parse(build_pe(spec));

    const Bytes once = pe::serialize(preprocess(img, 512));
    CHECK(once == pe::serialize(img)); // already 512-aligned, overlay untouched
    const Bytes twice = pe::serialize(preprocess(pe::parse(once), 512));
    CHECK(twice == once);

    const Bytes at1024 = pe::serialize(preprocess(img, 1024));
    CHECK(pe::serialize(preprocess(pe::parse(at1024), 1024)) == at1024);
}

TEST_CASE("preprocess puts every section start on a chunk boundary") {
    PeBuildSpec spec;
    spec.sections.push_back({".text", Bytes(1536, 0x11), 1500});
    spec.sections.push_back({".data", Bytes(2048, 0x22), 2048});
    const pe::PeImage img = pe::parse(build_pe(spec));

    const std::size_t z = 1024;
    const pe::PeImage out = preprocess(img, z);
    // Hand-computed layout: headers 512 -> 1024, .text 1536 -> 2048, .data stays.
    CHECK(out.size_of_headers() == 1024);
    CHECK(out.sections[0].pointer_to_raw_data == 1024);
    CHECK(out.sections[0].size_of_raw_data == 2048);
    CHECK(out.sections[1].pointer_to_raw_data == 3072);
    CHECK(pe::serialize(out).size() == 1024 + 2048 + 2048);
    for (const auto& s : out.sections) CHECK(s.pointer_to_raw_data % z == 0);
}

TEST_CASE("preprocess only inserts zeros, payload byte order preserved") {
    PeBuildSpec spec;
    spec.sections.push_back({".text", Bytes(700, 0x5A), 700});
    spec.sections.push_back({".data", Bytes(900, 0xC3), 900});
    const pe::PeImage img = pe::parse(build_pe(spec));
    const pe::PeImage out = preprocess(img, 512);
    // Every original payload byte still present, in order, per section.
    for (std::size_t i = 0; i < img.sections.size(); ++i) {
        const Bytes& before = img.section_data[i];
        const Bytes& after = out.section_data[i];
        REQUIRE(after.size() >= before.size());
        CHECK(std::equal(before.begin(), before.end(), after.begin()));
        CHECK(std::count(after.begin() + before.size(), after.end(), 0) ==
              static_cast<std::ptrdiff_t>(after.size() - before.size()));
    }
}

TEST_CASE("split produces ceil(L/z) chunks with a padded tail") {
    SECTION("paper sizing: 10000 bytes at z=4096 gives 3 chunks") {
        Bytes data(10000, 0x77);
        const auto views = split(data, ChunkSpec{4096, 0});
        CHECK(views.size() == 3);
        CHECK(views[2].payload.size() == 4096);
    }
    SECTION("exact fit, no padding") {
        Bytes data(512, 0x01);
        const auto views = split(data, ChunkSpec{512, 0});
        REQUIRE(views.size() == 1);
        CHECK(views[0].payload == data);
    }
    SECTION("one byte over adds a chunk with 511 pad bytes") {
        Bytes data(513, 0xFF);
        const auto views = split(data, ChunkSpec{512, 0});
        REQUIRE(views.size() == 2);
        CHECK(views[1].payload[0] == 0xFF);
        CHECK(std::count(views[1].payload.begin() + 1, views[1].payload.end(), 0) == 511);
    }
    SECTION("empty input is an error") {
        CHECK_THROWS_AS(split(Bytes{}, ChunkSpec{512, 0}), Error);
    }
}

TEST_CASE("split views concatenate back to the input") {
    std::mt19937_64 rng(5);
    for (std::size_t len : {1ul, 511ul, 512ul, 513ul, 5000ul, 16384ul}) {
        Bytes data(len);
        for (auto& b : data) b = static_cast<std::uint8_t>(rng());
        const auto views = split(data, ChunkSpec{512, 0});
        Bytes joined;
        for (const auto& v : views) {
            CHECK(v.source_begin == v.index * 512);
            joined.insert(joined.end(), v.payload.begin(), v.payload.end());
        }
        joined.resize(len); // trim the tail padding
        CHECK(joined == data);
    }
}

TEST_CASE("ablate_train returns whole input when it fits") {
    Bytes data(100, 0xAB);
    CHECK(ablate_train(data, 512, 42) == data);
}

TEST_CASE("ablate_train is deterministic under a fixed seed") {
    Bytes data(1024);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<std::uint8_t>(i * 31);
    const Bytes a = ablate_train(data, 512, 9001);
    const Bytes b = ablate_train(data, 512, 9001);
    CHECK(a == b);
    CHECK(a.size() == 512);
}

TEST_CASE("ablate_train start offsets are uniform over [0, L-z]") {
    std::mt19937_64 content_rng(123);
    Bytes data(1024);
    for (auto& b : data) b = static_cast<std::uint8_t>(content_rng());

    std::mt19937_64 rng(77);
    const std::size_t n_draws = 10000;
    std::vector<std::size_t> hits(513, 0);
    for (std::size_t d = 0; d < n_draws; ++d) {
        const Bytes win = ablate_train(data, 512, rng);
        REQUIRE(win.size() == 512);
        const auto it = std::search(data.begin(), data.end(), win.begin(), win.end());
        REQUIRE(it != data.end());
        const auto start = static_cast<std::size_t>(it - data.begin());
        REQUIRE(start <= 512);
        hits[start]++;
    }
    const double expected = double(n_draws) / 513.0;
    double chi2 = 0.0;
    for (std::size_t s = 0; s <= 512; ++s) {
        const double diff = double(hits[s]) - expected;
        chi2 += diff * diff / expected;
    }
    // df = 512: mean 512, sd = 32; anything below mean + 4 sd passes.
    CHECK(chi2 < 650.0);
    CHECK(hits[0] > 0);
    CHECK(hits[512] > 0);
}

TEST_CASE("ablate_train rejects empty input") {
    CHECK_THROWS_AS(ablate_train(Bytes{}, 512, 1), Error);
}
