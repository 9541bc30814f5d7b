#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <fstream>

#include "corpus_fixture.hpp"

using namespace certsmooth;

TEST_CASE("generated corpus files parse, validate and carry their motifs") {
    const auto dir = testutil::scratch_dir("gen_corpus");
    CorpusSpec spec;
    spec.n_benign = 50;
    spec.n_malicious = 50;
    spec.min_size = 4096;
    spec.max_size = 8192;
    spec.overlay_max = 128;
    spec.seed = 3;
    const GeneratedCorpus gen = generate_corpus(spec, dir);
    REQUIRE(gen.manifest.size() == 100);
    REQUIRE(gen.truth.size() == 100);

    std::size_t benign = 0;
    for (std::size_t i = 0; i < gen.manifest.size(); ++i) {
        const Bytes file = read_file(dir / gen.manifest[i].path);
        const pe::PeImage img = pe::parse(file);
        CHECK(pe::validate_structure(img).empty());
        CHECK(pe::serialize(img) == file);
        benign += gen.manifest[i].label == Label::Benign;

        const auto& truth = gen.truth[i];
        CHECK(truth.file_len == file.size());
        CHECK(truth.header_size == img.size_of_headers());
        const Bytes& motif = gen.manifest[i].label == Label::Malicious
                                 ? spec.malicious_motif.pattern
                                 : spec.benign_motif.pattern;
        REQUIRE_FALSE(truth.motif_offsets.empty());
        for (std::size_t off : truth.motif_offsets) {
            REQUIRE(off + motif.size() <= file.size());
            CHECK(std::equal(motif.begin(), motif.end(), file.begin() + off));
        }
        for (const auto& st : truth.sections) {
            if (st.slack_len == 0) continue;
            const auto regions = pe::slack_regions(img);
            const bool found = std::any_of(regions.begin(), regions.end(), [&](const auto& r) {
                return r.file_offset == st.slack_offset && r.length == st.slack_len;
            });
            CHECK(found);
        }
    }
    CHECK(benign == 50);
    CHECK(gen.separability >= 0.95);
}

TEST_CASE("generate then ingest round-trips with zero validation errors") {
    const auto& corpus = testutil::small_corpus();
    CHECK(corpus.ds.entries.size() == corpus.gen.manifest.size());
    for (std::size_t i = 0; i < corpus.ds.entries.size(); ++i)
        CHECK(corpus.ds.entries[i].sha256 == corpus.gen.manifest[i].sha256);
}

TEST_CASE("ingest rejects tampered and oversized files") {
    const auto dir = testutil::scratch_dir("ingest_bad");
    CorpusSpec spec;
    spec.n_benign = 2;
    spec.n_malicious = 2;
    spec.min_size = 4096;
    spec.max_size = 4096 + 512;
    spec.seed = 8;
    const GeneratedCorpus gen = generate_corpus(spec, dir);

    SECTION("valid manifest ingests fully") {
        const Dataset ds = ingest(dir, dir / "manifest.jsonl");
        CHECK(ds.entries.size() == 4);
    }
    SECTION("tampering a file fails with its path named") {
        Bytes file = read_file(dir / gen.manifest[0].path);
        file[file.size() / 2] ^= 0x5A;
        write_file(dir / gen.manifest[0].path, file);
        try {
            ingest(dir, dir / "manifest.jsonl");
            FAIL("expected HashMismatch");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::HashMismatch);
            CHECK(std::string(e.what()).find(gen.manifest[0].path) != std::string::npos);
        }
        // restore for other sections
        file[file.size() / 2] ^= 0x5A;
        write_file(dir / gen.manifest[0].path, file);
    }
    SECTION("a file over the cap is rejected") {
        try {
            ingest(dir, dir / "manifest.jsonl", 1024);
            FAIL("expected OversizeFile");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::OversizeFile);
        }
    }
}

TEST_CASE("split_by_time cuts oldest to newest") {
    Dataset ds;
    for (int i = 0; i < 10; ++i) {
        ManifestEntry e;
        e.path = "f" + std::to_string(i);
        e.sha256 = std::string(2, static_cast<char>('a' + i));
        e.timestamp = 1000 - i * 10; // reverse order on purpose
        ds.entries.push_back(e);
    }
    const SplitResult split = split_by_time(ds, 0.6, 0.2);
    CHECK(split.train.entries.size() == 6);
    CHECK(split.val.entries.size() == 2);
    CHECK(split.test.entries.size() == 2);

    std::int64_t max_train = -1, min_test = 1 << 30;
    for (const auto& e : split.train.entries) max_train = std::max(max_train, e.timestamp);
    for (const auto& e : split.test.entries) min_test = std::min<std::int64_t>(min_test, e.timestamp);
    CHECK(max_train <= min_test);

    SECTION("equal timestamps fall back to sha order") {
        for (auto& e : ds.entries) e.timestamp = 42;
        const SplitResult tie = split_by_time(ds, 0.5, 0.0);
        REQUIRE(tie.train.entries.size() == 5);
        for (std::size_t i = 1; i < tie.train.entries.size(); ++i)
            CHECK(tie.train.entries[i - 1].sha256 < tie.train.entries[i].sha256);
    }
    SECTION("fractions must leave room for the test set") {
        CHECK_THROWS_AS(split_by_time(ds, 0.8, 0.2), Error);
    }
}

TEST_CASE("manifest entries round-trip through jsonl") {
    ManifestEntry e;
    e.path = "sample.exe";
    e.sha256 = std::string(64, 'f');
    e.label = Label::Malicious;
    e.family = "synthetic.3";
    e.timestamp = 1590000000;
    e.size_bytes = 12345;
    const auto j = to_json(e);
    const ManifestEntry back = manifest_entry_from_json(nlohmann::json::parse(j.dump()));
    CHECK(back.path == e.path);
    CHECK(back.sha256 == e.sha256);
    CHECK(back.label == e.label);
    CHECK(back.family == e.family);
    CHECK(back.timestamp == e.timestamp);
    CHECK(back.size_bytes == e.size_bytes);
}
