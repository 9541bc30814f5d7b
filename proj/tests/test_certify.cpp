#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "certsmooth/certify.hpp"
#include "corpus_fixture.hpp"

using namespace certsmooth;

namespace {

ChunkTally labels_tally(std::size_t n_malicious, std::size_t n_benign, std::size_t z = 512,
                        bool malicious_first = true) {
    std::vector<Label> labels;
    for (std::size_t i = 0; i < (malicious_first ? n_malicious : n_benign); ++i)
        labels.push_back(malicious_first ? Label::Malicious : Label::Benign);
    for (std::size_t i = 0; i < (malicious_first ? n_benign : n_malicious); ++i)
        labels.push_back(malicious_first ? Label::Benign : Label::Malicious);
    return tally_from_labels(labels, z);
}

} // namespace

TEST_CASE("delta follows ceil(p/z)+1 and sums over payloads") {
    CHECK(delta({5000}, 512) == 11); // ceil(9.77)+1
    CHECK(delta({1}, 512) == 2);     // a single byte can straddle a boundary
    CHECK(delta({1024, 2048}, 1024) == 5);
    CHECK(delta({}, 512) == 0);
    CHECK_THROWS_AS(delta({0}, 512), Error);

    // monotone in p, antitone in z
    std::size_t prev = 0;
    for (std::size_t p = 1; p < 4000; p += 37) {
        const std::size_t d = delta({p}, 512);
        CHECK(d >= prev);
        prev = d;
    }
    for (std::size_t z : {512u, 1024u, 2048u, 4096u}) CHECK(delta({8000}, z) >= delta({8000}, 2 * z));
}

TEST_CASE("certify applies the patch margin 2*delta") {
    const auto tally = labels_tally(30, 5);
    const auto cert = certify(tally, AttackKind::Patch, {5000}, 512);
    CHECK(cert.delta == 11);
    CHECK(cert.margin_actual == 25);
    CHECK(cert.margin_required == 22);
    CHECK(cert.certified);
}

TEST_CASE("certify applies the insertion margin delta") {
    const auto tally = labels_tally(20, 5);
    const auto cert = certify(tally, AttackKind::Insertion, {5000}, 512);
    CHECK(cert.delta == 11);
    CHECK(cert.margin_actual == 15);
    CHECK(cert.margin_required == 11);
    CHECK(cert.certified);

    // The same tally cannot take the patch margin for that payload.
    CHECK_FALSE(certify(tally, AttackKind::Patch, {5000}, 512).certified);
}

TEST_CASE("benign majorities pay the tie-break indicator") {
    // 10 benign vs 9 malicious with delta = 1: requires 10 >= 9 + 1 + 2.
    const auto tally = labels_tally(9, 10);
    const auto chk = detail::margin_check(tally, AttackKind::Patch, 1);
    CHECK(chk.margin_actual == 1);
    CHECK(chk.margin_required == 3);
    CHECK_FALSE(chk.certified);

    // Malicious majorities do not: 10 vs 9 with delta=... mirrored case.
    const auto m_tally = labels_tally(10, 9);
    const auto m_chk = detail::margin_check(m_tally, AttackKind::Insertion, 1);
    CHECK(m_chk.margin_required == 1);
    CHECK(m_chk.certified);
}

TEST_CASE("certify validates tally compatibility") {
    auto tally = labels_tally(10, 2);
    try {
        certify(tally, AttackKind::Patch, {100}, 1024);
        FAIL("expected MismatchedZ");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::MismatchedZ);
    }
    tally.preprocessed = false;
    try {
        certify(tally, AttackKind::Insertion, {100}, 512);
        FAIL("expected UnalignedTally");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::UnalignedTally);
    }
    CHECK_NOTHROW(certify(tally, AttackKind::Patch, {100}, 512));
}

TEST_CASE("max_certified_p is consistent with a re-check") {
    for (auto kind : {AttackKind::Patch, AttackKind::Insertion}) {
        for (std::size_t margin : {4u, 5u, 9u, 24u}) {
            const auto tally = labels_tally(margin + 6, 6);
            const auto cert = certify(tally, kind, {1}, 512);
            if (cert.max_certified_p == 0) {
                CHECK_FALSE(certify(tally, kind, {1}, 512).certified);
                continue;
            }
            CHECK(certify(tally, kind, {cert.max_certified_p}, 512).certified);
            CHECK_FALSE(certify(tally, kind, {cert.max_certified_p + 1}, 512).certified);
        }
    }
}

TEST_CASE("oracle: aligned and straddled span counts") {
    CHECK(chunks_spanned_aligned(512, 512) == 1);
    CHECK(chunks_spanned_aligned(5000, 512) == 10);
    CHECK(chunks_spanned_worst(1, 512) == 1);
    CHECK(chunks_spanned_worst(2, 512) == 2);
    CHECK(chunks_spanned_worst(512, 512) == 2);
    CHECK(chunks_spanned_worst(514, 512) == 3);
    // never above the certificate's delta
    for (std::size_t p = 1; p < 3000; p += 11)
        CHECK(chunks_spanned_worst(p, 512) <= delta({p}, 512));
}

TEST_CASE("oracle confirms certified patch tallies for every placement") {
    // p=1500 -> delta=4; margin 10 >= 2*delta certifies within the oracle guard.
    const auto tally = labels_tally(15, 5);
    REQUIRE(certify(tally, AttackKind::Patch, {1500}, 512).certified);
    CHECK(adversary_oracle(tally, AttackKind::Patch, {1500}, 512) == Label::Malicious);
}

TEST_CASE("oracle finds the patch flip at margin 2*delta-1") {
    // p = 514 straddles up to delta = 3 chunks; margin 2*3-1 = 5.
    const std::size_t p = 514, z = 512;
    REQUIRE(delta({p}, z) == 3);
    const auto tally = labels_tally(8, 3); // margin 5, contiguous malicious run
    REQUIRE_FALSE(certify(tally, AttackKind::Patch, {p}, z).certified);
    CHECK(adversary_oracle(tally, AttackKind::Patch, {p}, z) == Label::Benign);

    // One more vote of margin reaches 2*delta and the flip disappears.
    const auto safe = labels_tally(9, 3);
    REQUIRE(certify(safe, AttackKind::Patch, {p}, z).certified);
    CHECK(adversary_oracle(safe, AttackKind::Patch, {p}, z) == Label::Malicious);
}

TEST_CASE("oracle finds the insertion flip at margin delta-1") {
    const std::size_t p = 514, z = 512; // delta = 3
    const auto tally = labels_tally(7, 5); // margin 2 = delta-1
    REQUIRE_FALSE(certify(tally, AttackKind::Insertion, {p}, z).certified);
    CHECK(adversary_oracle(tally, AttackKind::Insertion, {p}, z) == Label::Benign);

    const auto safe = labels_tally(8, 5); // margin 3 = delta
    REQUIRE(certify(safe, AttackKind::Insertion, {p}, z).certified);
    CHECK(adversary_oracle(safe, AttackKind::Insertion, {p}, z) == Label::Malicious);
}

TEST_CASE("oracle respects benign majorities and the tie rule") {
    const std::size_t z = 512;
    // Benign-certified needs margin >= 1 + delta; at exactly delta the
    // adversary forces a tie, which the smoothed classifier calls malicious.
    const auto at_delta = labels_tally(4, 4 + 3, z, false); // margin 3 = delta(514)
    REQUIRE_FALSE(certify(at_delta, AttackKind::Insertion, {514}, z).certified);
    CHECK(adversary_oracle(at_delta, AttackKind::Insertion, {514}, z) == Label::Malicious);

    const auto above = labels_tally(4, 4 + 4, z, false); // margin 4 = 1 + delta
    REQUIRE(certify(above, AttackKind::Insertion, {514}, z).certified);
    CHECK(adversary_oracle(above, AttackKind::Insertion, {514}, z) == Label::Benign);
}

TEST_CASE("oracle guards tractability") {
    std::vector<Label> labels(21, Label::Malicious);
    const auto tally = tally_from_labels(labels, 512);
    try {
        adversary_oracle(tally, AttackKind::Patch, {100}, 512);
        FAIL("expected TooLarge");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::TooLarge);
    }
}

TEST_CASE("certificate soundness sweep on small tallies") {
    // Exhaustive over all label patterns with N <= 8 at a payload grid;
    // the acceptance suite runs the full N <= 12 version.
    const std::size_t z = 512;
    std::size_t checked = 0;
    for (std::size_t n = 1; n <= 8; ++n) {
        std::vector<std::size_t> grid{1, z / 2, z, z + 2, 2 * z, 3 * z + 7, n * z};
        for (std::uint32_t pattern = 0; pattern < (1u << n); ++pattern) {
            std::vector<Label> labels;
            for (std::size_t i = 0; i < n; ++i)
                labels.push_back((pattern >> i) & 1 ? Label::Malicious : Label::Benign);
            const auto tally = tally_from_labels(labels, z);
            for (std::size_t p : grid) {
                if (p == 0 || p > n * z) continue;
                for (auto kind : {AttackKind::Patch, AttackKind::Insertion}) {
                    const auto cert = certify(tally, kind, {p}, z);
                    if (cert.certified) {
                        ++checked;
                        REQUIRE(adversary_oracle(tally, kind, {p}, z) == majority_label(tally));
                    }
                }
            }
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("multi-payload certificates aggregate deltas soundly") {
    const std::size_t z = 512;
    const std::vector<std::size_t> payloads{700, 1200};
    const std::size_t d = delta(payloads, z); // (2+1)+(3+1) = 7
    REQUIRE(d == 7);
    const auto certified = labels_tally(6 + 7, 6);
    REQUIRE(certify(certified, AttackKind::Insertion, payloads, z).certified);
    CHECK(adversary_oracle(certified, AttackKind::Insertion, payloads, z) == Label::Malicious);

    const auto weak = labels_tally(6 + 6, 6);
    REQUIRE_FALSE(certify(weak, AttackKind::Insertion, payloads, z).certified);
    // Patch with two payloads on a contiguous run: flip must exist below 2*delta.
    const auto patch_weak = labels_tally(10, 3);
    REQUIRE_FALSE(certify(patch_weak, AttackKind::Patch, payloads, z).certified);
    CHECK(adversary_oracle(patch_weak, AttackKind::Patch, payloads, z) == Label::Benign);
}

TEST_CASE("certified accuracy hits the forced zeros and is monotone") {
    const auto& corpus = testutil::small_corpus();
    const TrainedModel& model = testutil::small_chunk_model();

    std::vector<EvalCase> cases;
    std::size_t clean_correct = 0;
    for (std::size_t i = 0; i < corpus.bytes.size(); ++i) {
        cases.push_back(
            make_eval_case(model, corpus.bytes[i], corpus.ds.entries[i].label, 512));
        clean_correct += cases.back().correct;
    }
    const double clean = double(clean_correct) / double(cases.size());

    CHECK(certified_accuracy(cases, AttackKind::Patch, 0.50, 512) == 0.0);
    CHECK(certified_accuracy(cases, AttackKind::Insertion, 1.00, 512) == 0.0);

    for (auto kind : {AttackKind::Patch, AttackKind::Insertion}) {
        double prev = 1.0;
        for (double f : {0.01, 0.05, 0.10, 0.30, 0.50}) {
            const double acc = certified_accuracy(cases, kind, f, 512);
            CHECK(acc <= prev);
            CHECK(acc <= clean);
            prev = acc;
        }
    }

    // Insertion certificates dominate patch certificates at equal payload.
    for (double f : {0.05, 0.10, 0.30}) {
        CHECK(certified_accuracy(cases, AttackKind::Insertion, f, 512) >=
              certified_accuracy(cases, AttackKind::Patch, f, 512));
    }
}

TEST_CASE("sweep csv has the expected shape") {
    std::vector<SweepRow> rows{{0.05, AttackKind::Patch, 0.875, 24},
                               {0.05, AttackKind::Insertion, 0.917, 24}};
    const std::string csv = sweep_csv(rows);
    CHECK(csv.rfind("p_fraction,kind,certified_accuracy,n_files\n", 0) == 0);
    CHECK(csv.find("0.05,patch,0.875000,24") != std::string::npos);
    CHECK(csv.find("0.05,insertion,0.917000,24") != std::string::npos);
}
