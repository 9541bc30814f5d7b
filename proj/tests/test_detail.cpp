#include <catch2/catch_amalgamated.hpp>

#include "certsmooth/detail/crc32.hpp"
#include "certsmooth/detail/sha256.hpp"

using namespace certsmooth;

TEST_CASE("sha256 matches FIPS vectors") {
    CHECK(detail::sha256_hex({}) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    const Bytes abc{'a', 'b', 'c'};
    CHECK(detail::sha256_hex(abc) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    Bytes million(1000000, 'a');
    CHECK(detail::sha256_hex(million) ==
          "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}

TEST_CASE("crc32 matches the classic check value") {
    const Bytes data{'1', '2', '3', '4', '5', '6', '7', '8', '9'};
    CHECK(detail::crc32(data) == 0xCBF43926u);
    CHECK(detail::crc32(Bytes{}) == 0u);
}
