#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <unistd.h>
#include <fstream>
#include <string>
#include <vector>

#include "hiergen/container.hpp"

using namespace hiergen;
namespace fs = std::filesystem;

namespace {

struct temp_dir {
    fs::path p;
    temp_dir() {
        p = fs::temp_directory_path() / ("hiergen_test_" + std::to_string(::getpid()));
        fs::create_directories(p);
    }
    ~temp_dir() {
        std::error_code ec;
        fs::remove_all(p, ec);
    }
    std::string file(const std::string& name) const { return (p / name).string(); }
};

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

container sample() {
    container c;
    c.add_f32("weights", {2, 3}, {1.5f, -2.25f, 0.0f, 3.75f, 1e-7f, -1e7f});
    c.add_i32("labels", {4}, {0, 1, 15, -3});
    c.add_f32("meta.seed", {1}, {42.0f});
    return c;
}

} // namespace

TEST_CASE("round trip preserves names, shapes and exact payloads") {
    temp_dir td;
    auto path = td.file("rt.mndh");
    auto c = sample();
    save_container(path, c);
    auto d = load_container(path);
    REQUIRE(d.entries.size() == 3);
    const auto& w = d.at("weights");
    CHECK(w.dtype == dtype_tag::f32);
    CHECK(w.shape == std::vector<int>{2, 3});
    CHECK(w.f == c.at("weights").f);  // bit-exact
    const auto& l = d.at("labels");
    CHECK(l.dtype == dtype_tag::i32);
    CHECK(l.i == std::vector<int32_t>{0, 1, 15, -3});
    CHECK(d.at("meta.seed").f[0] == 42.0f);
    CHECK_THROWS_AS(d.at("absent"), key_error&);
}

TEST_CASE("tensor_at lifts an f32 entry into a tensor") {
    temp_dir td;
    auto path = td.file("t.mndh");
    save_container(path, sample());
    auto d = load_container(path);
    auto t = d.tensor_at("weights");
    CHECK(t->shape == std::vector<int>{2, 3});
    CHECK(double(t->v[3]) == 3.75);
}

TEST_CASE("utf8 names survive") {
    temp_dir td;
    auto path = td.file("u.mndh");
    container c;
    c.add_f32("p\xc3\xa4r\xc3\xa4m", {1}, {1.0f});
    save_container(path, c);
    auto d = load_container(path);
    CHECK(d.at("p\xc3\xa4r\xc3\xa4m").f[0] == 1.0f);
}

TEST_CASE("save rejects duplicates, non-finite values and extent mismatches") {
    temp_dir td;
    container c;
    c.add_f32("a", {1}, {1.0f});
    CHECK_THROWS_AS(c.add_f32("a", {1}, {2.0f}), data_error&);

    container nf;
    nf.add_f32("bad", {2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
    CHECK_THROWS_AS(save_container(td.file("nf.mndh"), nf), numeric_error&);

    container mis;
    container_entry e;
    e.name = "m";
    e.dtype = dtype_tag::f32;
    e.shape = {3};
    e.f = {1.0f, 2.0f};  // two values for three slots
    mis.entries.push_back(e);
    CHECK_THROWS_AS(save_container(td.file("mis.mndh"), mis), dim_error&);
}

TEST_CASE("load rejects malformed files with the byte offset named") {
    temp_dir td;
    auto good = td.file("good.mndh");
    save_container(good, sample());
    auto bytes = slurp(good);
    REQUIRE(bytes.size() > 16);

    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_container(td.file("nope.mndh")), data_error&);
    }
    SUBCASE("bad magic") {
        auto b = bytes;
        b[0] = 'X';
        auto p = td.file("magic.mndh");
        spit(p, b);
        CHECK_THROWS_AS(load_container(p), format_error&);
    }
    SUBCASE("bad version") {
        auto b = bytes;
        b[4] = 9;
        auto p = td.file("ver.mndh");
        spit(p, b);
        CHECK_THROWS_AS(load_container(p), format_error&);
    }
    SUBCASE("truncation") {
        for (size_t cut : {size_t(3), size_t(11), bytes.size() / 2, bytes.size() - 1}) {
            auto b = bytes;
            b.resize(cut);
            auto p = td.file("trunc.mndh");
            spit(p, b);
            bool threw = false;
            try {
                load_container(p);
            } catch (const format_error& e) {
                threw = true;
                CHECK(std::string(e.what()).find("byte") != std::string::npos);
            }
            CHECK(threw);
        }
    }
    SUBCASE("unknown dtype tag") {
        // first entry header: magic(4) + version(4) + count(4) + name_len(2) + name
        auto b = bytes;
        size_t name_len = size_t(uint8_t(b[12])) | (size_t(uint8_t(b[13])) << 8);
        size_t dtype_off = 14 + name_len;
        b[dtype_off] = 7;
        auto p = td.file("dtype.mndh");
        spit(p, b);
        bool threw = false;
        try {
            load_container(p);
        } catch (const format_error& e) {
            threw = true;
            CHECK(std::string(e.what()).find(std::to_string(dtype_off)) != std::string::npos);
        }
        CHECK(threw);
    }
    SUBCASE("trailing bytes") {
        auto b = bytes;
        b.push_back('\0');
        auto p = td.file("trail.mndh");
        spit(p, b);
        CHECK_THROWS_AS(load_container(p), format_error&);
    }
}

TEST_CASE("file hash is stable and content sensitive") {
    temp_dir td;
    auto p1 = td.file("h1.mndh");
    auto p2 = td.file("h2.mndh");
    save_container(p1, sample());
    save_container(p2, sample());
    CHECK(hash_file(p1) == hash_file(p2));

    container c = sample();
    for (auto& e : c.entries)
        if (e.name == "labels") e.i[0] = 1;
    auto p3 = td.file("h3.mndh");
    save_container(p3, c);
    CHECK(hash_file(p1) != hash_file(p3));
}
