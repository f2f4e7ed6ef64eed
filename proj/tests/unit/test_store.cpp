#include <doctest.h>

#include <set>

#include <fmt/format.h>

#include "groundkit/store.hpp"
#include "groundkit/util.hpp"
#include "support/test_support.hpp"

using namespace groundkit;
using groundkit::testing::TempDir;

namespace {

DatasetManifest small_manifest(const TempDir& dir, int n_assets, int samples_per_asset) {
    DatasetManifest m;
    m.name = "fixture";
    m.provenance = {"run-1", 7, kToolVersion};
    m.base_dir = dir.path();
    for (int i = 0; i < n_assets; ++i) {
        const auto rel = fmt::format("images/shot{}.png", i);
        groundkit::testing::write_png(dir / rel, groundkit::testing::synthetic_screenshot(320, 200, i));
        auto a = groundkit::testing::asset_for(dir.path(), rel, i % 2 ? "Task Manager" : "Command Prompt");
        for (int k = 0; k < samples_per_asset; ++k) {
            GroundingSample s;
            s.asset_id = a.id;
            s.target = quantize_box(BoundingBox::make(0.1 * k, 0.1, 0.1 * k + 0.05, 0.2));
            s.direction = k % 2 ? Direction::Reverse : Direction::Forward;
            s.instruction = fmt::format("press button {}", k);
            s.category = a.app_category;
            s.sample_id = make_sample_id(a.content_hash, s.target, s.direction);
            m.samples.push_back(s);
        }
        m.assets.push_back(a);
    }
    return m;
}

} // namespace

TEST_CASE("manifest round-trip and canonical bytes") {
    TempDir dir;
    auto m = small_manifest(dir, 2, 2);
    const auto path = dir / "ds.manifest";
    write_manifest(m, path);
    auto back = read_manifest(path);
    CHECK(back == m);
    CHECK(back.samples.size() == 4);

    // Record order in memory does not matter.
    std::reverse(m.assets.begin(), m.assets.end());
    std::reverse(m.samples.begin(), m.samples.end());
    CHECK(serialize_manifest(m) == read_text_file(path));

    write_manifest(back, dir / "again.manifest");
    CHECK(read_text_file(dir / "again.manifest") == read_text_file(path));
}

TEST_CASE("manifest parse errors") {
    TempDir dir;
    auto m = small_manifest(dir, 2, 2);
    auto text = serialize_manifest(m);

    SUBCASE("future version") {
        auto future = text;
        future.replace(future.find("\"format_version\":1"), 18, "\"format_version\":9");
        try {
            parse_manifest(future);
            FAIL("expected throw");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::UnsupportedVersion);
        }
    }
    SUBCASE("truncated final line names the line") {
        auto cut = text.substr(0, text.size() - 20);
        try {
            parse_manifest(cut);
            FAIL("expected throw");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::ParseError);
            CHECK(std::string(e.what()).find("line 7") != std::string::npos);
        }
    }
    SUBCASE("missing record detected from header counts") {
        auto lines = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
        CHECK_THROWS_AS(parse_manifest(lines), Error);
    }
    SUBCASE("garbage line") {
        CHECK_THROWS_AS(parse_manifest(text + "{not json\n"), Error);
    }
}

TEST_CASE("privacy-flagged assets are never written") {
    TempDir dir;
    auto m = small_manifest(dir, 2, 2);
    m.assets[0].privacy_flag = true;
    const auto back = parse_manifest(serialize_manifest(m));
    CHECK(back.assets.size() == 1);
    CHECK(back.samples.size() == 2);
    for (const auto& s : back.samples) CHECK(s.asset_id == m.assets[1].id);
}

TEST_CASE("validate_dataset") {
    TempDir dir;
    auto m = small_manifest(dir, 2, 2);

    SUBCASE("clean manifest") { CHECK(validate_dataset(m).ok()); }

    SUBCASE("inverted target in a file is one violation citing the sample") {
        auto text = serialize_manifest(m);
        const auto pos = text.find("\"target\":[");
        const auto end = text.find(']', pos);
        text.replace(pos, end - pos + 1, "\"target\":[0.600000,0.100000,0.200000,0.200000]");
        write_file_atomic(dir / "bad.manifest", text);
        const auto lenient = read_manifest(dir / "bad.manifest", ReadMode::Lenient);
        const auto report = validate_dataset(lenient);
        REQUIRE(report.violations.size() == 1);
        CHECK(report.violations[0].code == "invalid-target");
        CHECK(report.violations[0].subject_kind == "sample");
        CHECK(report.violations[0].subject_id.rfind("s-", 0) == 0);
        CHECK_THROWS_AS(read_manifest(dir / "bad.manifest"), Error);
    }

    SUBCASE("dims mismatch") {
        m.assets[1].width_px += 1;
        const auto report = validate_dataset(m);
        REQUIRE(report.violations.size() == 1);
        CHECK(report.violations[0].code == "dims-mismatch");
        CHECK(report.violations[0].subject_id == m.assets[1].id);
    }

    SUBCASE("dangling reference, missing image, empty instruction") {
        m.samples[0].asset_id = "a-nope";
        m.samples[2].instruction = "  ";
        std::filesystem::remove(dir / m.assets[0].image_path);
        const auto report = validate_dataset(m);
        std::set<std::string> codes;
        for (const auto& v : report.violations) codes.insert(v.code);
        CHECK(codes == std::set<std::string>{"dangling-asset", "unreadable-image", "empty-instruction"});
        CHECK(report.summary().find("dangling-asset") != std::string::npos);
        CHECK(report.to_json()["ok"] == false);
    }
}

TEST_CASE("split_dataset partitions assets deterministically") {
    TempDir dir;
    auto m = small_manifest(dir, 10, 2);
    const auto a = split_dataset(m, {{"train", 0.8}, {"test", 0.2}}, 7);
    const auto b = split_dataset(m, {{"train", 0.8}, {"test", 0.2}}, 7);
    CHECK(a.splits.at("train").assets.size() == 8);
    CHECK(a.splits.at("test").assets.size() == 2);
    CHECK(a.splits.at("train") == b.splits.at("train"));
    CHECK(a.warnings.empty());

    std::set<std::string> seen;
    std::size_t samples = 0;
    for (const auto& [name, part] : a.splits) {
        std::set<std::string> ids;
        for (const auto& asset : part.assets) {
            CHECK(seen.insert(asset.id).second);
            ids.insert(asset.id);
        }
        for (const auto& s : part.samples) CHECK(ids.count(s.asset_id) == 1);
        samples += part.samples.size();
    }
    CHECK(seen.size() == 10);
    CHECK(samples == m.samples.size());

    CHECK_THROWS_AS(split_dataset(m, {{"a", 0.5}, {"b", 0.6}}, 7), Error);
    CHECK_THROWS_AS(split_dataset(m, {{"a", -0.5}, {"b", 1.5}}, 7), Error);

    auto one = small_manifest(dir, 1, 1);
    const auto tiny = split_dataset(one, {{"train", 0.8}, {"test", 0.2}}, 7);
    CHECK(tiny.splits.at("train").assets.size() == 1);
    CHECK(tiny.splits.at("test").assets.empty());
    CHECK(tiny.warnings.size() == 1);
}

TEST_CASE("dataset_stats") {
    TempDir dir;
    DatasetManifest empty;
    const auto z = dataset_stats(empty);
    CHECK(z.assets == 0);
    CHECK(z.samples == 0);
    CHECK(z.mean_samples_per_asset == 0.0);

    auto m = small_manifest(dir, 3, 2);
    const auto st = dataset_stats(m);
    CHECK(st.assets == 3);
    CHECK(st.samples == 6);
    CHECK(st.mean_samples_per_asset == 2.0);
    CHECK(st.per_direction.at("forward") == 3);
    CHECK(st.per_category.front().first == "Command Prompt");
    CHECK(st.per_category.front().second == 4);

    DatasetManifest big;
    for (int i = 0; i < 1052; ++i) {
        GroundingSample s;
        s.sample_id = fmt::format("s{}", i);
        big.samples.push_back(s);
    }
    CHECK(dataset_stats(big).samples == 1052);
}
