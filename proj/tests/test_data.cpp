#include "doctest_torch.hpp"

#include <set>

#include "dagan/data.hpp"
#include "dagan/errors.hpp"
#include "support.hpp"

using namespace dagan;
using namespace dagan::data;
using torch::indexing::Slice;

namespace {

BiTemporalSample blank_pair(int64_t size, const std::string& id) {
    BiTemporalSample s;
    s.image_t1 = torch::rand({3, size, size});
    s.image_t2 = torch::rand({3, size, size});
    s.mask = torch::zeros({size, size});
    s.id = id;
    return s;
}

std::vector<SampleRef> refs_for(int n) {
    std::vector<SampleRef> refs;
    for (int i = 0; i < n; ++i) {
        const std::string id = "src" + std::to_string(100 + i);
        refs.push_back({id, id, id + "_a.png", id + "_b.png", id + "_m.png"});
    }
    return refs;
}

std::set<std::string> ids_of(const DatasetManifest& m) {
    std::set<std::string> ids;
    for (const auto& r : m.samples) {
        ids.insert(r.id);
    }
    return ids;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("a 1024 pair cut into 256 tiles gives 16 tiles") {
    torch::manual_seed(1);
    const auto src = blank_pair(1024, "big");
    const auto tiles = tile_pairs({src}, 256);
    REQUIRE(tiles.size() == 16);
    for (const auto& t : tiles) {
        CHECK(t.image_t1.sizes() == torch::IntArrayRef({3, 256, 256}));
        CHECK(t.mask.sizes() == torch::IntArrayRef({256, 256}));
    }
    CHECK(tiles[0].id == "big_0_0");
    CHECK(tiles[5].id == "big_1_1");
    CHECK(tiles[15].id == "big_3_3");
    // tile (1, 2) covers rows 256..511, cols 512..767
    CHECK(torch::equal(tiles[6].image_t2, src.image_t2.index({Slice(), Slice(256, 512), Slice(512, 768)})));
}

TEST_CASE("tiling a pair at its own size is the identity") {
    torch::manual_seed(2);
    const auto src = blank_pair(256, "one");
    const auto tiles = tile_pairs({src}, 256);
    REQUIRE(tiles.size() == 1);
    CHECK(torch::equal(tiles[0].image_t1, src.image_t1));
    CHECK(torch::equal(tiles[0].image_t2, src.image_t2));
    CHECK(torch::equal(tiles[0].mask, src.mask));
}

TEST_CASE("quadrant mask lands only in the top-left tile") {
    auto src = blank_pair(512, "quad");
    src.mask.index_put_({Slice(0, 256), Slice(0, 256)}, 1.0);
    const auto tiles = tile_pairs({src}, 256);
    REQUIRE(tiles.size() == 4);
    CHECK(tiles[0].mask.min().item<float>() == 1.0f);
    for (size_t i = 1; i < 4; ++i) {
        CHECK(tiles[i].mask.max().item<float>() == 0.0f);
    }
}

TEST_CASE("tiling rejects non-divisible sizes and mismatched pairs") {
    CHECK_THROWS_AS(tile_pairs({blank_pair(300, "odd")}, 256), DataError);
    auto bad = blank_pair(256, "bad");
    bad.image_t2 = torch::rand({3, 128, 128});
    CHECK_THROWS_AS(tile_pairs({bad}, 128), DataError);
}

TEST_CASE("tiles stitch back to the source") {
    torch::manual_seed(3);
    auto src = blank_pair(192, "st");
    src.mask = (torch::rand({192, 192}) > 0.5).to(torch::kFloat);
    const auto tiles = tile_pairs({src}, 64);
    const auto back = stitch_tiles(tiles, 3, "st");
    CHECK(torch::equal(back.image_t1, src.image_t1));
    CHECK(torch::equal(back.image_t2, src.image_t2));
    CHECK(torch::equal(back.mask, src.mask));
    CHECK(source_of("st_2_1") == "st");
    CHECK(source_of("plain") == "plain");
}

TEST_CASE("10 sources split 7:1:2") {
    const auto m = split_dataset(refs_for(10), {0.7, 0.1, 0.2}, 42);
    CHECK(m.train.samples.size() == 7);
    CHECK(m.val.samples.size() == 1);
    CHECK(m.test.samples.size() == 2);
    std::set<std::string> all;
    for (const auto* part : {&m.train, &m.val, &m.test}) {
        for (const auto& id : ids_of(*part)) {
            CHECK(all.insert(id).second);
        }
    }
    CHECK(all.size() == 10);
}

TEST_CASE("a single source with ratios (1,0,0) goes to train") {
    const auto m = split_dataset(refs_for(1), {1.0, 0.0, 0.0}, 0);
    CHECK(m.train.samples.size() == 1);
    CHECK(m.val.samples.empty());
    CHECK(m.test.samples.empty());
}

TEST_CASE("split is a pure function of the seed") {
    const auto a = split_dataset(refs_for(20), {0.5, 0.25, 0.25}, 9);
    const auto b = split_dataset(refs_for(20), {0.5, 0.25, 0.25}, 9);
    CHECK(ids_of(a.train) == ids_of(b.train));
    CHECK(ids_of(a.val) == ids_of(b.val));
    CHECK(ids_of(a.test) == ids_of(b.test));
    CHECK(a.train.samples.size() == 10);
    CHECK(a.val.samples.size() == 5);
}

TEST_CASE("tiles of one source never straddle splits") {
    std::vector<SampleRef> refs;
    for (int s = 0; s < 5; ++s) {
        for (int t = 0; t < 4; ++t) {
            const std::string src = "img" + std::to_string(s);
            refs.push_back({src + "_0_" + std::to_string(t), src, "a", "b", "m"});
        }
    }
    const auto m = split_dataset(refs, {0.6, 0.2, 0.2}, 5);
    std::set<std::string> train_sources;
    for (const auto& r : m.train.samples) {
        train_sources.insert(r.source_id);
    }
    for (const auto* part : {&m.val, &m.test}) {
        for (const auto& r : part->samples) {
            CHECK(train_sources.count(r.source_id) == 0);
        }
    }
    CHECK(m.train.samples.size() + m.val.samples.size() + m.test.samples.size() == refs.size());
}

TEST_CASE("too few sources for the nonzero splits is rejected") {
    CHECK_THROWS_AS(split_dataset(refs_for(2), {0.7, 0.1, 0.2}, 0), DataError);
}

TEST_CASE("horizontal flip twice is the identity") {
    torch::manual_seed(4);
    auto s = blank_pair(32, "f");
    s.mask = (torch::rand({32, 32}) > 0.7).to(torch::kFloat);
    AugmentTransform t;
    t.hflip = true;
    t.crop_height = t.crop_width = 32;
    const auto twice = apply_transform(apply_transform(s, t), t);
    CHECK(torch::equal(twice.image_t1, s.image_t1));
    CHECK(torch::equal(twice.image_t2, s.image_t2));
    CHECK(torch::equal(twice.mask, s.mask));
}

TEST_CASE("horizontal flip moves pixel (r, c) to (r, W-1-c)") {
    const int64_t h = 10, w = 17, r = 3, c = 4;
    auto mask = torch::zeros({h, w});
    mask.index_put_({r, c}, 1.0);
    AugmentTransform t;
    t.hflip = true;
    t.crop_height = h;
    t.crop_width = w;
    const auto out = apply_transform_to_mask(mask, t);
    CHECK(out.sum().item<float>() == 1.0f);
    CHECK(out.index({r, w - 1 - c}).item<float>() == 1.0f);
}

TEST_CASE("a full-size crop is the identity") {
    torch::manual_seed(5);
    const auto s = blank_pair(48, "c");
    AugmentTransform t;
    t.crop_height = t.crop_width = 48;
    const auto out = apply_transform(s, t);
    CHECK(torch::equal(out.image_t1, s.image_t1));
    CHECK(torch::equal(out.mask, s.mask));
}

TEST_CASE("augmentation applies one geometry to both images and the mask") {
    auto data = make_synthetic_dataset(4, 64, 11);
    std::mt19937_64 rng(3);
    AugmentConfig cfg;
    for (const auto& s : data) {
        const auto t = sample_transform(cfg, 64, 64, rng);
        const auto a = apply_transform(s, t);
        validate(a);
        // A pair whose T2 is a copy of T1 stays identical under augmentation.
        BiTemporalSample same{s.image_t1, s.image_t1.clone(), s.mask, s.id};
        const auto b = apply_transform(same, t);
        CHECK(torch::equal(b.image_t1, b.image_t2));
        CHECK(torch::equal(b.image_t1, a.image_t1));
        // The mask is moved exactly like a one-channel image under nearest resampling.
        CHECK(torch::equal(a.mask, apply_transform_to_mask(s.mask, t)));
    }
    std::mt19937_64 r1(8), r2(8);
    const auto x = augment(data[0], cfg, r1);
    const auto y = augment(data[0], cfg, r2);
    CHECK(torch::equal(x.image_t1, y.image_t1));
    CHECK(torch::equal(x.mask, y.mask));
}

TEST_CASE("flips and crop move the mask and images together") {
    auto s = make_synthetic_dataset(1, 64, 12)[0];
    AugmentTransform t;
    t.hflip = true;
    t.vflip = true;
    t.crop_height = t.crop_width = 64;
    const auto a = apply_transform(s, t);
    CHECK(torch::equal(a.mask, s.mask.flip({0, 1})));
    CHECK(torch::equal(a.image_t2, s.image_t2.flip({1, 2})));
}

TEST_CASE("synthetic dataset: valid samples with both classes") {
    const auto data = make_synthetic_dataset(16, 64, 0);
    REQUIRE(data.size() == 16);
    for (const auto& s : data) {
        validate(s);
        const double area = s.mask.mean().item<double>();
        CHECK(area > 0.0);
        CHECK(area < 1.0);
        // T1 and T2 agree exactly outside the mask and differ inside it.
        const auto differs = ((s.image_t1 - s.image_t2).abs().sum(0) > 0).to(torch::kFloat);
        CHECK(torch::equal(differs * (1 - s.mask), torch::zeros_like(s.mask)));
        CHECK(differs.sum().item<double>() > 0.5 * s.mask.sum().item<double>());
    }
}

TEST_CASE("synthetic dataset is bit-identical for a fixed seed") {
    const auto a = make_synthetic_dataset(3, 64, 77);
    const auto b = make_synthetic_dataset(3, 64, 77);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(torch::equal(a[i].image_t1, b[i].image_t1));
        CHECK(torch::equal(a[i].image_t2, b[i].image_t2));
        CHECK(torch::equal(a[i].mask, b[i].mask));
        CHECK(a[i].id == b[i].id);
    }
}

TEST_CASE("no rectangles means no change") {
    const auto data = make_synthetic_dataset(1, 64, 5, SynthOptions{0, 0});
    CHECK(data[0].mask.max().item<float>() == 0.0f);
    CHECK(torch::equal(data[0].image_t1, data[0].image_t2));
}

TEST_CASE("static rectangles appear in both images and never in the mask") {
    const auto data = make_synthetic_dataset(4, 64, 6, SynthOptions{0, 0, 2, 2});
    for (const auto& s : data) {
        CHECK(s.mask.max().item<float>() == 0.0f);
        CHECK(torch::equal(s.image_t1, s.image_t2));
        // saturated in every channel: only rectangles reach that range
        const auto saturated = ((s.image_t1 < 0.16) | (s.image_t1 > 0.84)).all(0);
        CHECK(saturated.sum().item<int64_t>() >= 8 * 8);
    }
    CHECK_THROWS_AS(make_synthetic_dataset(1, 64, 6, SynthOptions{0, 0, 2, 1}), DataError);
}

TEST_CASE("collate stacks samples") {
    const auto data = make_synthetic_dataset(3, 64, 1);
    const auto batch = collate(data);
    CHECK(batch.image_t1.sizes() == torch::IntArrayRef({3, 3, 64, 64}));
    CHECK(batch.mask.sizes() == torch::IntArrayRef({3, 1, 64, 64}));
    CHECK(batch.ids.size() == 3);
    CHECK_THROWS_AS(collate({}), DataError);
}

TEST_CASE("dataset directory and manifests round-trip") {
    const auto dir = testing::scratch_dir("data_roundtrip");
    const auto data = make_synthetic_dataset(5, 64, 2);
    write_dataset_dir(dir / "ds", data);
    const auto loaded = load_dataset_dir(dir / "ds");
    REQUIRE(loaded.size() == 5);
    for (size_t i = 0; i < 5; ++i) {
        CHECK(loaded[i].id == data[i].id);
        CHECK(torch::equal(loaded[i].mask, data[i].mask));
        // 8-bit PNG quantization.
        CHECK((loaded[i].image_t1 - data[i].image_t1).abs().max().item<float>() <= 0.5f / 255.0f + 1e-6f);
    }

    auto m = split_dataset(scan_dataset_dir(dir / "ds"), {0.6, 0.2, 0.2}, 1);
    m.train.tile_size = m.val.tile_size = m.test.tile_size = 64;
    save_manifests(dir / "manifest.jsonl", m);
    const auto back = load_manifests(dir / "manifest.jsonl");
    CHECK(ids_of(back.train) == ids_of(m.train));
    CHECK(ids_of(back.val) == ids_of(m.val));
    CHECK(ids_of(back.test) == ids_of(m.test));
    CHECK(back.test.tile_size == 64);
    CHECK(back.train.samples.front().image_t1 == m.train.samples.front().image_t1);
}

TEST_CASE("missing dataset directories are reported") {
    const auto dir = testing::scratch_dir("data_missing");
    CHECK_THROWS_AS(scan_dataset_dir(dir / "nope"), DataError);
}

}  // TEST_SUITE
