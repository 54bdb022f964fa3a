#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace dagan::data {

// A co-registered image pair plus its change mask.
//   image_t1, image_t2: float32 [3, H, W] in [0, 1]
//   mask:               float32 [H, W] with values in {0, 1}
struct BiTemporalSample {
    torch::Tensor image_t1;
    torch::Tensor image_t2;
    torch::Tensor mask;
    std::string id;

    int64_t height() const { return mask.size(0); }
    int64_t width() const { return mask.size(1); }
};

// Throws DataError when shapes disagree, the mask is not binary, or pixel
// values are non-finite or outside [0, 1].
void validate(const BiTemporalSample& sample);

enum class Split { train, val, test };
std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct SampleRef {
    std::string id;
    std::string source_id;
    std::filesystem::path image_t1;
    std::filesystem::path image_t2;
    std::filesystem::path mask;
};

struct DatasetManifest {
    Split split = Split::train;
    int64_t tile_size = 0;
    std::vector<SampleRef> samples;
};

struct SplitManifests {
    DatasetManifest train;
    DatasetManifest val;
    DatasetManifest test;

    const DatasetManifest& get(Split split) const;
};

// Cuts every S x S source pair into (S / tile)^2 tiles in row-major order.
// Tile ids are "<source id>_<row>_<col>".
std::vector<BiTemporalSample> tile_pairs(const std::vector<BiTemporalSample>& sources, int64_t tile);

// Inverse of tile_pairs for one source: `tiles` must be the row-major grid of a
// single source image with `grid` tiles per side.
BiTemporalSample stitch_tiles(const std::vector<BiTemporalSample>& tiles, int64_t grid, const std::string& id);

// Stitches single-channel or multi-channel maps laid out row-major.
torch::Tensor stitch_maps(const std::vector<torch::Tensor>& tiles, int64_t grid);

// Source id of a tile id produced by tile_pairs ("abc_1_2" -> "abc"); ids that
// do not carry a grid suffix are their own source.
std::string source_of(const std::string& tile_id);

// Partitions samples at source-image granularity. Counts per split follow
// largest-remainder rounding of the normalized ratios, and every split with a
// nonzero ratio receives at least one source. The shuffle is a pure function
// of (seed, sorted source ids).
SplitManifests split_dataset(const std::vector<SampleRef>& samples, std::array<double, 3> ratios, uint64_t seed);

struct AugmentConfig {
    double hflip_p = 0.5;
    double vflip_p = 0.5;
    double crop_min_scale = 0.8;  // crop side as a fraction of the sample side, in [crop_min_scale, 1]
    bool enabled = true;

    void validate() const;
};

// Geometry applied identically to both images and the mask.
struct AugmentTransform {
    bool hflip = false;
    bool vflip = false;
    int64_t crop_top = 0;
    int64_t crop_left = 0;
    int64_t crop_height = 0;
    int64_t crop_width = 0;
};

AugmentTransform sample_transform(const AugmentConfig& config, int64_t height, int64_t width, std::mt19937_64& rng);

// Images are resized back with bilinear interpolation, the mask with nearest.
BiTemporalSample apply_transform(const BiTemporalSample& sample, const AugmentTransform& transform);
torch::Tensor apply_transform_to_mask(const torch::Tensor& mask, const AugmentTransform& transform);

BiTemporalSample augment(const BiTemporalSample& sample, const AugmentConfig& config, std::mt19937_64& rng);

struct SynthOptions {
    int64_t min_rects = 1;
    int64_t max_rects = 3;
    // unchanged rectangles painted identically into both images
    int64_t min_static = 1;
    int64_t max_static = 2;
};

// Textured T1 backgrounds with static rectangles; T2 differs from T1 exactly
// inside added or removed rectangles, and the mask marks those rectangles.
std::vector<BiTemporalSample> make_synthetic_dataset(int64_t n, int64_t size, uint64_t seed,
                                                     const SynthOptions& options = {});

// Stacks samples into [B,3,H,W] x2 and [B,1,H,W].
struct Batch {
    torch::Tensor image_t1;
    torch::Tensor image_t2;
    torch::Tensor mask;
    std::vector<std::string> ids;
};
Batch collate(const std::vector<BiTemporalSample>& samples);

// ----- on-disk layout: <root>/{A,B,label}/<id>.png -----

// Masks are binarized at 128.
BiTemporalSample load_sample(const SampleRef& ref);
std::vector<SampleRef> scan_dataset_dir(const std::filesystem::path& root);
std::vector<BiTemporalSample> load_dataset_dir(const std::filesystem::path& root);
void write_dataset_dir(const std::filesystem::path& root, const std::vector<BiTemporalSample>& samples);

// One JSON record per line: {"id", "source", "split", "a", "b", "label"}.
void save_manifests(const std::filesystem::path& path, const SplitManifests& manifests);
SplitManifests load_manifests(const std::filesystem::path& path);

}  // namespace dagan::data
