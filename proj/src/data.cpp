#include "dagan/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dagan/errors.hpp"
#include "dagan/image_io.hpp"

namespace dagan::data {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace {

std::string shape_str(const torch::Tensor& t) {
    std::ostringstream os;
    os << t.sizes();
    return os.str();
}

double uniform01(std::mt19937_64& rng) {
    // 53 random bits -> [0, 1); independent of the standard library's distribution implementations.
    return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

int64_t uniform_int(std::mt19937_64& rng, int64_t lo, int64_t hi) {
    if (hi <= lo) {
        return lo;
    }
    const auto span = static_cast<uint64_t>(hi - lo + 1);
    return lo + static_cast<int64_t>(rng() % span);
}

}  // namespace

void validate(const BiTemporalSample& sample) {
    const auto& s = sample;
    if (!s.image_t1.defined() || !s.image_t2.defined() || !s.mask.defined()) {
        throw DataError("sample '" + s.id + "' has undefined arrays");
    }
    if (s.image_t1.dim() != 3 || s.image_t1.size(0) != 3 || s.image_t2.sizes() != s.image_t1.sizes()) {
        throw DataError("sample '" + s.id + "': images must both be [3,H,W], got " + shape_str(s.image_t1) + " and " +
                        shape_str(s.image_t2));
    }
    if (s.mask.dim() != 2 || s.mask.size(0) != s.image_t1.size(1) || s.mask.size(1) != s.image_t1.size(2)) {
        throw DataError("sample '" + s.id + "': mask " + shape_str(s.mask) + " does not match images " +
                        shape_str(s.image_t1));
    }
    auto binary = s.mask.eq(0).logical_or(s.mask.eq(1));
    if (!binary.all().item<bool>()) {
        throw DataError("sample '" + s.id + "': mask is not binary");
    }
    for (const auto* img : {&s.image_t1, &s.image_t2}) {
        if (!torch::isfinite(*img).all().item<bool>() || img->min().item<double>() < 0.0 ||
            img->max().item<double>() > 1.0) {
            throw DataError("sample '" + s.id + "': pixel values must be finite and within [0, 1]");
        }
    }
}

std::string to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split split_from_string(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw DataError("unknown split '" + name + "'");
}

const DatasetManifest& SplitManifests::get(Split split) const {
    switch (split) {
        case Split::val: return val;
        case Split::test: return test;
        case Split::train: break;
    }
    return train;
}

std::vector<BiTemporalSample> tile_pairs(const std::vector<BiTemporalSample>& sources, int64_t tile) {
    if (tile <= 0) {
        throw DataError("tile size must be positive, got " + std::to_string(tile));
    }
    std::vector<BiTemporalSample> tiles;
    for (const auto& src : sources) {
        if (src.image_t1.dim() != 3 || src.image_t2.sizes() != src.image_t1.sizes() || src.mask.dim() != 2 ||
            src.mask.size(0) != src.image_t1.size(1) || src.mask.size(1) != src.image_t1.size(2)) {
            throw DataError("tile_pairs: '" + src.id + "' has mismatched pair dimensions " + shape_str(src.image_t1) +
                            ", " + shape_str(src.image_t2) + ", " + shape_str(src.mask));
        }
        const int64_t h = src.height();
        const int64_t w = src.width();
        if (h % tile != 0 || w % tile != 0) {
            throw DataError("tile_pairs: tile " + std::to_string(tile) + " does not divide '" + src.id + "' of size " +
                            std::to_string(h) + "x" + std::to_string(w));
        }
        for (int64_t r = 0; r < h / tile; ++r) {
            for (int64_t c = 0; c < w / tile; ++c) {
                using torch::indexing::Slice;
                const auto rows = Slice(r * tile, (r + 1) * tile);
                const auto cols = Slice(c * tile, (c + 1) * tile);
                BiTemporalSample t;
                t.image_t1 = src.image_t1.index({Slice(), rows, cols}).clone();
                t.image_t2 = src.image_t2.index({Slice(), rows, cols}).clone();
                t.mask = src.mask.index({rows, cols}).clone();
                t.id = src.id + "_" + std::to_string(r) + "_" + std::to_string(c);
                tiles.push_back(std::move(t));
            }
        }
    }
    return tiles;
}

torch::Tensor stitch_maps(const std::vector<torch::Tensor>& tiles, int64_t grid) {
    if (grid <= 0 || static_cast<int64_t>(tiles.size()) != grid * grid) {
        throw DataError("stitch_maps: expected " + std::to_string(grid * grid) + " tiles, got " +
                        std::to_string(tiles.size()));
    }
    const int64_t wdim = tiles.front().dim() - 1;
    std::vector<torch::Tensor> rows;
    for (int64_t r = 0; r < grid; ++r) {
        std::vector<torch::Tensor> row(tiles.begin() + r * grid, tiles.begin() + (r + 1) * grid);
        rows.push_back(torch::cat(row, wdim));
    }
    return torch::cat(rows, wdim - 1);
}

BiTemporalSample stitch_tiles(const std::vector<BiTemporalSample>& tiles, int64_t grid, const std::string& id) {
    std::vector<torch::Tensor> t1, t2, mask;
    for (const auto& t : tiles) {
        t1.push_back(t.image_t1);
        t2.push_back(t.image_t2);
        mask.push_back(t.mask);
    }
    return {stitch_maps(t1, grid), stitch_maps(t2, grid), stitch_maps(mask, grid), id};
}

std::string source_of(const std::string& tile_id) {
    static const std::regex grid_suffix(R"(^(.*)_\d+_\d+$)");
    std::smatch match;
    if (std::regex_match(tile_id, match, grid_suffix)) {
        return match[1].str();
    }
    return tile_id;
}

SplitManifests split_dataset(const std::vector<SampleRef>& samples, std::array<double, 3> ratios, uint64_t seed) {
    double total = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0) || !std::isfinite(r)) {
            throw DataError("split ratios must be finite and nonnegative");
        }
        total += r;
    }
    if (total <= 0.0) {
        throw DataError("split ratios must not all be zero");
    }
    for (double& r : ratios) {
        r /= total;
    }

    std::set<std::string> unique;
    for (const auto& s : samples) {
        unique.insert(s.source_id);
    }
    std::vector<std::string> sources(unique.begin(), unique.end());
    const auto n = static_cast<int64_t>(sources.size());
    const auto nonzero = std::count_if(ratios.begin(), ratios.end(), [](double r) { return r > 0.0; });
    if (n < nonzero) {
        throw DataError("split_dataset: " + std::to_string(n) + " source images cannot fill " +
                        std::to_string(nonzero) + " nonempty splits");
    }

    std::mt19937_64 rng(seed);
    for (int64_t i = n - 1; i > 0; --i) {
        std::swap(sources[i], sources[uniform_int(rng, 0, i)]);
    }

    // Largest-remainder apportionment.
    std::array<int64_t, 3> counts{};
    std::array<double, 3> remainder{};
    int64_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
        const double exact = ratios[k] * static_cast<double>(n);
        counts[k] = static_cast<int64_t>(std::floor(exact + 1e-9));
        remainder[k] = exact - static_cast<double>(counts[k]);
        assigned += counts[k];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainder[a] > remainder[b]; });
    for (int k = 0; assigned < n; k = (k + 1) % 3) {
        if (ratios[order[k]] > 0.0) {
            ++counts[order[k]];
            ++assigned;
        }
    }
    for (int k = 0; k < 3; ++k) {
        if (ratios[k] > 0.0 && counts[k] == 0) {
            auto donor = std::max_element(counts.begin(), counts.end());
            --*donor;
            counts[k] = 1;
        }
    }

    std::map<std::string, Split> assignment;
    int64_t cursor = 0;
    const std::array<Split, 3> splits{Split::train, Split::val, Split::test};
    for (int k = 0; k < 3; ++k) {
        for (int64_t j = 0; j < counts[k]; ++j) {
            assignment[sources[cursor++]] = splits[k];
        }
    }

    SplitManifests out;
    out.train.split = Split::train;
    out.val.split = Split::val;
    out.test.split = Split::test;
    for (const auto& s : samples) {
        switch (assignment.at(s.source_id)) {
            case Split::train: out.train.samples.push_back(s); break;
            case Split::val: out.val.samples.push_back(s); break;
            case Split::test: out.test.samples.push_back(s); break;
        }
    }
    return out;
}

void AugmentConfig::validate() const {
    if (hflip_p < 0.0 || hflip_p > 1.0 || vflip_p < 0.0 || vflip_p > 1.0) {
        throw ConfigError("augment flip probabilities must lie in [0, 1]");
    }
    if (!(crop_min_scale > 0.0 && crop_min_scale <= 1.0)) {
        throw ConfigError("augment crop_min_scale must lie in (0, 1]");
    }
}

AugmentTransform sample_transform(const AugmentConfig& config, int64_t height, int64_t width, std::mt19937_64& rng) {
    AugmentTransform t;
    t.crop_height = height;
    t.crop_width = width;
    if (!config.enabled) {
        return t;
    }
    t.hflip = uniform01(rng) < config.hflip_p;
    t.vflip = uniform01(rng) < config.vflip_p;
    const double scale = config.crop_min_scale + (1.0 - config.crop_min_scale) * uniform01(rng);
    t.crop_height = std::clamp<int64_t>(std::llround(scale * static_cast<double>(height)), 1, height);
    t.crop_width = std::clamp<int64_t>(std::llround(scale * static_cast<double>(width)), 1, width);
    t.crop_top = uniform_int(rng, 0, height - t.crop_height);
    t.crop_left = uniform_int(rng, 0, width - t.crop_width);
    return t;
}

namespace {

// x: [C, H, W]
torch::Tensor transform_planes(const torch::Tensor& x, const AugmentTransform& t, bool nearest) {
    using torch::indexing::Slice;
    const int64_t h = x.size(1);
    const int64_t w = x.size(2);
    auto out = x.index({Slice(), Slice(t.crop_top, t.crop_top + t.crop_height),
                        Slice(t.crop_left, t.crop_left + t.crop_width)});
    if (t.crop_height != h || t.crop_width != w) {
        auto opts = F::InterpolateFuncOptions().size(std::vector<int64_t>{h, w});
        if (nearest) {
            opts.mode(torch::kNearest);
        } else {
            opts.mode(torch::kBilinear).align_corners(false);
        }
        out = F::interpolate(out.unsqueeze(0), opts).squeeze(0);
    }
    if (t.hflip) {
        out = out.flip({2});
    }
    if (t.vflip) {
        out = out.flip({1});
    }
    return out.contiguous();
}

}  // namespace

torch::Tensor apply_transform_to_mask(const torch::Tensor& mask, const AugmentTransform& transform) {
    return transform_planes(mask.unsqueeze(0), transform, true).squeeze(0);
}

BiTemporalSample apply_transform(const BiTemporalSample& sample, const AugmentTransform& transform) {
    if (transform.crop_top < 0 || transform.crop_left < 0 || transform.crop_height < 1 || transform.crop_width < 1 ||
        transform.crop_top + transform.crop_height > sample.height() ||
        transform.crop_left + transform.crop_width > sample.width()) {
        throw DataError("augment: crop window exceeds sample '" + sample.id + "'");
    }
    BiTemporalSample out;
    out.image_t1 = transform_planes(sample.image_t1, transform, false).clamp(0.0, 1.0);
    out.image_t2 = transform_planes(sample.image_t2, transform, false).clamp(0.0, 1.0);
    out.mask = apply_transform_to_mask(sample.mask, transform);
    out.id = sample.id;
    return out;
}

BiTemporalSample augment(const BiTemporalSample& sample, const AugmentConfig& config, std::mt19937_64& rng) {
    return apply_transform(sample, sample_transform(config, sample.height(), sample.width(), rng));
}

std::vector<BiTemporalSample> make_synthetic_dataset(int64_t n, int64_t size, uint64_t seed,
                                                     const SynthOptions& options) {
    if (n < 1 || size < 16) {
        throw DataError("make_synthetic_dataset requires n >= 1 and size >= 16");
    }
    if (options.min_rects < 0 || options.max_rects < options.min_rects || options.min_static < 0 ||
        options.max_static < options.min_static) {
        throw DataError("make_synthetic_dataset: invalid rectangle count range");
    }
    std::mt19937_64 rng(seed);
    std::vector<BiTemporalSample> out;
    out.reserve(static_cast<size_t>(n));
    constexpr double kPi = 3.14159265358979323846;

    for (int64_t idx = 0; idx < n; ++idx) {
        // Smooth low-frequency background in a muted range plus fine-grained noise.
        std::vector<float> background(static_cast<size_t>(3 * size * size));
        for (int64_t ch = 0; ch < 3; ++ch) {
            const double base = 0.4 + 0.2 * uniform01(rng);
            std::array<double, 6> wave{};
            for (double& v : wave) {
                v = uniform01(rng);
            }
            for (int64_t r = 0; r < size; ++r) {
                for (int64_t c = 0; c < size; ++c) {
                    const double y = static_cast<double>(r) / static_cast<double>(size);
                    const double x = static_cast<double>(c) / static_cast<double>(size);
                    double v = base + 0.06 * std::sin(2 * kPi * (1 + 2 * wave[0]) * x + 2 * kPi * wave[1]) +
                               0.06 * std::sin(2 * kPi * (1 + 2 * wave[2]) * y + 2 * kPi * wave[3]) +
                               0.04 * std::sin(2 * kPi * (2 + 3 * wave[4]) * (x + y) + 2 * kPi * wave[5]) +
                               0.05 * (uniform01(rng) - 0.5);
                    background[static_cast<size_t>((ch * size + r) * size + c)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
        }
        auto t1 = torch::from_blob(background.data(), {3, size, size}, torch::kFloat).clone();
        auto t2 = t1.clone();
        auto mask = torch::zeros({size, size}, torch::kFloat);

        const int64_t min_side = std::max<int64_t>(2, size / 8);
        const int64_t max_side = std::max<int64_t>(min_side, size / 3);
        using torch::indexing::Slice;
        // Draws one rectangle position and colour, returns rows and cols.
        auto paint = [&](const std::vector<torch::Tensor*>& targets) {
            const int64_t rh = uniform_int(rng, min_side, max_side);
            const int64_t rw = uniform_int(rng, min_side, max_side);
            const int64_t top = uniform_int(rng, 0, size - rh);
            const int64_t left = uniform_int(rng, 0, size - rw);
            // Saturated colours keep rectangles well separated from the muted background.
            std::array<float, 3> color{};
            for (float& v : color) {
                const double u = 0.15 * uniform01(rng);
                v = static_cast<float>(uniform01(rng) < 0.5 ? u : 1.0 - u);
            }
            const auto rows = Slice(top, top + rh);
            const auto cols = Slice(left, left + rw);
            for (auto* image : targets) {
                for (int64_t ch = 0; ch < 3; ++ch) {
                    image->index_put_({ch, rows, cols}, color[static_cast<size_t>(ch)]);
                }
            }
            return std::make_pair(rows, cols);
        };

        // Static objects first so a change is never painted over.
        const int64_t statics = uniform_int(rng, options.min_static, options.max_static);
        for (int64_t k = 0; k < statics; ++k) {
            paint({&t1, &t2});
        }
        const int64_t count = uniform_int(rng, options.min_rects, options.max_rects);
        for (int64_t k = 0; k < count; ++k) {
            // An added object appears in T2 only; a removed one exists in T1 only.
            const bool added = uniform01(rng) < 0.5;
            const auto [rows, cols] = paint({added ? &t2 : &t1});
            mask.index_put_({rows, cols}, 1.0f);
        }
        char name[32];
        std::snprintf(name, sizeof(name), "synth%04lld", static_cast<long long>(idx));
        out.push_back({t1.contiguous(), t2.contiguous(), mask, name});
    }
    return out;
}

Batch collate(const std::vector<BiTemporalSample>& samples) {
    if (samples.empty()) {
        throw DataError("collate: empty batch");
    }
    std::vector<torch::Tensor> t1, t2, mask;
    Batch batch;
    for (const auto& s : samples) {
        t1.push_back(s.image_t1);
        t2.push_back(s.image_t2);
        mask.push_back(s.mask.unsqueeze(0));
        batch.ids.push_back(s.id);
    }
    batch.image_t1 = torch::stack(t1);
    batch.image_t2 = torch::stack(t2);
    batch.mask = torch::stack(mask);
    return batch;
}

BiTemporalSample load_sample(const SampleRef& ref) {
    BiTemporalSample s;
    s.image_t1 = io::read_rgb(ref.image_t1);
    s.image_t2 = io::read_rgb(ref.image_t2);
    s.mask = io::read_mask(ref.mask);
    s.id = ref.id;
    validate(s);
    return s;
}

std::vector<SampleRef> scan_dataset_dir(const fs::path& root) {
    const fs::path a = root / "A";
    const fs::path b = root / "B";
    const fs::path label = root / "label";
    for (const auto& dir : {a, b, label}) {
        if (!fs::is_directory(dir)) {
            throw DataError("dataset directory missing: " + dir.string());
        }
    }
    std::vector<SampleRef> refs;
    for (const auto& entry : fs::directory_iterator(a)) {
        if (entry.path().extension() != ".png") {
            continue;
        }
        const std::string id = entry.path().stem().string();
        SampleRef ref{id, id, entry.path(), b / (id + ".png"), label / (id + ".png")};
        if (!fs::exists(ref.image_t2) || !fs::exists(ref.mask)) {
            throw DataError("dataset sample '" + id + "' lacks its B image or label under " + root.string());
        }
        refs.push_back(std::move(ref));
    }
    std::sort(refs.begin(), refs.end(), [](const SampleRef& l, const SampleRef& r) { return l.id < r.id; });
    if (refs.empty()) {
        throw DataError("no samples found under " + a.string());
    }
    return refs;
}

std::vector<BiTemporalSample> load_dataset_dir(const fs::path& root) {
    std::vector<BiTemporalSample> out;
    for (const auto& ref : scan_dataset_dir(root)) {
        out.push_back(load_sample(ref));
    }
    return out;
}

void write_dataset_dir(const fs::path& root, const std::vector<BiTemporalSample>& samples) {
    for (const auto& s : samples) {
        validate(s);
        io::write_rgb(root / "A" / (s.id + ".png"), s.image_t1);
        io::write_rgb(root / "B" / (s.id + ".png"), s.image_t2);
        io::write_mask(root / "label" / (s.id + ".png"), s.mask);
    }
}

void save_manifests(const fs::path& path, const SplitManifests& manifests) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream os(path);
    if (!os) {
        throw DataError("cannot write manifest: " + path.string());
    }
    for (const auto* m : {&manifests.train, &manifests.val, &manifests.test}) {
        for (const auto& s : m->samples) {
            nlohmann::json rec = {{"id", s.id},
                                  {"source", s.source_id},
                                  {"split", to_string(m->split)},
                                  {"tile_size", m->tile_size},
                                  {"a", s.image_t1.string()},
                                  {"b", s.image_t2.string()},
                                  {"label", s.mask.string()}};
            os << rec.dump() << '\n';
        }
    }
}

SplitManifests load_manifests(const fs::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw DataError("cannot read manifest: " + path.string());
    }
    SplitManifests out;
    out.train.split = Split::train;
    out.val.split = Split::val;
    out.test.split = Split::test;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            auto rec = nlohmann::json::parse(line);
            SampleRef ref{rec.at("id").get<std::string>(), rec.at("source").get<std::string>(),
                          rec.at("a").get<std::string>(), rec.at("b").get<std::string>(),
                          rec.at("label").get<std::string>()};
            const Split split = split_from_string(rec.at("split").get<std::string>());
            auto& manifest = split == Split::train ? out.train : split == Split::val ? out.val : out.test;
            manifest.tile_size = rec.value("tile_size", int64_t{0});
            manifest.samples.push_back(std::move(ref));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace dagan::data
