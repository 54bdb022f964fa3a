#include "dagan/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "dagan/errors.hpp"

namespace dagan::io {

namespace {

cv::Mat read_or_throw(const std::filesystem::path& path, int flags) {
    cv::Mat mat = cv::imread(path.string(), flags);
    if (mat.empty()) {
        throw DataError("cannot read image: " + path.string());
    }
    return mat;
}

void write_or_throw(const std::filesystem::path& path, const cv::Mat& mat) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    if (!cv::imwrite(path.string(), mat)) {
        throw DataError("cannot write image: " + path.string());
    }
}

torch::Tensor to_u8(const torch::Tensor& values) {
    return (values.detach().to(torch::kFloat).clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).contiguous();
}

}  // namespace

torch::Tensor read_rgb(const std::filesystem::path& path) {
    cv::Mat bgr = read_or_throw(path, cv::IMREAD_COLOR);
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    auto hwc = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
    return hwc.permute({2, 0, 1}).to(torch::kFloat).div(255.0).contiguous();
}

void write_rgb(const std::filesystem::path& path, const torch::Tensor& image) {
    if (image.dim() != 3 || image.size(0) != 3) {
        throw DataError("write_rgb expects [3, H, W], got " + std::to_string(image.dim()) + "-d tensor");
    }
    auto hwc = to_u8(image).permute({1, 2, 0}).contiguous();
    cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr<uint8_t>());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    write_or_throw(path, bgr);
}

torch::Tensor read_mask(const std::filesystem::path& path, int threshold) {
    cv::Mat gray = read_or_throw(path, cv::IMREAD_GRAYSCALE);
    auto hw = torch::from_blob(gray.data, {gray.rows, gray.cols}, torch::kUInt8).clone();
    return hw.ge(threshold).to(torch::kFloat);
}

void write_mask(const std::filesystem::path& path, const torch::Tensor& mask) {
    auto hw = mask.detach().to(torch::kFloat).squeeze();
    if (hw.dim() != 2) {
        throw DataError("write_mask expects a single-channel map");
    }
    auto u8 = (hw.gt(0.5).to(torch::kUInt8) * 255).contiguous();
    cv::Mat mat(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC1, u8.data_ptr<uint8_t>());
    write_or_throw(path, mat);
}

void write_probability(const std::filesystem::path& path, const torch::Tensor& prob) {
    auto hw = prob.detach().to(torch::kFloat).squeeze();
    if (hw.dim() != 2) {
        throw DataError("write_probability expects a single-channel map");
    }
    auto u16 = (hw.clamp(0.0, 1.0) * 65535.0).round().to(torch::kInt32).contiguous();
    cv::Mat mat(static_cast<int>(u16.size(0)), static_cast<int>(u16.size(1)), CV_16UC1);
    auto acc = u16.accessor<int32_t, 2>();
    for (int r = 0; r < mat.rows; ++r) {
        for (int c = 0; c < mat.cols; ++c) {
            mat.at<uint16_t>(r, c) = static_cast<uint16_t>(acc[r][c]);
        }
    }
    write_or_throw(path, mat);
}

torch::Tensor read_probability(const std::filesystem::path& path) {
    cv::Mat mat = read_or_throw(path, cv::IMREAD_UNCHANGED);
    if (mat.type() != CV_16UC1) {
        throw DataError("probability map must be 16-bit grayscale: " + path.string());
    }
    cv::Mat as_float;
    mat.convertTo(as_float, CV_32F, 1.0 / 65535.0);
    return torch::from_blob(as_float.data, {as_float.rows, as_float.cols}, torch::kFloat).clone();
}

void write_color(const std::filesystem::path& path, const torch::Tensor& rgb) {
    auto hwc = rgb.to(torch::kUInt8).contiguous();
    if (hwc.dim() != 3 || hwc.size(2) != 3) {
        throw DataError("write_color expects [H, W, 3]");
    }
    cv::Mat view(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr<uint8_t>());
    cv::Mat bgr;
    cv::cvtColor(view, bgr, cv::COLOR_RGB2BGR);
    write_or_throw(path, bgr);
}

}  // namespace dagan::io
