#include "t2p/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>

#include "t2p/errors.hpp"

namespace t2p {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::vector<std::uint8_t> to_bytes(const torch::Tensor& frame, int& height, int& width) {
    if (frame.dim() != 3 || frame.size(0) != 3) {
        throw std::invalid_argument("expected a [3, H, W] frame");
    }
    height = static_cast<int>(frame.size(1));
    width = static_cast<int>(frame.size(2));
    auto hwc = ((frame.detach().to(torch::kFloat32).clamp(-1, 1) + 1.0f) * 127.5f)
                   .round()
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();
    const auto* p = hwc.data_ptr<std::uint8_t>();
    return {p, p + hwc.numel()};
}

}  // namespace

void write_png(const std::filesystem::path& path, const torch::Tensor& frame) {
    int height = 0, width = 0;
    auto bytes = to_bytes(frame, height, width);

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y) {
        png_write_row(png, bytes.data() + static_cast<std::size_t>(y) * width * 3);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

torch::Tensor read_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw FormatError("cannot open image " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    std::vector<std::uint8_t> bytes;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("libpng failed reading " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    if (png_get_bit_depth(png, info) != 8 || png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("expected 8-bit RGB PNG: " + path.string());
    }
    bytes.resize(static_cast<std::size_t>(width) * height * 3);
    for (int y = 0; y < height; ++y) {
        png_read_row(png, bytes.data() + static_cast<std::size_t>(y) * width * 3, nullptr);
    }
    png_destroy_read_struct(&png, &info, nullptr);

    auto hwc = torch::from_blob(bytes.data(), {height, width, 3}, torch::kUInt8).clone();
    return hwc.permute({2, 0, 1}).to(torch::kFloat32).div(127.5f).sub(1.0f).contiguous();
}

torch::Tensor tile_frames(const std::vector<torch::Tensor>& frames, int columns) {
    if (frames.empty()) throw std::invalid_argument("tile_frames: no frames");
    const int64_t h = frames[0].size(1), w = frames[0].size(2);
    const int cols = std::max(1, std::min<int>(columns, static_cast<int>(frames.size())));
    const int rows = static_cast<int>((frames.size() + cols - 1) / cols);
    constexpr int64_t gap = 2;
    auto out = torch::ones({3, rows * (h + gap) - gap, cols * (w + gap) - gap});
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const int64_t r = static_cast<int64_t>(i) / cols, c = static_cast<int64_t>(i) % cols;
        out.slice(1, r * (h + gap), r * (h + gap) + h).slice(2, c * (w + gap), c * (w + gap) + w)
            .copy_(frames[i].detach().to(torch::kFloat32));
    }
    return out;
}

void write_gif(const std::filesystem::path& path, const std::vector<torch::Tensor>& frames, int delay_cs) {
    if (frames.empty()) throw std::invalid_argument("write_gif: no frames");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());

    int height = 0, width = 0;
    to_bytes(frames[0], height, width);
    auto put = [&](std::uint8_t b) { out.put(static_cast<char>(b)); };
    auto put16 = [&](int v) {
        put(static_cast<std::uint8_t>(v & 0xff));
        put(static_cast<std::uint8_t>((v >> 8) & 0xff));
    };

    out.write("GIF89a", 6);
    put16(width);
    put16(height);
    put(0xF7);  // global table, 8 bits/channel, 256 entries
    put(0);
    put(0);
    for (int i = 0; i < 256; ++i) {
        const int r = i / 42, g = (i / 6) % 7, b = i % 6;
        if (i < 252) {
            put(static_cast<std::uint8_t>(r * 51));
            put(static_cast<std::uint8_t>(g * 255 / 6));
            put(static_cast<std::uint8_t>(b * 51));
        } else {
            put(0);
            put(0);
            put(0);
        }
    }
    // NETSCAPE looping extension.
    const std::uint8_t loop[] = {0x21, 0xFF, 0x0B, 'N', 'E', 'T', 'S', 'C', 'A', 'P', 'E', '2', '.', '0',
                                 0x03, 0x01, 0x00, 0x00, 0x00};
    out.write(reinterpret_cast<const char*>(loop), sizeof(loop));

    for (const auto& frame : frames) {
        int fh = 0, fw = 0;
        auto bytes = to_bytes(frame, fh, fw);
        if (fh != height || fw != width) throw std::invalid_argument("write_gif: frame size mismatch");

        put(0x21);
        put(0xF9);
        put(4);
        put(0);
        put16(delay_cs);
        put(0);
        put(0);

        put(0x2C);
        put16(0);
        put16(0);
        put16(width);
        put16(height);
        put(0);
        put(8);  // LZW minimum code size

        // Literal-only LZW stream: 9-bit codes with a clear code before the
        // dictionary would grow past 9 bits.
        std::vector<std::uint8_t> data;
        std::uint32_t acc = 0;
        int nbits = 0;
        auto emit = [&](int code) {
            acc |= static_cast<std::uint32_t>(code) << nbits;
            nbits += 9;
            while (nbits >= 8) {
                data.push_back(static_cast<std::uint8_t>(acc & 0xff));
                acc >>= 8;
                nbits -= 8;
            }
        };
        constexpr int kClear = 256, kEnd = 257, kRun = 250;
        int since_clear = kRun;
        for (std::size_t i = 0; i < bytes.size(); i += 3) {
            if (since_clear == kRun) {
                emit(kClear);
                since_clear = 0;
            }
            const int r = (bytes[i] * 5 + 127) / 255;
            const int g = (bytes[i + 1] * 6 + 127) / 255;
            const int b = (bytes[i + 2] * 5 + 127) / 255;
            emit(r * 42 + g * 6 + b);
            ++since_clear;
        }
        emit(kEnd);
        if (nbits > 0) data.push_back(static_cast<std::uint8_t>(acc & 0xff));

        for (std::size_t pos = 0; pos < data.size(); pos += 255) {
            const std::size_t n = std::min<std::size_t>(255, data.size() - pos);
            put(static_cast<std::uint8_t>(n));
            out.write(reinterpret_cast<const char*>(data.data() + pos), static_cast<std::streamsize>(n));
        }
        put(0);
    }
    put(0x3B);
}

}  // namespace t2p
