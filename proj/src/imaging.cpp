#include "madeval/imaging.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <array>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include "madeval/error.hpp"
#include "madeval/text_io.hpp"

namespace madeval {

RasterImage::RasterImage(int width, int height, int channels, std::vector<std::uint8_t> samples)
    : width_(width), height_(height), channels_(channels), samples_(std::move(samples)) {
    if (width < 1 || height < 1) throw Error(Errc::ValidationError, "image dimensions must be >= 1");
    if (channels != 1 && channels != 3) throw Error(Errc::ValidationError, "channels must be 1 or 3");
    if (samples_.size() != static_cast<std::size_t>(width) * height * channels) {
        throw Error(Errc::ValidationError, "sample count does not match dimensions");
    }
}

LumaImage::LumaImage(int width, int height, std::vector<double> samples)
    : width_(width), height_(height), samples_(std::move(samples)) {
    if (width < 1 || height < 1) throw Error(Errc::ValidationError, "image dimensions must be >= 1");
    if (samples_.size() != static_cast<std::size_t>(width) * height) {
        throw Error(Errc::ValidationError, "sample count does not match dimensions");
    }
}

namespace {

RasterImage decode_png(const std::string& bytes, const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw Error(Errc::UnreadableFile, path.string() + ": " + image.message);
    }
    const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
    const bool alpha = (image.format & PNG_FORMAT_FLAG_ALPHA) != 0;
    image.format = gray ? (alpha ? PNG_FORMAT_GA : PNG_FORMAT_GRAY)
                        : (alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB);
    const int channels = gray ? 1 : 3;
    const int stored = channels + (alpha ? 1 : 0);
    std::vector<std::uint8_t> raw(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, raw.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw Error(Errc::UnreadableFile, path.string() + ": " + msg);
    }
    std::vector<std::uint8_t> samples;
    if (!alpha) {
        samples = std::move(raw);
    } else {
        const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
        samples.resize(n * channels);
        for (std::size_t i = 0; i < n; ++i) {
            for (int c = 0; c < channels; ++c) samples[i * channels + c] = raw[i * stored + c];
        }
    }
    return RasterImage(static_cast<int>(image.width), static_cast<int>(image.height), channels,
                       std::move(samples));
}

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

RasterImage decode_jpeg(const std::string& bytes, const std::filesystem::path& path) {
    jpeg_decompress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    std::vector<std::uint8_t> samples;
    int width = 0, height = 0, channels = 0;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw Error(Errc::UnreadableFile, path.string() + ": " + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()),
                 static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.jpeg_color_space == JCS_GRAYSCALE ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);
    width = static_cast<int>(cinfo.output_width);
    height = static_cast<int>(cinfo.output_height);
    channels = cinfo.output_components;
    samples.resize(static_cast<std::size_t>(width) * height * channels);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = samples.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * channels;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return RasterImage(width, height, channels, std::move(samples));
}

}  // namespace

RasterImage load_image(const std::filesystem::path& path) {
    std::string bytes;
    try {
        bytes = text::read_file(path);
    } catch (const Error&) {
        throw Error(Errc::UnreadableFile, "cannot read " + path.string());
    }
    static constexpr std::array<unsigned char, 8> png_sig{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() >= 8 && std::equal(png_sig.begin(), png_sig.end(), bytes.begin(),
                                        [](unsigned char a, char b) { return a == static_cast<unsigned char>(b); })) {
        return decode_png(bytes, path);
    }
    if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xFF &&
        static_cast<unsigned char>(bytes[1]) == 0xD8 && static_cast<unsigned char>(bytes[2]) == 0xFF) {
        return decode_jpeg(bytes, path);
    }
    if (bytes.empty()) throw Error(Errc::UnreadableFile, path.string() + ": empty file");
    throw Error(Errc::UnsupportedFormat, path.string() + ": not a PNG or JPEG file");
}

LumaImage to_luma(const RasterImage& img) {
    const auto px = img.samples();
    const std::size_t n = static_cast<std::size_t>(img.width()) * img.height();
    std::vector<double> out(n);
    if (img.channels() == 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = px[i] / 255.0;
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const double y = 0.299 * px[3 * i] + 0.587 * px[3 * i + 1] + 0.114 * px[3 * i + 2];
            out[i] = std::clamp(y / 255.0, 0.0, 1.0);
        }
    }
    return LumaImage(img.width(), img.height(), std::move(out));
}

namespace {

struct Tap {
    int lo;
    int hi;
    double w;  // weight of `hi`
};

std::vector<Tap> bilinear_taps(int in, int out) {
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        double src = (i + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const int lo = static_cast<int>(src);
        const int hi = std::min(lo + 1, in - 1);
        taps[static_cast<std::size_t>(i)] = {lo, hi, src - lo};
    }
    return taps;
}

}  // namespace

LumaImage resize_bilinear(const LumaImage& img, int width, int height) {
    if (width < 1 || height < 1) throw Error(Errc::ValidationError, "resize target must be >= 1");
    if (width == img.width() && height == img.height()) return img;
    const auto xt = bilinear_taps(img.width(), width);
    const auto yt = bilinear_taps(img.height(), height);
    std::vector<double> out(static_cast<std::size_t>(width) * height);
    for (int y = 0; y < height; ++y) {
        const Tap& ty = yt[static_cast<std::size_t>(y)];
        for (int x = 0; x < width; ++x) {
            const Tap& tx = xt[static_cast<std::size_t>(x)];
            const double top = img.at(tx.lo, ty.lo) * (1.0 - tx.w) + img.at(tx.hi, ty.lo) * tx.w;
            const double bot = img.at(tx.lo, ty.hi) * (1.0 - tx.w) + img.at(tx.hi, ty.hi) * tx.w;
            out[static_cast<std::size_t>(y) * width + x] = top * (1.0 - ty.w) + bot * ty.w;
        }
    }
    return LumaImage(width, height, std::move(out));
}

LumaImage center_crop(const LumaImage& img, int width, int height) {
    if (width < 1 || height < 1 || width > img.width() || height > img.height()) {
        throw Error(Errc::ValidationError, "crop window outside image");
    }
    const int x0 = (img.width() - width) / 2;
    const int y0 = (img.height() - height) / 2;
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(width) * height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) out.push_back(img.at(x0 + x, y0 + y));
    }
    return LumaImage(width, height, std::move(out));
}

FeatureVector thumbnail_feature(const RasterImage& img) {
    FeatureVector fv;
    fv.descriptor_id = kThumbnailDescriptor;
    fv.values.reserve(280);
    const LumaImage thumb = resize_bilinear(to_luma(img), 16, 16);
    fv.values.assign(thumb.samples().begin(), thumb.samples().end());

    std::array<std::array<std::size_t, 8>, 3> hist{};
    const auto px = img.samples();
    const std::size_t n = static_cast<std::size_t>(img.width()) * img.height();
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
            const int ch = img.channels() == 1 ? 0 : c;
            hist[c][px[i * img.channels() + ch] >> 5]++;
        }
    }
    for (const auto& channel : hist) {
        for (std::size_t count : channel) fv.values.push_back(static_cast<double>(count) / n);
    }
    return fv;
}

}  // namespace madeval
