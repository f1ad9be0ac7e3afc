#include "medforge/image.hpp"

#include <cctype>
#include <charconv>

namespace medforge {

ImageFormat sniff_format(std::string_view bytes) {
    if (bytes.size() >= 8 && bytes.substr(0, 8) == std::string_view("\x89PNG\r\n\x1a\n", 8)) return ImageFormat::Png;
    if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xFF &&
        static_cast<unsigned char>(bytes[1]) == 0xD8 && static_cast<unsigned char>(bytes[2]) == 0xFF) {
        return ImageFormat::Jpeg;
    }
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return ImageFormat::Ppm;
    return ImageFormat::Unknown;
}

std::string_view extension_for(ImageFormat f) {
    switch (f) {
        case ImageFormat::Png: return "png";
        case ImageFormat::Jpeg: return "jpg";
        case ImageFormat::Ppm: return "ppm";
        case ImageFormat::Unknown: break;
    }
    return "bin";
}

std::string_view mime_type_for(ImageFormat f) {
    switch (f) {
        case ImageFormat::Png: return "image/png";
        case ImageFormat::Jpeg: return "image/jpeg";
        case ImageFormat::Ppm: return "image/x-portable-pixmap";
        case ImageFormat::Unknown: break;
    }
    return "application/octet-stream";
}

namespace {

class HeaderReader {
public:
    explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

    int next_int() {
        skip_space_and_comments();
        std::size_t start = pos_;
        while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
        int value = 0;
        auto [ptr, ec] = std::from_chars(bytes_.data() + start, bytes_.data() + pos_, value);
        if (ec != std::errc{} || start == pos_) throw DecodeError("ppm: malformed header");
        return value;
    }

    // Exactly one whitespace byte separates the header from the raster.
    std::size_t raster_offset() {
        if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
            throw DecodeError("ppm: missing raster separator");
        }
        return pos_ + 1;
    }

    void skip(std::size_t n) { pos_ += n; }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            char c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

RgbImage decode_ppm(std::string_view bytes) {
    if (sniff_format(bytes) != ImageFormat::Ppm) throw DecodeError("ppm: bad magic");
    HeaderReader r(bytes);
    r.skip(2);
    RgbImage img;
    img.width = r.next_int();
    img.height = r.next_int();
    int maxval = r.next_int();
    if (img.width <= 0 || img.height <= 0) throw DecodeError("ppm: non-positive dimensions");
    if (maxval != 255) throw DecodeError("ppm: only maxval 255 is supported");
    std::size_t offset = r.raster_offset();
    std::size_t need = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) * 3;
    if (bytes.size() < offset + need) throw DecodeError("ppm: truncated raster");
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                      bytes.begin() + static_cast<std::ptrdiff_t>(offset + need));
    return img;
}

std::string encode_ppm(const RgbImage& img) {
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
    return out;
}

void check_decodable(std::string_view bytes) {
    switch (sniff_format(bytes)) {
        case ImageFormat::Ppm:
            (void)decode_ppm(bytes);
            return;
        case ImageFormat::Png:
            // signature + IHDR chunk
            if (bytes.size() < 33) throw DecodeError("png: truncated header");
            return;
        case ImageFormat::Jpeg:
            if (bytes.size() < 4 || static_cast<unsigned char>(bytes[bytes.size() - 2]) != 0xFF ||
                static_cast<unsigned char>(bytes[bytes.size() - 1]) != 0xD9) {
                throw DecodeError("jpeg: missing end-of-image marker");
            }
            return;
        case ImageFormat::Unknown:
            break;
    }
    throw DecodeError("unrecognised image format");
}

}  // namespace medforge
