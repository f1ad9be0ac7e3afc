#include "medforge/content_store.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "medforge/digest.hpp"
#include "medforge/image.hpp"

namespace medforge {

namespace fs = std::filesystem;

ContentStore::ContentStore(fs::path root) : root_(std::move(root)) {}

ImageRef ContentStore::put(std::string_view bytes) const {
    if (bytes.empty()) throw std::invalid_argument("empty input");
    std::string digest = sha256_hex(bytes);
    std::string ext(extension_for(sniff_format(bytes)));
    ImageRef ref{"images/" + digest.substr(0, 2) + "/" + digest + "." + ext};
    fs::path target = resolve(ref);
    if (!fs::exists(target)) write_file_atomic(target, bytes);
    return ref;
}

bool ContentStore::exists(const ImageRef& ref) const {
    return !ref.empty() && fs::is_regular_file(resolve(ref));
}

std::string ContentStore::read(const ImageRef& ref) const {
    fs::path p = resolve(ref);
    std::ifstream in(p, std::ios::binary);
    if (ref.empty() || !in) throw std::runtime_error("unresolvable image ref \"" + ref.path + "\"");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path ContentStore::resolve(const ImageRef& ref) const {
    fs::path p(ref.path);
    return p.is_absolute() ? p : root_ / p;
}

std::optional<ImageRef> ContentStore::find(std::string_view digest) const {
    if (digest.size() < 3) return std::nullopt;
    for (char c : digest) {
        if (!std::isxdigit(static_cast<unsigned char>(c))) return std::nullopt;
    }
    fs::path dir = root_ / "images" / std::string(digest.substr(0, 2));
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) return std::nullopt;
    for (const auto& entry : fs::directory_iterator(dir, ec)) {
        if (entry.path().stem() == digest) {
            return ImageRef{"images/" + std::string(digest.substr(0, 2)) + "/" + entry.path().filename().string()};
        }
    }
    return std::nullopt;
}

std::string ContentStore::digest_of(const ImageRef& ref) {
    return fs::path(ref.path).stem().string();
}

}  // namespace medforge
