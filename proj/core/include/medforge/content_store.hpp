#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "medforge/datamodel.hpp"

namespace medforge {

// Content-addressed image storage: images/<first-2-hex>/<sha256>.<ext>.
// Refs are relative to the store root. Safe for concurrent put() of the same
// bytes since writes are atomic renames of identical content.
class ContentStore {
public:
    explicit ContentStore(std::filesystem::path root);

    const std::filesystem::path& root() const noexcept { return root_; }

    // Writes the bytes (if not already present) and returns their ref.
    // The extension is inferred from the image signature.
    ImageRef put(std::string_view bytes) const;

    bool exists(const ImageRef& ref) const;
    // Throws std::runtime_error if the ref does not resolve.
    std::string read(const ImageRef& ref) const;
    std::filesystem::path resolve(const ImageRef& ref) const;

    // Looks up a stored image by its digest.
    std::optional<ImageRef> find(std::string_view digest) const;

    static std::string digest_of(const ImageRef& ref);

private:
    std::filesystem::path root_;
};

}  // namespace medforge
