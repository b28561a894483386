#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace aircorrect {

/// Streaming SHA-256 (FIPS 180-4). Used for run-manifest content hashes.
class Sha256 {
public:
    Sha256();
    void update(const void* data, std::size_t len);
    /// Finalize and return the lowercase hex digest. The object must not be
    /// updated afterwards.
    std::string hex_digest();

    static std::string of_string(const std::string& s);
    static std::string of_file(const std::filesystem::path& p);

private:
    void process_block(const std::uint8_t* block);

    std::uint32_t h_[8];
    std::uint8_t buffer_[64];
    std::size_t buffered_ = 0;
    std::uint64_t total_bits_ = 0;
};

}  // namespace aircorrect
