#pragma once

#include <string>
#include <string_view>

namespace collabrag {

// SHA-256 of the exact input bytes, lowercase hex.
std::string sha256_hex(std::string_view bytes);

// SHA-256 of a file's contents. Throws ErrorCode::io when unreadable.
std::string sha256_file_hex(const std::string& path);

}  // namespace collabrag
