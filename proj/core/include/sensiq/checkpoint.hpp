#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "sensiq/net.hpp"

namespace sensiq {

// Line-oriented text checkpoint (format NNMODEL 1). Numbers use shortest
// round-trip decimals, so save -> load -> save is byte-identical. Files are
// UTF-8 with LF line endings.
std::string checkpoint_to_string(const Network& net);

// ParseError with a line number on malformed input.
Network checkpoint_from_string(std::string_view text);

void save_checkpoint(const Network& net, const std::filesystem::path& path);

Network load_checkpoint(const std::filesystem::path& path);

}  // namespace sensiq
