#pragma once

#include <string>
#include <vector>

namespace sspl {

/// Binary single-channel pixmap (P5 payload); throws with the path on failure.
void write_gray_pixmap(const std::string& path, int width, int height,
                       const std::vector<uint8_t>& gray);

/// Binary RGB pixmap (P6).
void write_rgb_pixmap(const std::string& path, int width, int height,
                      const std::vector<uint8_t>& rgb);

} // namespace sspl
