#include "sspl/ppm.hpp"

#include <fstream>

#include "sspl/errors.hpp"

namespace sspl {

namespace {
void write_pixmap(const std::string& path, const char* tag, int width, int height, int channels,
                  const std::vector<uint8_t>& data) {
    if (static_cast<size_t>(width) * height * channels != data.size())
        throw UsageError("pixmap: payload size does not match dimensions for " + path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("pixmap: cannot open " + path);
    out << tag << "\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
    if (!out) throw UsageError("pixmap: write failed for " + path);
}
} // namespace

void write_gray_pixmap(const std::string& path, int width, int height,
                       const std::vector<uint8_t>& gray) {
    write_pixmap(path, "P5", width, height, 1, gray);
}

void write_rgb_pixmap(const std::string& path, int width, int height,
                      const std::vector<uint8_t>& rgb) {
    write_pixmap(path, "P6", width, height, 3, rgb);
}

} // namespace sspl
