#include "vlmkit/util/image.hpp"

#include <fstream>
#include <string>

#include "vlmkit/error.hpp"

namespace vlmkit::util {

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    return tok;
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open image: " + path.string());

    const std::string magic = next_token(f);
    int channels = 0;
    if (magic == "P5") {
        channels = 1;
    } else if (magic == "P6") {
        channels = 3;
    } else {
        throw DataError("unsupported image format '" + magic + "' in " + path.string());
    }

    Image img;
    img.channels = channels;
    try {
        img.width = std::stoi(next_token(f));
        img.height = std::stoi(next_token(f));
        const int maxval = std::stoi(next_token(f));
        if (maxval != 255) throw DataError("expected 8-bit image in " + path.string());
    } catch (const std::invalid_argument&) {
        throw DataError("malformed image header in " + path.string());
    }
    if (img.width <= 0 || img.height <= 0) {
        throw DataError("invalid image dimensions in " + path.string());
    }

    const size_t n = static_cast<size_t>(img.width) * img.height * channels;
    img.pixels.resize(n);
    f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(f.gcount()) != n) {
        throw DataError("truncated image data in " + path.string());
    }
    return img;
}

void save_image(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) {
        throw DataError("image must have 1 or 3 channels");
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write image: " + path.string());
    f << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (!f) throw IoError("failed writing image: " + path.string());
}

std::vector<double> to_gray(const Image& img) {
    std::vector<double> out(static_cast<size_t>(img.width) * img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double v;
            if (img.channels == 1) {
                v = img.at(y, x);
            } else {
                v = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
            }
            out[static_cast<size_t>(y) * img.width + x] = v / 255.0;
        }
    }
    return out;
}

}  // namespace vlmkit::util
