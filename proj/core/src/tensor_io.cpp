#include "dumotion/tensor_io.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <system_error>

namespace dumotion {

namespace fs = std::filesystem;

void write_f32(const fs::path& path, const MatF& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + path.string());
    // Mat is row-major and dense, so the buffer is already in file order.
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(m.size())));
    if (!out) throw IoError("short write: " + path.string());
}

MatF read_f32(const fs::path& path, Index rows, Index cols) {
    std::error_code ec;
    const auto bytes = fs::file_size(path, ec);
    if (ec) throw IoError("cannot stat: " + path.string() + " (" + ec.message() + ")");
    const size_t want = sizeof(float) * static_cast<size_t>(rows) * static_cast<size_t>(cols);
    if (bytes != want) {
        std::ostringstream msg;
        msg << path.string() << ": expected " << want << " bytes for " << rows << "x" << cols
            << ", file has " << bytes;
        throw ShapeError(msg.str());
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for read: " + path.string());
    MatF m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(want));
    if (!in) throw IoError("short read: " + path.string());
    return m;
}

void atomic_write_text(const fs::path& path, const std::string& content) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for write: " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw IoError("short write: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed: " + tmp.string() + " -> " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for read: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace dumotion
