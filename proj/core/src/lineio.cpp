#include "simulstream/lineio.hpp"

#include <zlib.h>

#include <cstdio>
#include <stdexcept>

namespace simulstream {

namespace {
bool has_gz_suffix(const std::string& path) {
  return path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}
}  // namespace

struct LineWriter::Impl {
  FILE* file = nullptr;
  gzFile gz = nullptr;
  std::string path;
};

LineWriter::LineWriter(const std::string& path) : impl_(std::make_unique<Impl>()) {
  impl_->path = path;
  if (has_gz_suffix(path)) {
    impl_->gz = gzopen(path.c_str(), "wb");
    if (!impl_->gz) throw std::runtime_error("cannot open for writing: " + path);
  } else {
    impl_->file = std::fopen(path.c_str(), "wb");
    if (!impl_->file) throw std::runtime_error("cannot open for writing: " + path);
  }
}

LineWriter::~LineWriter() {
  try {
    close();
  } catch (...) {
  }
}

void LineWriter::write_line(const std::string& line) {
  if (impl_->gz) {
    if (gzwrite(impl_->gz, line.data(), static_cast<unsigned>(line.size())) !=
            static_cast<int>(line.size()) ||
        gzwrite(impl_->gz, "\n", 1) != 1) {
      throw std::runtime_error("write failed: " + impl_->path);
    }
  } else if (impl_->file) {
    if (std::fwrite(line.data(), 1, line.size(), impl_->file) != line.size() ||
        std::fputc('\n', impl_->file) == EOF) {
      throw std::runtime_error("write failed: " + impl_->path);
    }
  }
}

void LineWriter::close() {
  if (impl_->gz) {
    int rc = gzclose(impl_->gz);
    impl_->gz = nullptr;
    if (rc != Z_OK) throw std::runtime_error("close failed: " + impl_->path);
  }
  if (impl_->file) {
    int rc = std::fclose(impl_->file);
    impl_->file = nullptr;
    if (rc != 0) throw std::runtime_error("close failed: " + impl_->path);
  }
}

struct LineReader::Impl {
  FILE* file = nullptr;
  gzFile gz = nullptr;
  std::string path;
  int line_no = 0;
  std::string buffer;
  size_t pos = 0;
  bool eof = false;

  bool fill() {
    char chunk[1 << 16];
    if (gz) {
      int n = gzread(gz, chunk, sizeof(chunk));
      if (n < 0) {
        int err = 0;
        const char* msg = gzerror(gz, &err);
        throw std::runtime_error("corrupt gzip stream in " + path + " near line " +
                                 std::to_string(line_no + 1) + ": " + (msg ? msg : ""));
      }
      if (n == 0) return false;
      buffer.append(chunk, static_cast<size_t>(n));
      return true;
    }
    size_t n = std::fread(chunk, 1, sizeof(chunk), file);
    if (n == 0) {
      if (std::ferror(file)) {
        throw std::runtime_error("read error in " + path + " near line " +
                                 std::to_string(line_no + 1));
      }
      return false;
    }
    buffer.append(chunk, n);
    return true;
  }
};

LineReader::LineReader(const std::string& path) : impl_(std::make_unique<Impl>()) {
  impl_->path = path;
  if (has_gz_suffix(path)) {
    impl_->gz = gzopen(path.c_str(), "rb");
    if (!impl_->gz) throw std::runtime_error("cannot open: " + path);
  } else {
    impl_->file = std::fopen(path.c_str(), "rb");
    if (!impl_->file) throw std::runtime_error("cannot open: " + path);
  }
}

LineReader::~LineReader() {
  if (impl_->gz) gzclose(impl_->gz);
  if (impl_->file) std::fclose(impl_->file);
}

bool LineReader::read_line(std::string& line) {
  auto& im = *impl_;
  while (true) {
    size_t nl = im.buffer.find('\n', im.pos);
    if (nl != std::string::npos) {
      line.assign(im.buffer, im.pos, nl - im.pos);
      im.pos = nl + 1;
      if (im.pos > (1u << 20)) {
        im.buffer.erase(0, im.pos);
        im.pos = 0;
      }
      ++im.line_no;
      return true;
    }
    if (im.eof) {
      if (im.pos < im.buffer.size()) {
        // Final line without trailing newline.
        line.assign(im.buffer, im.pos, im.buffer.size() - im.pos);
        im.pos = im.buffer.size();
        ++im.line_no;
        return true;
      }
      return false;
    }
    im.buffer.erase(0, im.pos);
    im.pos = 0;
    if (!im.fill()) im.eof = true;
  }
}

int LineReader::line_number() const { return impl_->line_no; }

}  // namespace simulstream
