#pragma once

#include <memory>
#include <string>

namespace simulstream {

// Line-oriented text IO; paths ending in ".gz" are transparently compressed.

class LineWriter {
 public:
  explicit LineWriter(const std::string& path);
  ~LineWriter();
  LineWriter(const LineWriter&) = delete;
  LineWriter& operator=(const LineWriter&) = delete;

  void write_line(const std::string& line);
  void close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

class LineReader {
 public:
  explicit LineReader(const std::string& path);
  ~LineReader();
  LineReader(const LineReader&) = delete;
  LineReader& operator=(const LineReader&) = delete;

  // Returns false at end of input. Throws on stream corruption, reporting the
  // line number reached.
  bool read_line(std::string& line);
  int line_number() const;  // 1-based number of the last line returned

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace simulstream
