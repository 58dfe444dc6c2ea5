#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace revcurl {

/// Long-format metrics stream: step,split,metric,value. Values are printed
/// with %.17g so repeated runs produce byte-identical files.
class MetricsWriter {
 public:
  MetricsWriter() = default;

  explicit MetricsWriter(const std::filesystem::path& path) {
    out_.open(path);
    if (!out_) throw std::runtime_error("cannot write metrics file '" + path.string() + "'");
    out_ << "step,split,metric,value\n";
  }

  bool active() const { return out_.is_open(); }

  void row(long step, std::string_view split, std::string_view metric, double value) {
    if (!out_.is_open()) return;
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    out_ << step << ',' << split << ',' << metric << ',' << buf << '\n';
  }

  void flush() {
    if (out_.is_open()) out_.flush();
  }

 private:
  std::ofstream out_;
};

}  // namespace revcurl
