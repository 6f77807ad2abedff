// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "cnsf/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cnsf {

void F0Track::validate() const {
  if (frame_shift <= 0) throw ConfigError("frame_shift must be positive");
  for (double v : values)
    if (v < 0 || !std::isfinite(v)) throw InputError("F0 values must be finite and >= 0");
}

namespace detail {

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    out.write(contents.data(), std::streamsize(contents.size()));
    if (!out) throw IoError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("rename failed: " + path);
}

}  // namespace detail

// ----------------------------------------------------------------------------
// WAV
// ----------------------------------------------------------------------------

namespace {

std::uint32_t read_u32(const std::string& d, std::size_t off) {
  return std::uint32_t(std::uint8_t(d[off])) | std::uint32_t(std::uint8_t(d[off + 1])) << 8 |
         std::uint32_t(std::uint8_t(d[off + 2])) << 16 |
         std::uint32_t(std::uint8_t(d[off + 3])) << 24;
}

std::uint16_t read_u16(const std::string& d, std::size_t off) {
  return std::uint16_t(std::uint8_t(d[off]) | std::uint8_t(d[off + 1]) << 8);
}

void append_u32(std::string& d, std::uint32_t v) {
  d.push_back(char(v & 0xff));
  d.push_back(char((v >> 8) & 0xff));
  d.push_back(char((v >> 16) & 0xff));
  d.push_back(char((v >> 24) & 0xff));
}

void append_u16(std::string& d, std::uint16_t v) {
  d.push_back(char(v & 0xff));
  d.push_back(char((v >> 8) & 0xff));
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string d = ss.str();

  if (d.size() < 12) throw ParseError("truncated RIFF header", d.size());
  if (d.compare(0, 4, "RIFF") != 0) throw ParseError("missing RIFF magic", 0);
  if (d.compare(8, 4, "WAVE") != 0) throw ParseError("missing WAVE magic", 8);

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  std::size_t data_off = 0, data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= d.size()) {
    const std::string id = d.substr(pos, 4);
    const std::uint32_t len = read_u32(d, pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > d.size())
      throw ParseError("chunk '" + id + "' length exceeds file size", pos + 4);
    if (id == "fmt ") {
      if (len < 16) throw ParseError("fmt chunk too short", pos + 4);
      format = read_u16(d, body);
      channels = read_u16(d, body + 2);
      sample_rate = read_u32(d, body + 4);
      bits = read_u16(d, body + 14);
      have_fmt = true;
    } else if (id == "data") {
      data_off = body;
      data_len = len;
    }
    pos = body + len + (len & 1);  // chunks are word aligned
  }

  if (!have_fmt) throw ParseError("missing fmt chunk", 12);
  if (data_off == 0) throw ParseError("missing data chunk", 12);
  if (format != 1) throw ParseError("not PCM (format tag != 1)", data_off);
  if (channels != 1) throw ParseError("not mono", data_off);
  if (bits != 16) throw ParseError("not 16-bit", data_off);
  if (sample_rate == 0) throw ParseError("sample rate is zero", data_off);
  if (data_len % 2 != 0) throw ParseError("data chunk has odd byte count", data_off);

  Waveform out;
  out.sample_rate = double(sample_rate);
  out.samples.resize(data_len / 2);
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const std::int16_t s =
        std::int16_t(std::uint16_t(std::uint8_t(d[data_off + 2 * i]) |
                                   std::uint8_t(d[data_off + 2 * i + 1]) << 8));
    out.samples[i] = double(s) / 32768.0;
  }
  return out;
}

void write_wav(const std::string& path, const Waveform& waveform) {
  waveform.validate();
  const std::size_t n = waveform.samples.size();
  std::string d;
  d.reserve(44 + 2 * n);
  d += "RIFF";
  append_u32(d, std::uint32_t(36 + 2 * n));
  d += "WAVE";
  d += "fmt ";
  append_u32(d, 16);
  append_u16(d, 1);  // PCM
  append_u16(d, 1);  // mono
  const std::uint32_t sr = std::uint32_t(std::lround(waveform.sample_rate));
  append_u32(d, sr);
  append_u32(d, sr * 2);  // byte rate
  append_u16(d, 2);       // block align
  append_u16(d, 16);      // bits
  d += "data";
  append_u32(d, std::uint32_t(2 * n));
  for (double x : waveform.samples) {
    long v = std::lround(x * 32768.0);
    v = std::clamp(v, -32768L, 32767L);
    append_u16(d, std::uint16_t(std::int16_t(v)));
  }
  detail::write_file_atomic(path, d);
}

// ----------------------------------------------------------------------------
// F0 text format
// ----------------------------------------------------------------------------

F0Track read_f0(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("empty file", 1);
  ++line_no;
  const std::string key = "frame_shift_ms=";
  if (line.rfind(key, 0) != 0)
    throw ParseError("expected header 'frame_shift_ms=<v>'", line_no);
  double shift_ms = 0;
  try {
    shift_ms = std::stod(line.substr(key.size()));
  } catch (const std::exception&) {
    throw ParseError("bad frame shift value", line_no);
  }
  if (shift_ms <= 0) throw ParseError("frame shift must be positive", line_no);

  F0Track track;
  track.frame_shift = shift_ms / 1000.0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    double v = 0;
    try {
      std::size_t used = 0;
      v = std::stod(line, &used);
      while (used < line.size() && std::isspace(std::uint8_t(line[used]))) ++used;
      if (used != line.size()) throw std::invalid_argument("trailing junk");
    } catch (const std::exception&) {
      throw ParseError("bad F0 value", line_no);
    }
    if (v < 0) throw ParseError("negative F0 value", line_no);
    track.values.push_back(v);
  }
  if (track.values.empty()) throw ParseError("no frames", line_no);
  return track;
}

void write_f0(const std::string& path, const F0Track& track) {
  track.validate();
  std::string d;
  char buf[64];
  std::snprintf(buf, sizeof buf, "frame_shift_ms=%.6g\n", track.frame_shift * 1000.0);
  d += buf;
  for (double v : track.values) {
    std::snprintf(buf, sizeof buf, "%.6f\n", v);
    d += buf;
  }
  detail::write_file_atomic(path, d);
}

// ----------------------------------------------------------------------------
// Feature matrix text format
// ----------------------------------------------------------------------------

FrameSequence read_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);

  std::string line;
  std::size_t line_no = 0;
  double shift_ms = 0;
  int dims = 0;
  for (int i = 0; i < 2; ++i) {
    if (!std::getline(in, line)) throw ParseError("truncated header", line_no + 1);
    ++line_no;
    if (line.rfind("frame_shift_ms=", 0) == 0)
      shift_ms = std::stod(line.substr(15));
    else if (line.rfind("dims=", 0) == 0)
      dims = std::stoi(line.substr(5));
    else
      throw ParseError("expected 'frame_shift_ms=' or 'dims=' header", line_no);
  }
  if (shift_ms <= 0) throw ParseError("frame shift must be positive", line_no);
  if (dims < 1) throw ParseError("dims must be >= 1", line_no);

  std::vector<double> data;
  int n_rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    for (int dcount = 0; dcount < dims; ++dcount) {
      double v;
      if (!(row >> v)) throw ParseError("row has too few values", line_no);
      data.push_back(v);
    }
    double extra;
    if (row >> extra) throw ParseError("row has too many values", line_no);
    ++n_rows;
  }
  if (n_rows == 0) throw ParseError("no frames", line_no);

  FrameSequence out;
  out.frame_shift = shift_ms / 1000.0;
  out.frames = Mat<double>(n_rows, dims);
  out.frames.v = std::move(data);
  return out;
}

void write_features(const std::string& path, const FrameSequence& frames) {
  frames.validate();
  std::string d;
  char buf[64];
  std::snprintf(buf, sizeof buf, "frame_shift_ms=%.6g\n", frames.frame_shift * 1000.0);
  d += buf;
  std::snprintf(buf, sizeof buf, "dims=%d\n", frames.dim());
  d += buf;
  for (int n = 0; n < frames.num_frames(); ++n) {
    for (int k = 0; k < frames.dim(); ++k) {
      std::snprintf(buf, sizeof buf, k + 1 == frames.dim() ? "%.9g\n" : "%.9g ",
                    frames.frames.at(n, k));
      d += buf;
    }
  }
  detail::write_file_atomic(path, d);
}

void write_series_csv(const std::string& path, const std::vector<double>& values) {
  std::string d = "sample,value\n";
  char buf[64];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i, values[i]);
    d += buf;
  }
  detail::write_file_atomic(path, d);
}

}  // namespace cnsf
