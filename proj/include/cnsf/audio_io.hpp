// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <string>
#include <vector>

#include "cnsf/common.hpp"
#include "cnsf/signal.hpp"

namespace cnsf {

/// Frame-level fundamental frequency contour; 0 marks unvoiced frames.
struct F0Track {
  std::vector<double> values;  // Hz
  double frame_shift = 0.005;  // seconds

  int num_frames() const { return int(values.size()); }
  void validate() const;
};

/// Reads a mono 16-bit PCM RIFF/WAVE file. Anything else is rejected with a
/// ParseError carrying the offending byte offset.
Waveform read_wav(const std::string& path);

/// Writes mono 16-bit PCM; samples are clipped to [-1, 1). Atomic
/// (temp file + rename).
void write_wav(const std::string& path, const Waveform& waveform);

/// F0 text format: header line "frame_shift_ms=<v>", then one value per line.
F0Track read_f0(const std::string& path);
void write_f0(const std::string& path, const F0Track& track);

/// Feature text format: "frame_shift_ms=<v>", "dims=<d>", then one
/// whitespace-separated row per frame.
FrameSequence read_features(const std::string& path);
void write_features(const std::string& path, const FrameSequence& frames);

/// Two-column CSV ("sample,value") used for plot data.
void write_series_csv(const std::string& path, const std::vector<double>& values);

namespace detail {

/// Write-then-rename helper shared by all writers.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace detail

}  // namespace cnsf
