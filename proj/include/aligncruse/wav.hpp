// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "aligncruse/dsp.hpp"

namespace acrs::wav {

// RIFF PCM, 16-bit signed little-endian, mono. Samples map to [-1, 1) by
// division by 32768; writing rounds and saturates.
dsp::AudioClip read(const std::string& path);
void write(const std::string& path, const dsp::AudioClip& clip);

std::int16_t quantize(double x);

class Reader {
 public:
  explicit Reader(const std::string& path);
  int sample_rate() const { return sample_rate_; }
  std::size_t total_samples() const { return total_; }
  std::size_t remaining() const { return total_ - consumed_; }
  // Reads up to `max` samples; returns fewer at end of data.
  std::vector<double> read(std::size_t max);

 private:
  std::ifstream in_;
  std::string path_;
  int sample_rate_ = 0;
  std::size_t total_ = 0;
  std::size_t consumed_ = 0;
};

class Writer {
 public:
  Writer(const std::string& path, int sample_rate);
  ~Writer();
  Writer(const Writer&) = delete;
  Writer& operator=(const Writer&) = delete;

  void write(const std::vector<double>& samples);
  // Patches the header sizes. Called by the destructor if omitted.
  void close();

 private:
  std::ofstream out_;
  std::string path_;
  std::uint32_t written_ = 0;
  bool closed_ = false;
};

}  // namespace acrs::wav
