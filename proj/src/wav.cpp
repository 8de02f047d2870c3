// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "aligncruse/wav.hpp"

#include <array>
#include <cmath>
#include <cstring>

namespace acrs::wav {
namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}
void put_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  os.write(b, 2);
}

void write_header(std::ostream& os, int sample_rate, std::uint32_t samples) {
  const std::uint32_t data_bytes = samples * 2;
  os.write("RIFF", 4);
  put_u32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  put_u32(os, 16);
  put_u16(os, 1);  // PCM
  put_u16(os, 1);  // mono
  put_u32(os, static_cast<std::uint32_t>(sample_rate));
  put_u32(os, static_cast<std::uint32_t>(sample_rate) * 2);
  put_u16(os, 2);
  put_u16(os, 16);
  os.write("data", 4);
  put_u32(os, data_bytes);
}

}  // namespace

std::int16_t quantize(double x) {
  double v = std::round(x * 32768.0);
  if (v > 32767.0) v = 32767.0;
  if (v < -32768.0) v = -32768.0;
  return static_cast<std::int16_t>(v);
}

Reader::Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
  require(in_.good(), ErrorKind::kIo, "cannot open " + path);
  unsigned char riff[12];
  in_.read(reinterpret_cast<char*>(riff), 12);
  require(in_.good() && std::memcmp(riff, "RIFF", 4) == 0 && std::memcmp(riff + 8, "WAVE", 4) == 0,
          ErrorKind::kIo, path + ": not a RIFF/WAVE file");
  bool have_fmt = false;
  while (true) {
    unsigned char hdr[8];
    in_.read(reinterpret_cast<char*>(hdr), 8);
    require(in_.good(), ErrorKind::kIo, path + ": missing data chunk");
    const std::uint32_t size = read_u32(hdr + 4);
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      std::vector<unsigned char> fmt(size);
      in_.read(reinterpret_cast<char*>(fmt.data()), static_cast<std::streamsize>(size));
      require(in_.good() && size >= 16, ErrorKind::kIo, path + ": truncated fmt chunk");
      const auto format = read_u16(fmt.data());
      const auto channels = read_u16(fmt.data() + 2);
      sample_rate_ = static_cast<int>(read_u32(fmt.data() + 4));
      const auto bits = read_u16(fmt.data() + 14);
      require(format == 1 && channels == 1 && bits == 16, ErrorKind::kIo,
              path + ": only mono 16-bit PCM is supported");
      if (size % 2) in_.ignore(1);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      require(have_fmt, ErrorKind::kIo, path + ": data chunk before fmt chunk");
      total_ = size / 2;
      break;
    } else {
      in_.ignore(size + (size % 2));
    }
  }
}

std::vector<double> Reader::read(std::size_t max) {
  const std::size_t n = std::min(max, remaining());
  std::vector<unsigned char> raw(n * 2);
  in_.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  require(in_.good() || n == 0, ErrorKind::kIo, path_ + ": truncated sample data");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = static_cast<std::int16_t>(read_u16(raw.data() + 2 * i));
    out[i] = v / 32768.0;
  }
  consumed_ += n;
  return out;
}

dsp::AudioClip read(const std::string& path) {
  Reader r(path);
  dsp::AudioClip clip(r.read(r.total_samples()), r.sample_rate());
  return clip;
}

Writer::Writer(const std::string& path, int sample_rate) : out_(path, std::ios::binary), path_(path) {
  require(out_.good(), ErrorKind::kIo, "cannot write " + path);
  write_header(out_, sample_rate, 0);
}

void Writer::write(const std::vector<double>& samples) {
  std::vector<char> raw(samples.size() * 2);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto v = static_cast<std::uint16_t>(quantize(samples[i]));
    raw[2 * i] = static_cast<char>(v & 0xff);
    raw[2 * i + 1] = static_cast<char>((v >> 8) & 0xff);
  }
  out_.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  require(out_.good(), ErrorKind::kIo, "write failed: " + path_);
  written_ += static_cast<std::uint32_t>(samples.size());
}

void Writer::close() {
  if (closed_) return;
  closed_ = true;
  out_.seekp(4);
  put_u32(out_, 36 + written_ * 2);
  out_.seekp(40);
  put_u32(out_, written_ * 2);
  out_.close();
  require(!out_.fail(), ErrorKind::kIo, "failed to finalize " + path_);
}

Writer::~Writer() {
  try {
    close();
  } catch (...) {
  }
}

void write(const std::string& path, const dsp::AudioClip& clip) {
  Writer w(path, clip.sample_rate);
  w.write(clip.samples);
  w.close();
}

}  // namespace acrs::wav
