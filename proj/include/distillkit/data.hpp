// Copyright (c) 2026 distillkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "distillkit/model.hpp"
#include "distillkit/rng.hpp"
#include "distillkit/tensor.hpp"

namespace distillkit {

inline constexpr std::size_t kSampleRate = 16000;

// Mono 16 kHz waveform, samples in [-1, 1]. The frontend needs at least
// its receptive field (400 samples) to emit one frame, so shorter
// waveforms are rejected at construction.
struct Waveform {
  std::vector<double> samples;

  explicit Waveform(std::vector<double> s) : samples(std::move(s)) {
    if (samples.size() < ConvFrontendSpec{}.min_input()) {
      throw ContractError(
          "waveform: " + std::to_string(samples.size()) +
          " samples is below the minimum of " +
          std::to_string(ConvFrontendSpec{}.min_input()));
    }
  }

  std::size_t size() const { return samples.size(); }
};

// ---------------------------------------------------------------------------
// wav file io
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0]) |
         (static_cast<std::uint16_t>(p[1]) << 8);
}

inline float read_f32le(const unsigned char* p) {
  std::uint32_t u = read_u32le(p);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace detail

// RIFF/WAVE reader for PCM16 (format 1) and IEEE float32 (format 3),
// mono or stereo (averaged), 16 kHz only. PCM16 is normalized by 1/32768;
// float samples are clamped into [-1, 1]. Unknown chunks are skipped,
// honoring the odd-size pad byte.
inline Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const std::string where = "'" + path.string() + "'";
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw ParseError(where + ": not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t off = 12;
  while (off + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + off;
    std::uint32_t chunk_size = detail::read_u32le(hdr + 4);
    std::size_t body = off + 8;
    if (body + chunk_size > bytes.size()) {
      throw ParseError(where + ": chunk overruns file");
    }
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw ParseError(where + ": fmt chunk too small");
      format = detail::read_u16le(bytes.data() + body);
      channels = detail::read_u16le(bytes.data() + body + 2);
      rate = detail::read_u32le(bytes.data() + body + 4);
      bits = detail::read_u16le(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = chunk_size;
    }
    off = body + chunk_size + (chunk_size % 2);  // pad byte on odd sizes
  }
  if (!have_fmt) throw ParseError(where + ": missing fmt chunk");
  if (data == nullptr) throw ParseError(where + ": missing data chunk");
  bool pcm16 = format == 1 && bits == 16;
  bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) {
    throw ParseError(where + ": unsupported codec (format " +
                     std::to_string(format) + ", " + std::to_string(bits) +
                     " bits); need PCM16 or IEEE float32");
  }
  if (channels != 1 && channels != 2) {
    throw ParseError(where + ": unsupported channel count " +
                     std::to_string(channels));
  }
  if (rate != kSampleRate) {
    throw ParseError(where + ": sample rate " + std::to_string(rate) +
                     " Hz; this library only handles " +
                     std::to_string(kSampleRate) + " Hz");
  }
  std::size_t bytes_per = (pcm16 ? 2u : 4u) * channels;
  std::size_t n = data_size / bytes_per;
  std::vector<double> samples(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const unsigned char* p = data + (i * channels + ch) * (pcm16 ? 2 : 4);
      if (pcm16) {
        std::int16_t v = static_cast<std::int16_t>(detail::read_u16le(p));
        acc += static_cast<double>(v) / 32768.0;
      } else {
        acc += std::clamp(static_cast<double>(detail::read_f32le(p)), -1.0, 1.0);
      }
    }
    samples[i] = acc / channels;
  }
  return Waveform(std::move(samples));
}

// PCM16 mono writer (round to nearest, clamped), for fixtures and round
// trips. Quantization error is at most 1/32768 per sample.
inline void write_wav_pcm16(const std::filesystem::path& path,
                            const Waveform& wave) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  auto put_u32 = [&](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<char*>(b), 4);
  };
  auto put_u16 = [&](std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    out.write(reinterpret_cast<char*>(b), 2);
  };
  std::uint32_t data_size = static_cast<std::uint32_t>(wave.size() * 2);
  out.write("RIFF", 4);
  put_u32(36 + data_size);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(kSampleRate);
  put_u32(kSampleRate * 2);  // byte rate
  put_u16(2);                // block align
  put_u16(16);               // bits
  out.write("data", 4);
  put_u32(data_size);
  for (double s : wave.samples) {
    double scaled = std::round(s * 32768.0);
    scaled = std::clamp(scaled, -32768.0, 32767.0);
    put_u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
  }
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

// One synthetic item: a sum of amplitude-modulated sinusoids with
// carriers in [80, 4000] Hz plus 1% uniform noise, peak-normalized to
// 0.95. Fully determined by the stream passed in.
inline Waveform synth_waveform(RngStream stream, double duration_s,
                               std::size_t min_components = 3,
                               std::size_t max_components = 8) {
  if (duration_s <= 0.0) throw ContractError("synth: duration must be > 0");
  if (min_components == 0 || min_components > max_components) {
    throw ContractError("synth: bad component range");
  }
  std::size_t n =
      static_cast<std::size_t>(std::llround(duration_s * kSampleRate));
  std::size_t n_comp =
      min_components +
      static_cast<std::size_t>(
          stream.next_below(max_components - min_components + 1));
  struct Component {
    double carrier_hz, carrier_phase, amp, mod_hz, mod_depth, mod_phase;
  };
  std::vector<Component> comps(n_comp);
  for (auto& c : comps) {
    c.carrier_hz = stream.next_uniform(80.0, 4000.0);
    c.carrier_phase = stream.next_uniform(0.0, 2.0 * 3.14159265358979323846);
    c.amp = stream.next_uniform(0.25, 1.0);
    c.mod_hz = stream.next_uniform(0.5, 8.0);
    c.mod_depth = stream.next_uniform(0.0, 0.8);
    c.mod_phase = stream.next_uniform(0.0, 2.0 * 3.14159265358979323846);
  }
  std::vector<double> samples(n, 0.0);
  constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
  for (std::size_t i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / kSampleRate;
    double v = 0.0;
    for (const auto& c : comps) {
      double env = 1.0 + c.mod_depth * std::sin(kTwoPi * c.mod_hz * t +
                                                c.mod_phase);
      v += c.amp * env * std::sin(kTwoPi * c.carrier_hz * t + c.carrier_phase);
    }
    samples[i] = v;
  }
  for (double& s : samples) s += 0.01 * stream.next_uniform(-1.0, 1.0);
  double peak = 0.0;
  for (double s : samples) peak = std::max(peak, std::fabs(s));
  double gain = 0.95 / peak;
  for (double& s : samples) s *= gain;
  return Waveform(std::move(samples));
}

struct Corpus {
  std::vector<Waveform> items;

  std::size_t size() const { return items.size(); }
};

// Deterministic per (seed, index): regenerating any item independently
// yields the same samples.
inline Corpus synth_corpus(std::uint64_t seed, std::size_t n, double min_dur_s,
                           double max_dur_s) {
  if (n == 0) throw ContractError("synth_corpus: need at least one item");
  if (min_dur_s < 0.025 || max_dur_s > 10.0 || min_dur_s > max_dur_s) {
    throw ContractError("synth_corpus: durations must lie in [0.025, 10] s");
  }
  Corpus corpus;
  corpus.items.reserve(n);
  RngStream root = RngStream(seed).split("synth");
  for (std::size_t i = 0; i < n; ++i) {
    RngStream item = root.split(static_cast<std::uint64_t>(i));
    double dur = item.next_uniform(min_dur_s, max_dur_s);
    corpus.items.push_back(synth_waveform(item, dur));
  }
  return corpus;
}

// Newline-delimited list of wav paths, relative to the manifest's parent.
inline Corpus load_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest '" + manifest.string() + "'");
  Corpus corpus;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) {
      line.pop_back();
    }
    if (line.empty() || line[0] == '#') continue;
    std::filesystem::path p(line);
    if (p.is_relative()) p = manifest.parent_path() / p;
    corpus.items.push_back(read_wav(p));
  }
  if (corpus.items.empty()) {
    throw ParseError("manifest '" + manifest.string() + "' lists no items");
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

// Zero-padded sample matrix plus true lengths. Frame-level validity is
// derived through the frontend length law on demand.
struct Batch {
  Tensor waves;  // (B, S_max), no grad
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> item_indices;

  std::vector<std::size_t> frame_lengths(const ConvFrontendSpec& fe) const {
    std::vector<std::size_t> out;
    out.reserve(lengths.size());
    for (std::size_t n : lengths) out.push_back(fe.output_length(n));
    return out;
  }

  // (B, F_max) 0/1 validity mask under the frontend length law.
  Tensor frame_mask(const ConvFrontendSpec& fe) const {
    std::vector<std::size_t> fl = frame_lengths(fe);
    std::size_t fmax = *std::max_element(fl.begin(), fl.end());
    std::vector<double> mask(fl.size() * fmax, 0.0);
    for (std::size_t i = 0; i < fl.size(); ++i) {
      for (std::size_t j = 0; j < fl[i]; ++j) mask[i * fmax + j] = 1.0;
    }
    return Tensor::from_data({fl.size(), fmax}, std::move(mask));
  }
};

inline Batch make_batch(const Corpus& corpus,
                        const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ContractError("make_batch: empty index list");
  std::size_t s_max = 0;
  for (std::size_t idx : indices) {
    if (idx >= corpus.size()) throw ContractError("make_batch: index range");
    s_max = std::max(s_max, corpus.items[idx].size());
  }
  Batch b;
  std::vector<double> data(indices.size() * s_max, 0.0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& s = corpus.items[indices[i]].samples;
    std::copy(s.begin(), s.end(), data.begin() + i * s_max);
    b.lengths.push_back(s.size());
    b.item_indices.push_back(indices[i]);
  }
  b.waves = Tensor::from_data({indices.size(), s_max}, std::move(data));
  return b;
}

// Deterministic epoch ordering: each epoch is an independent seeded
// shuffle, partitioned into consecutive groups. A trailing short batch
// is kept.
inline std::vector<std::vector<std::size_t>> epoch_batch_indices(
    std::size_t corpus_size, std::size_t batch_size, std::uint64_t seed,
    std::uint64_t epoch) {
  if (corpus_size == 0 || batch_size == 0) {
    throw ContractError("batching: corpus and batch size must be positive");
  }
  std::vector<std::size_t> order(corpus_size);
  for (std::size_t i = 0; i < corpus_size; ++i) order[i] = i;
  RngStream s = RngStream(seed).split("batches").split(epoch);
  for (std::size_t i = corpus_size; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(s.next_below(i));
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t at = 0; at < corpus_size; at += batch_size) {
    std::size_t end = std::min(at + batch_size, corpus_size);
    batches.emplace_back(order.begin() + at, order.begin() + end);
  }
  return batches;
}

inline std::vector<Batch> make_batches(const Corpus& corpus,
                                       std::size_t batch_size,
                                       std::uint64_t seed,
                                       std::uint64_t epoch = 0) {
  std::vector<Batch> out;
  for (const auto& idx :
       epoch_batch_indices(corpus.size(), batch_size, seed, epoch)) {
    out.push_back(make_batch(corpus, idx));
  }
  return out;
}

}  // namespace distillkit
