#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "vickd/checkpoint.hpp"
#include "vickd/rng.hpp"
#include "vickd/wav.hpp"

namespace vickd {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Waveform {
  std::vector<float> samples;  // fixed length, in [-1, 1]
  int sample_rate = 0;
  int label = -1;
  std::string id;  // stable utterance id, drives the split hash
};

enum class LabelScheme { V12, V35 };

inline const std::vector<std::string>& v12_commands() {
  static const std::vector<std::string> cmds = {"yes", "no",  "up",  "down", "left",
                                                "right", "on", "off", "stop", "go"};
  return cmds;
}

struct Dataset {
  std::vector<Waveform> items;
  std::vector<std::string> class_names;
  int sample_rate = 0;
  int length = 0;

  int num_classes() const { return static_cast<int>(class_names.size()); }
};

struct SynthProfile {
  int length = 2000;
  int sample_rate = 4000;
};

inline SynthProfile desk_profile() { return {2000, 4000}; }
inline SynthProfile full_profile() { return {16000, 16000}; }

// ---------------------------------------------------------------------------
// synthetic keyword generator
// ---------------------------------------------------------------------------

namespace synth_detail {

// Per-class partial set: a unique triple of frequencies on a geometric grid,
// with class-derived partial amplitudes. `total_ids` covers command classes
// plus distractors so triples never collide across the run.
struct ClassTimbre {
  double f1, f2, f3;
  double a1, a2, a3;
};

inline ClassTimbre class_timbre(int id, int total_ids, int sample_rate) {
  const double f_lo = 0.045 * sample_rate;  // 180 Hz at 4 kHz
  const double f_hi = 0.215 * sample_rate;  // keeps 2.2x under Nyquist
  const double frac = total_ids > 1 ? static_cast<double>(id) / (total_ids - 1) : 0.0;
  const double base = f_lo * std::pow(f_hi / f_lo, frac);
  const std::uint64_t h = splitmix64(static_cast<std::uint64_t>(id) + 17);
  ClassTimbre t;
  t.f1 = base;
  t.f2 = base * 1.5;
  t.f3 = base * 2.2;
  t.a1 = 1.0;
  t.a2 = 0.45 + 0.3 * ((h >> 8 & 0xff) / 255.0);
  t.a3 = 0.25 + 0.2 * ((h >> 16 & 0xff) / 255.0);
  return t;
}

inline std::vector<float> attack_decay_envelope(int len, Rng& rng) {
  std::vector<float> env(static_cast<std::size_t>(len));
  const int attack = static_cast<int>(rng.uniform(0.05, 0.2) * len);
  const double tau = rng.uniform(0.25, 0.6) * len;
  for (int i = 0; i < len; ++i) {
    if (i < attack)
      env[i] = static_cast<float>(static_cast<double>(i) / std::max(1, attack));
    else
      env[i] = static_cast<float>(std::exp(-(i - attack) / tau));
  }
  return env;
}

inline std::vector<float> tone_utterance(const ClassTimbre& tb, int len, int sample_rate,
                                         Rng& rng) {
  const double j1 = rng.uniform(0.95, 1.05);
  const double j2 = rng.uniform(0.95, 1.05);
  const double j3 = rng.uniform(0.95, 1.05);
  const double p1 = rng.uniform(0.0, 2.0 * M_PI);
  const double p2 = rng.uniform(0.0, 2.0 * M_PI);
  const double p3 = rng.uniform(0.0, 2.0 * M_PI);
  const double w1 = 2.0 * M_PI * tb.f1 * j1 / sample_rate;
  const double w2 = 2.0 * M_PI * tb.f2 * j2 / sample_rate;
  const double w3 = 2.0 * M_PI * tb.f3 * j3 / sample_rate;

  auto env = attack_decay_envelope(len, rng);
  const double amp = rng.uniform(0.25, 0.7);
  const double norm = amp / (tb.a1 + tb.a2 + tb.a3);

  std::vector<float> x(static_cast<std::size_t>(len));
  double sig_power = 0.0;
  for (int i = 0; i < len; ++i) {
    const double s = tb.a1 * std::sin(w1 * i + p1) + tb.a2 * std::sin(w2 * i + p2) +
                     tb.a3 * std::sin(w3 * i + p3);
    x[i] = static_cast<float>(norm * s * env[i]);
    sig_power += static_cast<double>(x[i]) * x[i];
  }
  sig_power /= len;

  // 30 dB noise floor
  const double noise_std = std::sqrt(sig_power / std::pow(10.0, 3.0));
  for (int i = 0; i < len; ++i) {
    float v = x[i] + static_cast<float>(rng.normal(0.0, noise_std));
    x[i] = std::clamp(v, -1.0f, 1.0f);
  }
  return x;
}

inline std::vector<float> silence_utterance(int len, Rng& rng) {
  auto env = attack_decay_envelope(len, rng);
  const double amp = rng.uniform(0.04, 0.15);
  std::vector<float> x(static_cast<std::size_t>(len));
  for (int i = 0; i < len; ++i) {
    float v = static_cast<float>(amp * rng.normal() * (0.4 + 0.6 * env[i]));
    x[i] = std::clamp(v, -1.0f, 1.0f);
  }
  return x;
}

}  // namespace synth_detail

// Synthetic dataset. With `classes == 12` the V12 structure is mirrored:
// classes 0..9 are distinct command timbres, class 10 ("unknown") draws
// uniformly from six distractor timbres, class 11 ("silence") is
// envelope-shaped noise. Any other class count produces all-command classes.
inline Dataset synth_dataset(int classes, int per_class, std::uint64_t seed,
                             const SynthProfile& profile = desk_profile()) {
  if (classes < 2) throw DataError("synth_dataset: need at least 2 classes");
  using namespace synth_detail;

  Dataset ds;
  ds.sample_rate = profile.sample_rate;
  ds.length = profile.length;

  const bool v12_style = (classes == 12);
  const int command_classes = v12_style ? 10 : classes;
  const int distractors = v12_style ? 6 : 0;
  const int total_ids = command_classes + distractors;

  if (v12_style) {
    ds.class_names = v12_commands();
    ds.class_names.push_back("unknown");
    ds.class_names.push_back("silence");
  } else {
    for (int k = 0; k < classes; ++k) ds.class_names.push_back("tone" + std::to_string(k));
  }

  for (int k = 0; k < classes; ++k) {
    for (int i = 0; i < per_class; ++i) {
      Rng rng(hash_combine(seed, hash_combine(static_cast<std::uint64_t>(k),
                                              static_cast<std::uint64_t>(i))));
      Waveform w;
      w.sample_rate = profile.sample_rate;
      w.label = k;
      w.id = "synth/" + std::to_string(classes) + "/" + ds.class_names[k] + "/" +
             std::to_string(i);
      if (v12_style && k == 11) {
        w.samples = silence_utterance(profile.length, rng);
      } else if (v12_style && k == 10) {
        const int d = command_classes + rng.uniform_int(0, distractors - 1);
        w.samples = tone_utterance(class_timbre(d, total_ids, profile.sample_rate),
                                   profile.length, profile.sample_rate, rng);
      } else {
        w.samples = tone_utterance(class_timbre(k, total_ids, profile.sample_rate),
                                   profile.length, profile.sample_rate, rng);
      }
      ds.items.push_back(std::move(w));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// splits
// ---------------------------------------------------------------------------

struct SplitSpec {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

enum class SplitPart { Train, Valid, Test };

inline SplitPart split_of(const std::string& id, const SplitSpec& spec) {
  const double u = static_cast<double>(hash_str(id) >> 11) * 0x1.0p-53;
  if (u < spec.train) return SplitPart::Train;
  if (u < spec.train + spec.valid) return SplitPart::Valid;
  return SplitPart::Test;
}

struct SplitDatasets {
  Dataset train, valid, test;
};

inline SplitDatasets split(const Dataset& ds, const SplitSpec& spec = {}) {
  SplitDatasets out;
  for (Dataset* d : {&out.train, &out.valid, &out.test}) {
    d->class_names = ds.class_names;
    d->sample_rate = ds.sample_rate;
    d->length = ds.length;
  }
  for (const auto& w : ds.items) {
    switch (split_of(w.id, spec)) {
      case SplitPart::Train: out.train.items.push_back(w); break;
      case SplitPart::Valid: out.valid.items.push_back(w); break;
      case SplitPart::Test: out.test.items.push_back(w); break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// WAV directory loader (Google Speech Commands layout)
// ---------------------------------------------------------------------------

namespace data_detail {

inline std::vector<float> pad_trim(std::vector<float> x, int len) {
  x.resize(static_cast<std::size_t>(len), 0.0f);
  return x;
}

}  // namespace data_detail

// Loads `<root>/<command>/<file>.wav` trees. Mono 16-bit PCM only; every
// utterance is padded/trimmed to 1 s at the tree's sample rate. Under V12 the
// ten command classes are kept, every other command folder feeds `unknown`
// (uniformly subsampled to the mean command-class size) and
// `_background_noise_` is sliced into 1 s windows for `silence`.
inline Dataset load_wav_dir(const std::string& root, LabelScheme scheme,
                            std::uint64_t seed = 0x5eed) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("not a directory: " + root);

  std::map<std::string, std::vector<fs::path>> folders;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(entry.path()))
      if (f.is_regular_file() && f.path().extension() == ".wav") files.push_back(f.path());
    std::sort(files.begin(), files.end());
    folders[name] = std::move(files);
  }

  const std::string noise_folder = "_background_noise_";
  Dataset ds;
  ds.sample_rate = 0;

  auto load_one = [&](const fs::path& p) {
    WavData w = read_wav(p.string());
    if (ds.sample_rate == 0) {
      ds.sample_rate = w.sample_rate;
      ds.length = w.sample_rate;  // 1 second
    } else if (w.sample_rate != ds.sample_rate) {
      throw DataError(p.string() + ": sample rate " + std::to_string(w.sample_rate) +
                      " differs from tree rate " + std::to_string(ds.sample_rate));
    }
    return w;
  };

  if (scheme == LabelScheme::V35) {
    for (const auto& [name, files] : folders) {
      if (name == noise_folder) continue;
      if (files.empty()) throw DataError("empty class folder: " + name);
      ds.class_names.push_back(name);
    }
    for (const auto& cls : ds.class_names) {
      const int label = static_cast<int>(&cls - ds.class_names.data());
      for (const auto& p : folders[cls]) {
        WavData w = load_one(p);
        Waveform out;
        out.samples = data_detail::pad_trim(std::move(w.samples), ds.length);
        out.sample_rate = ds.sample_rate;
        out.label = label;
        out.id = cls + "/" + p.filename().string();
        ds.items.push_back(std::move(out));
      }
    }
    return ds;
  }

  // V12
  ds.class_names = v12_commands();
  ds.class_names.push_back("unknown");
  ds.class_names.push_back("silence");

  std::int64_t command_total = 0;
  for (const auto& cmd : v12_commands()) {
    auto it = folders.find(cmd);
    if (it == folders.end() || it->second.empty())
      throw DataError("missing or empty command folder: " + cmd);
    command_total += static_cast<std::int64_t>(it->second.size());
  }
  const int mean_class_size = static_cast<int>(command_total / 10);

  for (int label = 0; label < 10; ++label) {
    const std::string& cmd = ds.class_names[label];
    for (const auto& p : folders[cmd]) {
      WavData w = load_one(p);
      Waveform out;
      out.samples = data_detail::pad_trim(std::move(w.samples), ds.length);
      out.sample_rate = ds.sample_rate;
      out.label = label;
      out.id = cmd + "/" + p.filename().string();
      ds.items.push_back(std::move(out));
    }
  }

  // unknown: pool of all non-command, non-noise folders
  std::vector<fs::path> unknown_pool;
  for (const auto& [name, files] : folders) {
    if (name == noise_folder) continue;
    if (std::find(v12_commands().begin(), v12_commands().end(), name) != v12_commands().end())
      continue;
    unknown_pool.insert(unknown_pool.end(), files.begin(), files.end());
  }
  if (!unknown_pool.empty()) {
    Rng rng(hash_combine(seed, hash_str("unknown")));
    rng.shuffle(unknown_pool.begin(), unknown_pool.end());
    const std::size_t take = std::min(unknown_pool.size(),
                                      static_cast<std::size_t>(mean_class_size));
    for (std::size_t i = 0; i < take; ++i) {
      WavData w = load_one(unknown_pool[i]);
      Waveform out;
      out.samples = data_detail::pad_trim(std::move(w.samples), ds.length);
      out.sample_rate = ds.sample_rate;
      out.label = 10;
      out.id = "unknown/" + unknown_pool[i].parent_path().filename().string() + "_" +
               unknown_pool[i].filename().string();
      ds.items.push_back(std::move(out));
    }
  }

  // silence: slice background noise into 1 s windows
  auto noise_it = folders.find(noise_folder);
  if (noise_it != folders.end()) {
    std::vector<Waveform> windows;
    for (const auto& p : noise_it->second) {
      WavData w = load_one(p);
      const int n_windows = static_cast<int>(w.samples.size()) / ds.length;
      for (int k = 0; k < n_windows; ++k) {
        Waveform out;
        out.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(k) * ds.length,
                           w.samples.begin() + static_cast<std::ptrdiff_t>(k + 1) * ds.length);
        out.sample_rate = ds.sample_rate;
        out.label = 11;
        out.id = "silence/" + p.filename().string() + "#" + std::to_string(k);
        windows.push_back(std::move(out));
      }
    }
    Rng rng(hash_combine(seed, hash_str("silence")));
    rng.shuffle(windows.begin(), windows.end());
    const std::size_t take = std::min(windows.size(),
                                      static_cast<std::size_t>(mean_class_size));
    for (std::size_t i = 0; i < take; ++i) ds.items.push_back(std::move(windows[i]));
  }

  if (ds.items.empty()) throw DataError("no usable wav files under " + root);
  return ds;
}

// ---------------------------------------------------------------------------
// dataset cache (same binary tensor container as checkpoints)
// ---------------------------------------------------------------------------

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::vector<NamedTensorEntry> entries;
  const auto n = static_cast<std::uint32_t>(ds.items.size());
  const auto t = static_cast<std::uint32_t>(ds.length);

  NamedTensorEntry data{"data", {n, t}, {}};
  data.data.reserve(static_cast<std::size_t>(n) * t);
  NamedTensorEntry labels{"labels", {n}, {}};
  for (const auto& w : ds.items) {
    data.data.insert(data.data.end(), w.samples.begin(), w.samples.end());
    labels.data.push_back(static_cast<float>(w.label));
  }
  NamedTensorEntry meta{"meta", {3}, {static_cast<float>(ds.sample_rate),
                                      static_cast<float>(ds.length),
                                      static_cast<float>(ds.class_names.size())}};
  std::string names;
  for (const auto& c : ds.class_names) {
    names += c;
    names += '\n';
  }
  std::string ids;
  for (const auto& w : ds.items) {
    ids += w.id;
    ids += '\n';
  }
  NamedTensorEntry names_t{"class_names_utf8", {static_cast<std::uint32_t>(names.size())}, {}};
  for (unsigned char c : names) names_t.data.push_back(static_cast<float>(c));
  NamedTensorEntry ids_t{"ids_utf8", {static_cast<std::uint32_t>(ids.size())}, {}};
  for (unsigned char c : ids) ids_t.data.push_back(static_cast<float>(c));

  entries.push_back(std::move(meta));
  entries.push_back(std::move(labels));
  entries.push_back(std::move(names_t));
  entries.push_back(std::move(ids_t));
  entries.push_back(std::move(data));
  write_tensor_file(path, entries);
}

inline Dataset load_dataset(const std::string& path) {
  auto entries = read_tensor_file(path);
  auto find = [&](const std::string& name) -> const NamedTensorEntry& {
    for (const auto& e : entries)
      if (e.name == name) return e;
    throw DataError("dataset cache missing tensor: " + name);
  };
  const auto& meta = find("meta");
  const auto& labels = find("labels");
  const auto& names = find("class_names_utf8");
  const auto& ids = find("ids_utf8");
  const auto& data = find("data");

  Dataset ds;
  ds.sample_rate = static_cast<int>(meta.data.at(0));
  ds.length = static_cast<int>(meta.data.at(1));

  std::string names_s;
  for (float c : names.data) names_s.push_back(static_cast<char>(static_cast<int>(c)));
  std::string cur;
  for (char c : names_s) {
    if (c == '\n') {
      ds.class_names.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }

  std::vector<std::string> id_list;
  std::string ids_s;
  for (float c : ids.data) ids_s.push_back(static_cast<char>(static_cast<int>(c)));
  cur.clear();
  for (char c : ids_s) {
    if (c == '\n') {
      id_list.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }

  if (data.dims.size() != 2) throw DataError("dataset cache: data tensor must be rank 2");
  const std::size_t n = data.dims[0], t = data.dims[1];
  if (labels.data.size() != n || id_list.size() != n)
    throw DataError("dataset cache: inconsistent item counts");
  for (std::size_t i = 0; i < n; ++i) {
    Waveform w;
    w.samples.assign(data.data.begin() + static_cast<std::ptrdiff_t>(i * t),
                     data.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * t));
    w.sample_rate = ds.sample_rate;
    w.label = static_cast<int>(labels.data[i]);
    w.id = id_list[i];
    ds.items.push_back(std::move(w));
  }
  return ds;
}

}  // namespace vickd
