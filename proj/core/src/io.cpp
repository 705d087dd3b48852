#include "objtx/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <type_traits>

#include "json.hpp"
#include "objtx/errors.hpp"

namespace objtx::io {

namespace {

using json = nlohmann::ordered_json;
using track::Corpus;
using track::Detection;
using track::Label;
using track::Video;

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw LoadError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

// ---- JSON field access -----------------------------------------------------

template <typename T>
T field(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) throw LoadError(std::string("missing field '") + key + "'", line);
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw LoadError(std::string("field '") + key + "' is not a number", line);
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw LoadError(std::string("field '") + key + "' is not an integer", line);
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw LoadError(std::string("field '") + key + "' is not a string", line);
    }
    return it->get<T>();
  } catch (const json::exception&) {
    throw LoadError(std::string("invalid field '") + key + "'", line);
  }
}

std::vector<double> number_array(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) throw LoadError(std::string("missing field '") + key + "'", line);
  if (!it->is_array()) throw LoadError(std::string("field '") + key + "' is not an array", line);
  std::vector<double> out;
  out.reserve(it->size());
  for (const auto& x : *it) {
    if (!x.is_number()) throw LoadError(std::string("field '") + key + "' holds a non-number", line);
    out.push_back(x.get<double>());
  }
  return out;
}

json parse_line(const std::string& text, std::size_t line) {
  try {
    json j = json::parse(text);
    if (!j.is_object()) throw LoadError("record is not an object", line);
    return j;
  } catch (const json::parse_error& e) {
    throw LoadError(std::string("malformed JSON: ") + e.what(), line);
  }
}

json box_json(const track::Box& b) { return json::array({b.top, b.bottom, b.left, b.right}); }

track::Box read_box(const json& j, std::size_t line) {
  auto v = number_array(j, "box", line);
  if (v.size() != 4) throw LoadError("box needs 4 numbers", line);
  return {v[0], v[1], v[2], v[3]};
}

json detection_json(const Detection& d) {
  json j;
  j["t"] = d.t;
  j["box"] = box_json(d.box);
  j["z"] = d.z;
  if (d.pseudo_label) j["pseudo_label"] = *d.pseudo_label;
  j["source_class"] = std::string(track::to_string(d.source_class));
  return j;
}

Detection read_detection(const json& j, std::size_t line) {
  Detection d;
  d.t = field<double>(j, "t", line);
  d.box = read_box(j, line);
  d.z = number_array(j, "z", line);
  if (j.contains("pseudo_label")) d.pseudo_label = number_array(j, "pseudo_label", line);
  try {
    d.source_class = track::parse_source_class(field<std::string>(j, "source_class", line));
  } catch (const LoadError&) {
    throw;
  } catch (const std::exception& e) {
    throw LoadError(e.what(), line);
  }
  return d;
}

json label_json(const Label& l) {
  json j;
  j["kind"] = "label";
  j["video_id"] = l.video_id;
  if (l.track_id) j["track_id"] = *l.track_id;
  j["task"] = l.task;
  j["value"] = l.value;
  if (!l.scores.empty()) j["scores"] = l.scores;
  return j;
}

Label read_label(const json& j, std::size_t line) {
  Label l;
  l.video_id = field<std::int64_t>(j, "video_id", line);
  if (j.contains("track_id")) l.track_id = field<std::int64_t>(j, "track_id", line);
  l.task = field<std::string>(j, "task", line);
  l.value = field<double>(j, "value", line);
  if (j.contains("scores")) l.scores = number_array(j, "scores", line);
  return l;
}

json video_json(std::int64_t id, std::int64_t movie, std::int64_t segment, double duration) {
  json j;
  j["kind"] = "video";
  j["video_id"] = id;
  j["movie_id"] = movie;
  j["segment_id"] = segment;
  j["duration"] = duration;
  return j;
}

void emit(std::ostream& out, const json& j) { out << j.dump() << '\n'; }

std::map<std::int64_t, std::vector<const Label*>> labels_by_video(const std::vector<Label>& labels) {
  std::map<std::int64_t, std::vector<const Label*>> out;
  for (const auto& l : labels) out[l.video_id].push_back(&l);
  return out;
}

// Source lines of one video's records, used to point violations at a line.
struct VideoLines {
  std::size_t video = 0;
  std::vector<std::size_t> shots;
  std::vector<std::size_t> tracks;
  std::vector<std::vector<std::size_t>> detections;

  std::size_t locate(const std::string& path) const {
    std::size_t i = 0, k = 0;
    if (std::sscanf(path.c_str(), "tracks[%zu].detections[%zu]", &i, &k) == 2 && i < detections.size() &&
        k < detections[i].size())
      return detections[i][k];
    if (std::sscanf(path.c_str(), "tracks[%zu]", &i) == 1 && i < tracks.size()) return tracks[i];
    if (std::sscanf(path.c_str(), "shots[%zu]", &i) == 1 && i < shots.size()) return shots[i];
    return video;
  }
};

// ---- checkpoint bytes ------------------------------------------------------

template <typename T>
void put(std::string& buf, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    buf.append(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
  } else {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf.append(raw, sizeof(T));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::array<unsigned char, sizeof(T)> raw;
    std::memcpy(raw.data(), bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    pos_ += sizeof(T);
    return std::bit_cast<T>(raw);
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw LoadError("checkpoint truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::string_view kMagic = "OBJTX1";

template <typename Real>
constexpr std::string_view dtype_name() {
  return std::is_same_v<Real, float> ? "f32" : "f64";
}

// ---- config value parsing --------------------------------------------------

std::string trim(std::string_view s) {
  const auto* ws = " \t\r";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t parse_uint(const std::string& key, std::string_view s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw ConfigError(key + ": expected a non-negative integer, got '" + std::string(s) + "'");
  return v;
}

std::string fmt_double(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

}  // namespace

// ---- corpus ----------------------------------------------------------------

void write_corpus(std::ostream& out, const Corpus& corpus) {
  auto labels = labels_by_video(corpus.labels);
  for (const auto& v : corpus.videos) {
    emit(out, video_json(v.video_id, v.movie_id, v.segment_id, v.duration));
    for (const auto& s : v.shots) {
      json j;
      j["kind"] = "shot";
      j["video_id"] = v.video_id;
      j["shot_id"] = s.shot_id;
      j["start"] = s.start;
      j["end"] = s.end;
      emit(out, j);
    }
    for (const auto& tr : v.tracks) {
      json j;
      j["kind"] = "track";
      j["video_id"] = v.video_id;
      j["track_id"] = tr.track_id;
      j["shot_id"] = tr.shot_id;
      emit(out, j);
      for (const auto& d : tr.detections) {
        json dj;
        dj["kind"] = "detection";
        dj["video_id"] = v.video_id;
        dj["track_id"] = tr.track_id;
        const json body = detection_json(d);
        for (const auto& [k, val] : body.items()) dj[k] = val;
        emit(out, dj);
      }
    }
    if (auto it = labels.find(v.video_id); it != labels.end())
      for (const Label* l : it->second) emit(out, label_json(*l));
  }
  if (!out) throw DataError("corpus write failed");
}

void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  auto out = open_out(path);
  write_corpus(out, corpus);
}

Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::vector<VideoLines> lines;
  std::map<std::int64_t, std::size_t> video_index;
  std::vector<std::map<std::int64_t, std::size_t>> track_index;
  std::vector<std::pair<Label, std::size_t>> labels;

  auto find_video = [&](const json& j, std::size_t line) -> std::size_t {
    auto id = field<std::int64_t>(j, "video_id", line);
    auto it = video_index.find(id);
    if (it == video_index.end()) throw LoadError("unknown video " + std::to_string(id), line);
    return it->second;
  };

  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (trim(text).empty()) continue;
    json j = parse_line(text, line);
    auto kind = field<std::string>(j, "kind", line);
    if (kind == "video") {
      Video v;
      v.video_id = field<std::int64_t>(j, "video_id", line);
      v.movie_id = field<std::int64_t>(j, "movie_id", line);
      v.segment_id = field<std::int64_t>(j, "segment_id", line);
      v.duration = field<double>(j, "duration", line);
      if (!video_index.emplace(v.video_id, corpus.videos.size()).second)
        throw LoadError("duplicate video " + std::to_string(v.video_id), line);
      corpus.videos.push_back(std::move(v));
      lines.push_back(VideoLines{line, {}, {}, {}});
      track_index.emplace_back();
    } else if (kind == "shot") {
      auto vi = find_video(j, line);
      track::ShotInterval s;
      s.shot_id = field<std::int64_t>(j, "shot_id", line);
      s.start = field<double>(j, "start", line);
      s.end = field<double>(j, "end", line);
      for (const auto& other : corpus.videos[vi].shots)
        if (other.shot_id == s.shot_id) throw LoadError("duplicate shot " + std::to_string(s.shot_id), line);
      corpus.videos[vi].shots.push_back(s);
      lines[vi].shots.push_back(line);
    } else if (kind == "track") {
      auto vi = find_video(j, line);
      track::Track tr;
      tr.track_id = field<std::int64_t>(j, "track_id", line);
      tr.shot_id = field<std::int64_t>(j, "shot_id", line);
      bool known_shot = false;
      for (const auto& s : corpus.videos[vi].shots) known_shot |= s.shot_id == tr.shot_id;
      if (!known_shot) throw LoadError("track refers to unknown shot " + std::to_string(tr.shot_id), line);
      if (!track_index[vi].emplace(tr.track_id, corpus.videos[vi].tracks.size()).second)
        throw LoadError("duplicate track " + std::to_string(tr.track_id), line);
      corpus.videos[vi].tracks.push_back(std::move(tr));
      lines[vi].tracks.push_back(line);
      lines[vi].detections.emplace_back();
    } else if (kind == "detection") {
      auto vi = find_video(j, line);
      auto tid = field<std::int64_t>(j, "track_id", line);
      auto it = track_index[vi].find(tid);
      if (it == track_index[vi].end()) throw LoadError("detection refers to unknown track " + std::to_string(tid), line);
      corpus.videos[vi].tracks[it->second].detections.push_back(read_detection(j, line));
      lines[vi].detections[it->second].push_back(line);
    } else if (kind == "label") {
      auto vi = find_video(j, line);
      Label l = read_label(j, line);
      if (l.track_id && !track_index[vi].count(*l.track_id))
        throw LoadError("label refers to unknown track " + std::to_string(*l.track_id), line);
      labels.emplace_back(std::move(l), line);
    } else {
      throw LoadError("unknown record kind '" + kind + "'", line);
    }
  }
  if (in.bad()) throw LoadError("read failed");

  for (std::size_t i = 0; i < corpus.videos.size(); ++i)
    if (auto v = track::validate_video(corpus.videos[i]))
      throw LoadError(v->message + " at " + v->path, lines[i].locate(v->path));
  for (auto& [l, l_line] : labels) corpus.labels.push_back(std::move(l));
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_corpus(in);
}

// ---- raw -------------------------------------------------------------------

void save_raw(const std::filesystem::path& path, const RawCorpus& raw) {
  auto out = open_out(path);
  auto labels = labels_by_video(raw.labels);
  for (const auto& v : raw.videos) {
    emit(out, video_json(v.video_id, v.movie_id, v.segment_id, v.duration));
    for (const auto& s : v.signatures) {
      json j;
      j["kind"] = "signature";
      j["video_id"] = v.video_id;
      j["t"] = s.t;
      j["hist"] = s.hist;
      emit(out, j);
    }
    for (const auto& f : v.frames) {
      json j;
      j["kind"] = "frame";
      j["video_id"] = v.video_id;
      j["t"] = f.t;
      json dets = json::array();
      for (const auto& d : f.detections) dets.push_back(detection_json(d));
      j["detections"] = std::move(dets);
      emit(out, j);
    }
    if (auto it = labels.find(v.video_id); it != labels.end())
      for (const Label* l : it->second) emit(out, label_json(*l));
  }
  if (!out) throw DataError("raw write failed");
}

RawCorpus load_raw(const std::filesystem::path& path) {
  auto in = open_in(path);
  RawCorpus raw;
  std::map<std::int64_t, std::size_t> index;
  auto find_video = [&](const json& j, std::size_t line) -> RawVideo& {
    auto id = field<std::int64_t>(j, "video_id", line);
    auto it = index.find(id);
    if (it == index.end()) throw LoadError("unknown video " + std::to_string(id), line);
    return raw.videos[it->second];
  };

  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (trim(text).empty()) continue;
    json j = parse_line(text, line);
    auto kind = field<std::string>(j, "kind", line);
    if (kind == "video") {
      RawVideo v;
      v.video_id = field<std::int64_t>(j, "video_id", line);
      v.movie_id = field<std::int64_t>(j, "movie_id", line);
      v.segment_id = field<std::int64_t>(j, "segment_id", line);
      v.duration = field<double>(j, "duration", line);
      if (!index.emplace(v.video_id, raw.videos.size()).second)
        throw LoadError("duplicate video " + std::to_string(v.video_id), line);
      raw.videos.push_back(std::move(v));
    } else if (kind == "signature") {
      auto& v = find_video(j, line);
      v.signatures.push_back({field<double>(j, "t", line), number_array(j, "hist", line)});
    } else if (kind == "frame") {
      auto& v = find_video(j, line);
      prep::RawFrame f;
      f.t = field<double>(j, "t", line);
      auto it = j.find("detections");
      if (it == j.end() || !it->is_array()) throw LoadError("missing field 'detections'", line);
      for (const auto& dj : *it) {
        if (!dj.is_object()) throw LoadError("detection is not an object", line);
        f.detections.push_back(read_detection(dj, line));
        if (f.detections.back().t != f.t) throw LoadError("detection time differs from frame time", line);
      }
      v.frames.push_back(std::move(f));
    } else if (kind == "label") {
      find_video(j, line);
      raw.labels.push_back(read_label(j, line));
    } else {
      throw LoadError("unknown record kind '" + kind + "'", line);
    }
  }
  return raw;
}

// ---- checkpoints -----------------------------------------------------------

template <typename Real>
void write_checkpoint(std::ostream& out, const model::ObjectTransformer<Real>& model) {
  std::string buf(kMagic);
  Config cfg = to_config(model.config());
  cfg.set("dtype", std::string(dtype_name<Real>()));
  const std::string text = cfg.str();
  put<std::uint64_t>(buf, text.size());
  buf += text;
  const auto& reg = model.registry();
  put<std::uint64_t>(buf, reg.size());
  for (const auto& p : reg) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.name.size()));
    buf += p.name;
    const auto& shape = p.value.shape();
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(shape.rank()));
    for (std::size_t d = 0; d < shape.rank(); ++d) put<std::uint64_t>(buf, shape[d]);
    for (Real x : p.value.data()) put<Real>(buf, x);
  }
  put<std::uint64_t>(buf, fnv1a(buf));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("checkpoint write failed");
}

template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const model::ObjectTransformer<Real>& model) {
  auto out = open_out(path, std::ios::binary);
  write_checkpoint(out, model);
}

template <typename Real>
model::ObjectTransformer<Real> read_checkpoint(std::istream& in) {
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < kMagic.size() + 8 || std::string_view(bytes).substr(0, kMagic.size()) != kMagic)
    throw LoadError("not a checkpoint (bad magic)");
  const std::string_view body = std::string_view(bytes).substr(0, bytes.size() - 8);
  Reader tail(std::string_view(bytes).substr(bytes.size() - 8));
  if (tail.get<std::uint64_t>() != fnv1a(body)) throw LoadError("checkpoint checksum mismatch");

  Reader r(body);
  r.take(kMagic.size());
  const auto text_len = r.get<std::uint64_t>();
  Config cfg;
  try {
    cfg = Config::parse(r.take(text_len));
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint config: ") + e.what());
  }
  const auto dtype = cfg.get_string("dtype", "");
  if (dtype != dtype_name<Real>())
    throw LoadError("checkpoint dtype " + dtype + " does not match " + std::string(dtype_name<Real>()));

  model::ModelConfig mc;
  try {
    mc = model_config(cfg);
    cfg.check_all_used();
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint config: ") + e.what());
  }
  model::ObjectTransformer<Real> model(mc, 0);
  auto& reg = model.registry();

  const auto n = r.get<std::uint64_t>();
  if (n != reg.size())
    throw LoadError("checkpoint holds " + std::to_string(n) + " tensors, model has " + std::to_string(reg.size()));
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = reg[i];
    const auto name_len = r.get<std::uint32_t>();
    const auto name = r.take(name_len);
    if (name != p.name) throw LoadError("checkpoint tensor " + std::string(name) + " where " + p.name + " expected");
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > num::Shape::kMaxRank) throw LoadError("bad rank for " + p.name);
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    if (!(num::Shape(std::span<const std::size_t>(dims)) == p.value.shape()))
      throw LoadError("shape mismatch for " + p.name);
    for (Real& x : p.value.data()) x = r.get<Real>();
  }
  if (!r.done()) throw LoadError("trailing bytes in checkpoint");
  return model;
}

template <typename Real>
model::ObjectTransformer<Real> load_checkpoint(const std::filesystem::path& path) {
  auto in = open_in(path, std::ios::binary);
  return read_checkpoint<Real>(in);
}

template void write_checkpoint<float>(std::ostream&, const model::ObjectTransformer<float>&);
template void write_checkpoint<double>(std::ostream&, const model::ObjectTransformer<double>&);
template void save_checkpoint<float>(const std::filesystem::path&, const model::ObjectTransformer<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const model::ObjectTransformer<double>&);
template model::ObjectTransformer<float> read_checkpoint<float>(std::istream&);
template model::ObjectTransformer<double> read_checkpoint<double>(std::istream&);
template model::ObjectTransformer<float> load_checkpoint<float>(const std::filesystem::path&);
template model::ObjectTransformer<double> load_checkpoint<double>(const std::filesystem::path&);

// ---- config ----------------------------------------------------------------

Config Config::parse(std::string_view text) {
  Config c;
  std::size_t line = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++line;
    const std::string s = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    if (s.empty() || s[0] == '#') continue;
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line) + ": expected key=value");
    auto key = trim(std::string_view(s).substr(0, eq));
    auto value = trim(std::string_view(s).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line) + ": empty key");
    if (c.has(key)) throw ConfigError("line " + std::to_string(line) + ": duplicate key " + key);
    c.set(key, value);
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string Config::str() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

const std::string* Config::find(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  used_.insert(key);
  return &it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  const auto* v = find(key);
  return v ? *v : fallback;
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  char* end = nullptr;
  const double x = std::strtod(v->c_str(), &end);
  if (v->empty() || end != v->c_str() + v->size()) throw ConfigError(key + ": expected a number, got '" + *v + "'");
  return x;
}

std::uint64_t Config::get_uint(const std::string& key, std::uint64_t fallback) const {
  const auto* v = find(key);
  return v ? parse_uint(key, *v) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + *v + "'");
}

std::vector<std::size_t> Config::get_list(const std::string& key, const std::vector<std::size_t>& fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  std::vector<std::size_t> out;
  std::string_view rest = *v;
  while (true) {
    auto comma = rest.find(',');
    out.push_back(parse_uint(key, trim(rest.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return out;
}

void Config::check_all_used() const {
  for (const auto& [k, v] : values_)
    if (!used_.count(k)) throw ConfigError("unknown config key " + k);
}

model::ModelConfig model_config(const Config& c, const model::ModelConfig& base) {
  model::ModelConfig m = base;
  m.hidden = c.get_uint("model.hidden", m.hidden);
  m.layers = c.get_uint("model.layers", m.layers);
  m.heads = c.get_uint("model.heads", m.heads);
  m.head_dim = c.get_uint("model.head_dim", m.head_dim);
  m.ffn_dim = c.get_uint("model.ffn_dim", m.ffn_dim);
  m.dropout = c.get_double("model.dropout", m.dropout);
  m.n_instance_slots = c.get_uint("model.n_instance_slots", m.n_instance_slots);
  m.n_shot_slots = c.get_uint("model.n_shot_slots", m.n_shot_slots);
  m.d_label = c.get_uint("model.d_label", m.d_label);
  m.d_z = c.get_uint("model.d_z", m.d_z);
  m.token_cap = c.get_uint("model.token_cap", m.token_cap);
  m.include_objects = c.get_bool("model.include_objects", m.include_objects);
  m.mask_hidden = c.get_uint("model.mask_hidden", m.mask_hidden);
  m.task_outputs = c.get_uint("model.task_outputs", m.task_outputs);
  m.fusion_inputs = c.get_uint("model.fusion_inputs", m.fusion_inputs);
  m.validate();
  return m;
}

Config to_config(const model::ModelConfig& m) {
  Config c;
  c.set("model.hidden", std::to_string(m.hidden));
  c.set("model.layers", std::to_string(m.layers));
  c.set("model.heads", std::to_string(m.heads));
  c.set("model.head_dim", std::to_string(m.head_dim));
  c.set("model.ffn_dim", std::to_string(m.ffn_dim));
  c.set("model.dropout", fmt_double(m.dropout));
  c.set("model.n_instance_slots", std::to_string(m.n_instance_slots));
  c.set("model.n_shot_slots", std::to_string(m.n_shot_slots));
  c.set("model.d_label", std::to_string(m.d_label));
  c.set("model.d_z", std::to_string(m.d_z));
  c.set("model.token_cap", std::to_string(m.token_cap));
  c.set("model.include_objects", m.include_objects ? "true" : "false");
  c.set("model.mask_hidden", std::to_string(m.mask_hidden));
  c.set("model.task_outputs", std::to_string(m.task_outputs));
  c.set("model.fusion_inputs", std::to_string(m.fusion_inputs));
  return c;
}

synth::GenConfig gen_config(const Config& c, const synth::GenConfig& base) {
  synth::GenConfig g = base;
  g.n_movies = c.get_uint("gen.n_movies", g.n_movies);
  g.segments_per_movie = c.get_uint("gen.segments_per_movie", g.segments_per_movie);
  g.segment_length_s = c.get_double("gen.segment_length_s", g.segment_length_s);
  g.instances_per_segment = c.get_uint("gen.instances_per_segment", g.instances_per_segment);
  g.detections_per_instance = c.get_uint("gen.detections_per_instance", g.detections_per_instance);
  g.d_z = c.get_uint("gen.d_z", g.d_z);
  g.d_label = c.get_uint("gen.d_label", g.d_label);
  g.theme_dim = c.get_uint("gen.theme_dim", g.theme_dim);
  g.n_themes = c.get_uint("gen.n_themes", g.n_themes);
  g.noise_scale = c.get_double("gen.noise_scale", g.noise_scale);
  g.theme_scale = c.get_double("gen.theme_scale", g.theme_scale);
  g.role_circle = c.get_double("gen.role_circle", g.role_circle);
  g.advance_prob = c.get_double("gen.advance_prob", g.advance_prob);
  g.label_smoothing = c.get_double("gen.label_smoothing", g.label_smoothing);
  g.short_term_margin = c.get_double("gen.short_term_margin", g.short_term_margin);
  g.min_shot_s = c.get_uint("gen.min_shot_s", g.min_shot_s);
  g.max_shot_s = c.get_uint("gen.max_shot_s", g.max_shot_s);
  g.split_tracks_at_shots = c.get_bool("gen.split_tracks_at_shots", g.split_tracks_at_shots);
  g.seed = c.get_uint("gen.seed", g.seed);
  g.validate();
  return g;
}

pretrain::PretrainConfig pretrain_config(const Config& c, const pretrain::PretrainConfig& base) {
  pretrain::PretrainConfig p = base;
  p.iterations = c.get_uint("pretrain.iterations", p.iterations);
  p.batch = c.get_uint("pretrain.batch", p.batch);
  p.objective = pretrain::parse_objective(c.get_string("pretrain.objective", std::string(to_string(p.objective))));
  p.base_lr = c.get_double("pretrain.base_lr", p.base_lr);
  p.warmup_frac = c.get_double("pretrain.warmup_frac", p.warmup_frac);
  p.weight_decay = c.get_double("pretrain.weight_decay", p.weight_decay);
  p.mask_fraction = c.get_double("pretrain.mask_fraction", p.mask_fraction);
  p.span_length = c.get_double("pretrain.span_length", p.span_length);
  p.stride = c.get_double("pretrain.stride", p.stride);
  p.seed = c.get_uint("pretrain.seed", p.seed);
  if (p.batch == 0 || p.base_lr <= 0.0 || p.mask_fraction <= 0.0 || p.mask_fraction > 1.0 ||
      p.warmup_frac < 0.0 || p.warmup_frac > 1.0 || p.span_length <= 0.0 || p.stride <= 0.0)
    throw ConfigError("pretrain: invalid settings");
  return p;
}

finetune::FinetuneConfig finetune_config(const Config& c, const finetune::FinetuneConfig& base) {
  finetune::FinetuneConfig f = base;
  f.epochs = c.get_list("finetune.epochs", f.epochs);
  f.batches = c.get_list("finetune.batches", f.batches);
  f.base_lr = c.get_double("finetune.base_lr", f.base_lr);
  f.warmup_frac = c.get_double("finetune.warmup_frac", f.warmup_frac);
  f.weight_decay = c.get_double("finetune.weight_decay", f.weight_decay);
  f.span_length = c.get_double("finetune.span_length", f.span_length);
  f.stride = c.get_double("finetune.stride", f.stride);
  f.backbone = finetune::parse_backbone(c.get_string("finetune.backbone", std::string(to_string(f.backbone))));
  f.seed = c.get_uint("finetune.seed", f.seed);
  for (auto e : f.epochs)
    if (e == 0) throw ConfigError("finetune.epochs: zero");
  for (auto b : f.batches)
    if (b == 0) throw ConfigError("finetune.batches: zero");
  if (f.base_lr <= 0.0 || f.span_length <= 0.0 || f.stride <= 0.0) throw ConfigError("finetune: invalid settings");
  return f;
}

finetune::FusionConfig fusion_config(const Config& c, const finetune::FusionConfig& base) {
  finetune::FusionConfig f = base;
  f.iterations = c.get_uint("fusion.iterations", f.iterations);
  f.batch = c.get_uint("fusion.batch", f.batch);
  f.base_lr = c.get_double("fusion.base_lr", f.base_lr);
  f.warmup_frac = c.get_double("fusion.warmup_frac", f.warmup_frac);
  f.weight_decay = c.get_double("fusion.weight_decay", f.weight_decay);
  f.seed = c.get_uint("fusion.seed", f.seed);
  if (f.batch == 0 || f.base_lr <= 0.0) throw ConfigError("fusion: invalid settings");
  return f;
}

// ---- metrics ---------------------------------------------------------------

void MetricsLog::step(std::size_t step, std::string_view metric, double value) {
  json j;
  j["step"] = step;
  j["metric"] = metric;
  j["value"] = value;
  *out_ << j.dump() << '\n';
}

void MetricsLog::split(std::string_view split, std::string_view metric, double value,
                       const std::map<std::string, std::int64_t>& context) {
  json j;
  j["split"] = split;
  j["metric"] = metric;
  j["value"] = value;
  for (const auto& [k, v] : context) j[k] = v;
  *out_ << j.dump() << '\n';
}

}  // namespace objtx::io
