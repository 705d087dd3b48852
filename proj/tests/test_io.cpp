#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "objtx/errors.hpp"
#include "objtx/io.hpp"
#include "objtx/synthetic.hpp"
#include "objtx/verify.hpp"

using namespace objtx;
using namespace objtx::io;

namespace {

std::string bytes_of(const track::Corpus& c) {
  std::ostringstream out;
  write_corpus(out, c);
  return out.str();
}

track::Corpus generated(std::uint64_t seed = 0) {
  auto gc = verify::tiny_gen_config(seed);
  gc.n_movies = 3;
  return synth::generate_corpus(gc).corpus;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

std::string join(const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  return s;
}

std::string load_error(const std::string& text) {
  std::istringstream in(text);
  try {
    read_corpus(in);
  } catch (const LoadError& e) {
    return e.what();
  }
  return "";
}

template <typename Real>
std::string checkpoint_bytes(const model::ObjectTransformer<Real>& m) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, m);
  return out.str();
}

}  // namespace

TEST(Corpus, SaveLoadSaveIsByteIdentical) {
  const auto first = bytes_of(generated());
  std::istringstream in(first);
  const auto back = read_corpus(in);
  EXPECT_EQ(bytes_of(back), first);

  const auto dir = std::filesystem::temp_directory_path() / "objtx_io_test";
  std::filesystem::create_directories(dir);
  save_corpus(dir / "c.jsonl", back);
  EXPECT_EQ(bytes_of(load_corpus(dir / "c.jsonl")), first);
  std::filesystem::remove_all(dir);
}

TEST(Corpus, TruncatedFinalLineNamesTheLine) {
  auto text = bytes_of(generated());
  const auto n = lines_of(text).size();
  text.resize(text.size() - 20);
  const auto msg = load_error(text);
  EXPECT_NE(msg.find("line " + std::to_string(n)), std::string::npos) << msg;
}

TEST(Corpus, BrokenRecordsAreRejected) {
  auto lines = lines_of(bytes_of(generated()));
  // the first detection record
  const auto det = std::find_if(lines.begin(), lines.end(),
                                [](const std::string& l) { return l.find("\"detection\"") != std::string::npos; });
  ASSERT_NE(det, lines.end());
  const auto det_line = std::to_string(det - lines.begin() + 1);
  {
    auto bad = lines;
    auto& l = bad[det - lines.begin()];
    l.replace(l.find("\"track_id\":") + 11, 1, "9");
    const auto msg = load_error(join(bad));
    EXPECT_NE(msg.find("line " + det_line), std::string::npos) << msg;
  }
  {
    auto bad = lines;
    bad.erase(bad.begin());  // drop the first video record
    EXPECT_FALSE(load_error(join(bad)).empty());
  }
  {
    auto bad = lines;
    bad.push_back(lines[0]);  // duplicate video
    EXPECT_NE(load_error(join(bad)).find("line " + std::to_string(bad.size())), std::string::npos);
  }
  {
    auto bad = lines;
    auto record = nlohmann::json::parse(lines[det - lines.begin()]);
    record["box"] = {0.6, 0.2, 0.1, 0.3};
    bad[det - lines.begin()] = record.dump();
    const auto msg = load_error(join(bad));
    EXPECT_NE(msg.find("degenerate box"), std::string::npos) << msg;
    EXPECT_NE(msg.find("line " + det_line), std::string::npos) << msg;
  }
}

TEST(Raw, RoundTrip) {
  auto gen = synth::generate_corpus(verify::tiny_gen_config(2));
  RawCorpus raw;
  for (std::size_t i = 0; i < gen.corpus.videos.size(); ++i) {
    const auto& v = gen.corpus.videos[i];
    raw.videos.push_back(RawVideo{v.video_id, v.movie_id, v.segment_id, v.duration,
                                  synth::render_raw_stream(v, i), synth::render_signatures(v, i)});
  }
  const auto dir = std::filesystem::temp_directory_path() / "objtx_raw_test";
  std::filesystem::create_directories(dir);
  save_raw(dir / "a.jsonl", raw);
  save_raw(dir / "b.jsonl", load_raw(dir / "a.jsonl"));
  std::ifstream a(dir / "a.jsonl"), b(dir / "b.jsonl");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto mc = verify::tiny_model_config();
  model::ObjectTransformer<double> m(mc, 17);
  m.set_task_head(3, 4);
  m.set_fusion_layer(4, 5);
  const auto bytes = checkpoint_bytes(m);
  std::istringstream in(bytes);
  auto back = read_checkpoint<double>(in);
  ASSERT_EQ(back.registry().size(), m.registry().size());
  for (std::size_t i = 0; i < m.registry().size(); ++i) {
    EXPECT_EQ(back.registry()[i].name, m.registry()[i].name);
    EXPECT_TRUE(std::ranges::equal(back.registry()[i].value.data(), m.registry()[i].value.data()));
  }
  EXPECT_EQ(checkpoint_bytes(back), bytes);

  model::ObjectTransformer<float> f(mc, 17);
  const auto fbytes = checkpoint_bytes(f);
  std::istringstream fin(fbytes);
  EXPECT_EQ(checkpoint_bytes(read_checkpoint<float>(fin)), fbytes);
  std::istringstream wrong(fbytes);
  EXPECT_THROW(read_checkpoint<double>(wrong), LoadError);
}

TEST(Checkpoint, CorruptionIsDetected) {
  model::ObjectTransformer<double> m(verify::tiny_model_config(), 1);
  auto bytes = checkpoint_bytes(m);
  {
    auto flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x10;
    std::istringstream in(flipped);
    EXPECT_THROW(read_checkpoint<double>(in), LoadError);
  }
  {
    auto magic = bytes;
    magic[0] = 'X';
    std::istringstream in(magic);
    EXPECT_THROW(read_checkpoint<double>(in), LoadError);
  }
  {
    std::istringstream in(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(read_checkpoint<double>(in), LoadError);
  }
}

TEST(Config, ParsingAndTypedGetters) {
  auto c = Config::parse("# comment\n model.hidden = 16\n\nmodel.dropout=0.25\nflag=true\nlist=3, 5,10\n");
  EXPECT_EQ(c.get_uint("model.hidden", 0), 16u);
  EXPECT_EQ(c.get_double("model.dropout", 0), 0.25);
  EXPECT_TRUE(c.get_bool("flag", false));
  EXPECT_EQ(c.get_list("list", {}), (std::vector<std::size_t>{3, 5, 10}));
  EXPECT_EQ(c.get_uint("absent", 7), 7u);
  EXPECT_EQ(Config::parse(c.str()).str(), c.str());

  EXPECT_THROW(Config::parse("novalue\n"), ConfigError);
  EXPECT_THROW(Config::parse("a=1\na=2\n"), ConfigError);
  EXPECT_THROW(Config::parse("x=abc").get_double("x", 0), ConfigError);
  EXPECT_THROW(Config::parse("x=-3").get_uint("x", 0), ConfigError);
  EXPECT_THROW(Config::parse("x=maybe").get_bool("x", false), ConfigError);
}

TEST(Config, UnknownKeysAreReported) {
  auto c = Config::parse("model.hidden=16\nmodel.head_dim=8\nmodel.hiden=8\n");
  auto mc = model_config(c, verify::tiny_model_config());
  EXPECT_EQ(mc.hidden, 16u);
  try {
    c.check_all_used();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.hiden"), std::string::npos);
  }
}

TEST(Config, SectionBuildersValidate) {
  EXPECT_THROW(model_config(Config::parse("model.heads=3")), ConfigError);
  EXPECT_THROW(pretrain_config(Config::parse("pretrain.objective=contrastive")), ConfigError);
  EXPECT_THROW(finetune_config(Config::parse("finetune.backbone=lstm")), ConfigError);
  auto fc = finetune_config(Config::parse("finetune.epochs=3,5\nfinetune.batches=16"));
  EXPECT_EQ(fc.epochs, (std::vector<std::size_t>{3, 5}));
  const auto mc = verify::tiny_model_config();
  auto back = model_config(to_config(mc));
  EXPECT_EQ(to_config(back).str(), to_config(mc).str());
}

TEST(Metrics, OneJsonObjectPerLine) {
  std::ostringstream out;
  MetricsLog log(out);
  log.step(3, "loss", 0.5);
  log.split("test", "accuracy", 1.0, {{"epochs", 5}});
  auto lines = lines_of(out.str());
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_NE(lines[0].find("\"step\":3"), std::string::npos);
  EXPECT_NE(lines[1].find("\"split\":\"test\""), std::string::npos);
  EXPECT_NE(lines[1].find("\"epochs\":5"), std::string::npos);
}
