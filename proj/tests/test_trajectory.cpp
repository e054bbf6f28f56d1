#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "rsw/error.hpp"
#include "rsw/rng.hpp"
#include "rsw/trajectory.hpp"
#include "support/test_util.hpp"

using namespace rsw;
namespace fs = std::filesystem;

namespace {

Transition make_tr(int64_t ep, int64_t t, bool terminal = false) {
  Transition tr;
  tr.episode_id = ep;
  tr.t = t;
  tr.state = {1.0, 2.0};
  tr.action = {1.0};
  tr.reward = 0.5;
  tr.next_state = {1.5, 2.5};
  tr.collision_flag = 0;
  tr.lane_index = 3;
  tr.terminal = terminal;
  tr.behavior_logprob = -0.7;
  return tr;
}

fs::path temp_file(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rsw_test_" + name);
  fs::remove(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("append enforces per-episode ordering") {
  Dataset d("highway");
  d.append(make_tr(0, 0));
  d.append(make_tr(0, 1));
  CHECK(d.size() == 2);
  CHECK_THROWS_AS(d.append(make_tr(0, 0)), DataError);  // out of order
  CHECK_THROWS_AS(d.append(make_tr(0, 1)), DataError);  // duplicate (e, t)
  d.append(make_tr(0, 5, true));
  CHECK_THROWS_AS(d.append(make_tr(0, 6)), DataError);  // after terminal
}

TEST_CASE("new episodes must not reuse smaller ids") {
  Dataset d("highway");
  d.append(make_tr(3, 0, true));
  CHECK_THROWS_AS(d.append(make_tr(2, 0, true)), DataError);
  d.append(make_tr(5, 0, true));
  CHECK(d.episodes().size() == 2);
}

TEST_CASE("episodes yields contiguous slices in order") {
  Dataset d("highway");
  const std::vector<int> lengths{40, 7, 3};
  for (size_t e = 0; e < lengths.size(); ++e) {
    for (int t = 0; t < lengths[e]; ++t)
      d.append(make_tr(static_cast<int64_t>(e), t, t == lengths[e] - 1));
  }
  const auto eps = d.episodes();
  REQUIRE(eps.size() == 3);
  CHECK(eps[0].size() == 40);
  CHECK(eps[1].size() == 7);
  CHECK(eps[2].size() == 3);

  Dataset empty("highway");
  CHECK(empty.episodes().empty());

  Dataset single("highway");
  single.append(make_tr(0, 0, true));
  REQUIRE(single.episodes().size() == 1);
  CHECK(single.episodes()[0].size() == 1);
}

TEST_CASE("save/load round-trip is lossless and bit-exact") {
  Dataset d("highway");
  Rng rng(7);
  int64_t ep = 0;
  int64_t t = 0;
  for (int i = 0; i < 1000; ++i) {
    Transition tr = make_tr(ep, t);
    tr.state = {rng.uniform(-1e6, 1e6), rng.normal(), 0.1, -0.0};
    tr.next_state = {rng.uniform(), 1e-300, rng.normal(), 3.0};
    tr.reward = rng.normal() * 1e-3;
    tr.behavior_logprob = -rng.uniform(0.0, 50.0);
    tr.terminal = (i % 37) == 36;
    d.append(std::move(tr));
    if ((i % 37) == 36) {
      ++ep;
      t = 0;
    } else {
      ++t;
    }
  }
  const auto path = temp_file("roundtrip.jsonl");
  d.save(path);
  const Dataset back = Dataset::load(path);
  CHECK(back == d);

  // two saves of the same dataset are byte-identical
  const auto path2 = temp_file("roundtrip2.jsonl");
  d.save(path2);
  CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("empty dataset round-trips") {
  Dataset d("reacher");
  const auto path = temp_file("empty.jsonl");
  d.save(path);
  const Dataset back = Dataset::load(path);
  CHECK(back.empty());
  CHECK(back.env_id() == "reacher");
}

TEST_CASE("malformed record errors carry the line number") {
  const auto path = temp_file("broken.jsonl");
  Dataset d("highway");
  d.append(make_tr(0, 0));
  d.append(make_tr(0, 1, true));
  d.save(path);
  std::string text = slurp(path);
  std::ofstream out(path, std::ios::binary);
  out << text.substr(0, text.size() - 20);  // truncate the final record
  out.close();
  try {
    Dataset::load(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("schema version mismatch is an explicit error") {
  const auto path = temp_file("version.jsonl");
  std::ofstream out(path, std::ios::binary);
  out << R"({"schema_version":99,"env_id":"highway","shaped":false})" << "\n";
  out.close();
  try {
    Dataset::load(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
}

TEST_CASE("shaped transitions enforce the augmentation identity") {
  ShapedDataset d("highway");
  ShapedTransition st;
  static_cast<Transition&>(st) = make_tr(0, 0);
  st.shaped_reward = 1.25;
  st.augmented_reward = st.reward + st.shaped_reward;
  st.shaping_source = ShapingSource::kHfD;
  st.profile = Profile::kAgg;
  d.append(st);

  ShapedTransition bad = st;
  bad.t = 1;
  bad.augmented_reward += 1e-12;
  CHECK_THROWS_AS(d.append(bad), DataError);
}

TEST_CASE("bias_flagged and pc present exactly for LLM-HFBF") {
  ShapedDataset d("highway");
  ShapedTransition st;
  static_cast<Transition&>(st) = make_tr(0, 0);
  st.shaped_reward = -1.0;
  st.augmented_reward = st.reward + st.shaped_reward;
  st.shaping_source = ShapingSource::kHfD;
  st.bias_flagged = true;  // not allowed for HF-D
  CHECK_THROWS_AS(d.append(st), DataError);

  st.bias_flagged.reset();
  st.shaping_source = ShapingSource::kLlmHfbf;
  CHECK_THROWS_AS(d.append(st), DataError);  // missing for LLM-HFBF

  st.bias_flagged = false;
  st.pc = std::array<double, 3>{0.1, -0.2, 0.3};
  d.append(st);
  CHECK(d.size() == 1);
}

TEST_CASE("shaped save/load round-trip keeps annotations") {
  ShapedDataset d("highway");
  for (int t = 0; t < 5; ++t) {
    ShapedTransition st;
    static_cast<Transition&>(st) = make_tr(0, t, t == 4);
    st.shaped_reward = t * 0.5 - 1;
    st.augmented_reward = st.reward + st.shaped_reward;
    st.shaping_source = ShapingSource::kLlmHfbf;
    st.profile = Profile::kRad;
    st.bias_flagged = t % 2 == 0;
    st.pc = std::array<double, 3>{0.5 * t, -0.25, 1e-9};
    d.append(st);
  }
  const auto path = temp_file("shaped.jsonl");
  d.save(path);
  const ShapedDataset back = ShapedDataset::load(path);
  REQUIRE(back.size() == d.size());
  for (size_t i = 0; i < d.size(); ++i) {
    CHECK(back[i].shaped_reward == d[i].shaped_reward);
    CHECK(back[i].augmented_reward == d[i].augmented_reward);
    CHECK(back[i].shaping_source == d[i].shaping_source);
    CHECK(back[i].profile == d[i].profile);
    CHECK(back[i].bias_flagged == d[i].bias_flagged);
    CHECK(back[i].pc == d[i].pc);
  }
  CHECK_THROWS_AS(Dataset::load(path), DataError);  // wrong loader
}

TEST_CASE("csv export writes the documented columns") {
  Dataset d("highway");
  d.append(make_tr(0, 0, true));
  const auto path = temp_file("export.csv");
  d.export_csv(path);
  const std::string text = slurp(path);
  CHECK(text.rfind("episode_id,t,state,action,reward,next_state,collision_flag,"
                   "lane_index,terminal,behavior_logprob\n", 0) == 0);
  CHECK(text.find("\"[1.0,2.0]\"") != std::string::npos);
}

TEST_CASE("non-finite behavior_logprob is rejected") {
  Dataset d("highway");
  Transition tr = make_tr(0, 0);
  tr.behavior_logprob = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(d.append(tr), DataError);
}
