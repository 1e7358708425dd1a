#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "doctest.h"
#include "fit/data.hpp"
#include "fit/metrics.hpp"

using namespace fit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("fit_data_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int counter;
};
int TempDir::counter = 0;

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

TempDir make_ml_fixture() {
  TempDir dir;
  // Four movies; movie 40 is never rated and must be dropped. Movie 30 is
  // rated only by the single-event user 3, which keeps it in the catalog as
  // the sole negative candidate for users 1 and 2.
  write_file(dir.path / "movies.dat",
             "10::Alpha (1990)::Comedy|Drama\n"
             "20::Beta (1991)::Drama\n"
             "30::Gamma (1992)::Horror\n"
             "40::Delta (1993)::Horror\n");
  // Timestamps deliberately out of order for user 2.
  write_file(dir.path / "ratings.dat",
             "1::10::5::100\n"
             "1::20::3::200\n"
             "2::20::4::900\n"
             "2::10::4::800\n"
             "3::30::1::50\n");
  return dir;
}

}  // namespace

// ---------------------------------------------------------------------------
// MovieLens parsing
// ---------------------------------------------------------------------------

TEST_CASE("load_movielens: dense ids, first genre, time order, dropped movies") {
  TempDir dir = make_ml_fixture();
  InteractionLog log = load_movielens(dir.path.string());

  CHECK(log.users.size() == 3);
  CHECK(log.n_items == 3);       // movie 40 dropped (never rated)
  CHECK(log.raw_movies == 4);
  CHECK(log.rated_movies == 3);
  CHECK(log.n_ratings == 5);
  // Categories: 10 -> Comedy (first of "Comedy|Drama"), 20 -> Drama, 30 -> Horror.
  CHECK(log.n_cats == 3);
  CHECK(log.item_cat[0] != log.item_cat[1]);

  // User 2's events must be time-sorted even though the file is not.
  REQUIRE(log.users[1].size() == 2);
  CHECK(log.users[1][0].ts == 800);
  CHECK(log.users[1][1].ts == 900);
  CHECK(log.users[1][0].item == 0);  // original id 10 -> dense 0
  CHECK(log.users[1][1].item == 1);

  // All ids in-range.
  for (const auto& user : log.users)
    for (const auto& ev : user) {
      CHECK(ev.item >= 0);
      CHECK(ev.item < log.n_items);
      CHECK(ev.cat >= 0);
      CHECK(ev.cat < log.n_cats);
    }
}

TEST_CASE("load_movielens: malformed and missing input") {
  TempDir dir;
  CHECK_THROWS_AS(load_movielens(dir.path.string()), std::runtime_error);

  write_file(dir.path / "movies.dat", "10::Alpha (1990)::Comedy\n");
  write_file(dir.path / "ratings.dat", "1::10::5\n");  // missing timestamp
  try {
    load_movielens(dir.path.string());
    CHECK(false);
  } catch (const std::runtime_error& e) {
    // Diagnostics carry the file and line number.
    CHECK(std::string(e.what()).find("ratings.dat") != std::string::npos);
    CHECK(std::string(e.what()).find(":1") != std::string::npos);
  }

  write_file(dir.path / "ratings.dat", "1::999::5::100\n");  // unknown movie
  CHECK_THROWS(load_movielens(dir.path.string()));

  write_file(dir.path / "ratings.dat", "");
  CHECK_THROWS(load_movielens(dir.path.string()));
}

// ---------------------------------------------------------------------------
// Example construction
// ---------------------------------------------------------------------------

TEST_CASE("build_examples: leave-last-out with negative sampling") {
  TempDir dir = make_ml_fixture();
  InteractionLog log = load_movielens(dir.path.string());
  BuildResult built = build_examples(log, 50, 7);

  // Users 1 and 2 have >= 2 events: one positive + one negative each.
  // User 3 has a single event and is dropped.
  CHECK(built.examples.size() == 4);
  CHECK(built.dropped_users == 1);

  for (std::size_t i = 0; i < built.examples.size(); i += 2) {
    const TrainingExample& pos = built.examples[i];
    const TrainingExample& neg = built.examples[i + 1];
    CHECK(pos.label == 1);
    CHECK(neg.label == 0);
    CHECK(pos.user == neg.user);
    CHECK(pos.seq == neg.seq);  // shared history
    // Positive = the user's last event; history = everything before it.
    const auto& events = log.users[static_cast<std::size_t>(pos.user)];
    CHECK(pos.cand_item == events.back().item);
    REQUIRE(pos.seq.size() == events.size() - 1);
    for (std::size_t k = 0; k < pos.seq.size(); ++k)
      CHECK(pos.seq[k].first == events[k].item);
    // The negative item was never interacted with by this user.
    for (const auto& ev : events) CHECK(ev.item != neg.cand_item);
    // Candidate categories are consistent with the catalog.
    CHECK(neg.cand_cat == log.item_cat[static_cast<std::size_t>(neg.cand_item)]);
  }
}

TEST_CASE("build_examples: max_len truncates to the most recent events") {
  TempDir dir;
  write_file(dir.path / "movies.dat",
             "1::A::X\n2::B::X\n3::C::X\n4::D::X\n5::E::X\n6::F::Y\n");
  // User 2 keeps movie 6 in the catalog so user 1 has a possible negative.
  write_file(dir.path / "ratings.dat",
             "1::1::5::10\n1::2::5::20\n1::3::5::30\n1::4::5::40\n1::5::5::50\n"
             "2::6::3::10\n");
  InteractionLog log = load_movielens(dir.path.string());
  BuildResult built = build_examples(log, 2, 3);
  REQUIRE(built.examples.size() == 2);
  const auto& seq = built.examples[0].seq;
  REQUIRE(seq.size() == 2);
  // Last event (item 5, dense 4) is the candidate; history keeps items 3,4.
  CHECK(built.examples[0].cand_item == 4);
  CHECK(seq[0].first == 2);
  CHECK(seq[1].first == 3);
}

TEST_CASE("build_examples: users without possible examples are dropped and counted") {
  TempDir dir;
  write_file(dir.path / "movies.dat", "1::A::X\n2::B::Y\n3::C::Y\n");
  // User 1: single event. User 2: two events but has touched the entire
  // catalog, so no negative can exist. User 3: fine.
  write_file(dir.path / "ratings.dat",
             "1::1::5::10\n"
             "2::1::4::10\n2::2::4::20\n2::3::4::30\n"
             "3::1::4::10\n3::2::4::20\n");
  InteractionLog log = load_movielens(dir.path.string());
  BuildResult built = build_examples(log, 50, 1);
  CHECK(built.dropped_users == 2);
  CHECK(built.examples.size() == 2);
  CHECK(built.examples[0].user == 2);
  CHECK(built.examples[1].cand_item == 2);  // the only never-touched item
}

TEST_CASE("build_examples is deterministic in the seed") {
  TempDir dir = make_ml_fixture();
  InteractionLog log = load_movielens(dir.path.string());
  const auto a = build_examples(log, 50, 42).examples;
  const auto b = build_examples(log, 50, 42).examples;
  CHECK(a == b);
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

TEST_CASE("synthetic_planted: structure and label rule") {
  SyntheticData data = synthetic_planted(5, 200, 32, 8);
  CHECK(data.n_items == 32);
  CHECK(data.n_clusters == 8);
  CHECK(data.n_cats == 8);
  CHECK_FALSE(data.degenerate);
  CHECK(data.examples.size() == 400);  // one positive + one negative per user

  // Items fall into equal-size contiguous cluster blocks.
  for (int i = 0; i < 32; ++i) CHECK(data.item_cluster[i] == i / 4);

  int positives = 0;
  for (const TrainingExample& ex : data.examples) {
    // Label == 1 iff candidate cluster is the realized majority cluster
    // (ties toward the lowest cluster id) — recomputed here independently.
    std::vector<int> counts(static_cast<std::size_t>(data.n_clusters), 0);
    for (const auto& [item, cat] : ex.seq) {
      CHECK(data.item_cluster[item] == cat);  // category doubles as cluster
      ++counts[static_cast<std::size_t>(cat)];
    }
    const int maj = static_cast<int>(
        std::max_element(counts.begin(), counts.end()) - counts.begin());
    const int cand_cluster = data.item_cluster[ex.cand_item];
    CHECK(ex.label == (cand_cluster == maj ? 1 : 0));
    CHECK(ex.cand_cat == cand_cluster);
    positives += ex.label;
    CHECK(ex.seq.size() >= 8);
    CHECK(ex.seq.size() <= 16);
  }
  CHECK(positives == 200);
}

TEST_CASE("synthetic_planted: an oracle that sees the sequence separates perfectly") {
  SyntheticData data = synthetic_planted(11, 500, 64, 16);
  std::vector<float> oracle_scores, pop_scores;
  std::vector<int> labels;
  std::vector<int> popularity(static_cast<std::size_t>(data.n_items), 0);
  for (const TrainingExample& ex : data.examples)
    if (ex.label == 1) ++popularity[static_cast<std::size_t>(ex.cand_item)];

  for (const TrainingExample& ex : data.examples) {
    std::vector<int> counts(static_cast<std::size_t>(data.n_clusters), 0);
    for (const auto& [item, cat] : ex.seq) ++counts[static_cast<std::size_t>(cat)];
    const int maj = static_cast<int>(
        std::max_element(counts.begin(), counts.end()) - counts.begin());
    oracle_scores.push_back(data.item_cluster[ex.cand_item] == maj ? 1.0f : 0.0f);
    // Leave-one-out: an example must not count itself in its own popularity
    // score, or every positive gets a spurious +1.
    pop_scores.push_back(
        static_cast<float>(popularity[static_cast<std::size_t>(ex.cand_item)] - ex.label));
    labels.push_back(ex.label);
  }
  // The Bayes rule (sequence x candidate) gets AUC 1; candidate popularity
  // alone stays near chance, so the planted signal is not an item prior.
  CHECK(auc(oracle_scores, labels) == doctest::Approx(1.0));
  CHECK(std::abs(auc(pop_scores, labels) - 0.5) < 0.05);
}

TEST_CASE("synthetic_planted: degenerate single-cluster flag") {
  SyntheticData data = synthetic_planted(3, 50, 16, 1);
  CHECK(data.degenerate);
  for (const TrainingExample& ex : data.examples) CHECK(ex.label == 1);
}

TEST_CASE("synthetic_planted: validation") {
  CHECK_THROWS(synthetic_planted(1, 10, 33, 8));   // items not divisible
  CHECK_THROWS(synthetic_planted(1, 10, 32, 0));
  CHECK_THROWS(synthetic_planted(1, 0, 32, 8));
  CHECK_THROWS(synthetic_planted(1, 10, 32, 8, 12, 8));  // seq_min > seq_max
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

TEST_CASE("split_examples: user-disjoint with pinned proportions") {
  SyntheticData data = synthetic_planted(9, 300, 32, 8);
  Split split = split_examples(data.examples, 0.2f, 17);

  CHECK(split.train.size() + split.val.size() + split.test.size() ==
        data.examples.size());

  std::set<int> train_users, val_users, test_users;
  for (const auto& e : split.train) train_users.insert(e.user);
  for (const auto& e : split.val) val_users.insert(e.user);
  for (const auto& e : split.test) test_users.insert(e.user);

  for (int u : val_users) CHECK(train_users.count(u) == 0);
  for (int u : test_users) {
    CHECK(train_users.count(u) == 0);
    CHECK(val_users.count(u) == 0);
  }

  // 10% of 300 users are test; 20% of the remaining 270 are validation.
  CHECK(test_users.size() == 30);
  const long want_val = std::lround(0.2 * 270);
  CHECK(std::abs(static_cast<long>(val_users.size()) - want_val) <= 1);

  // Same seed, same split; different seed, different test users.
  Split again = split_examples(data.examples, 0.2f, 17);
  CHECK(again.test.size() == split.test.size());
  CHECK(std::equal(split.test.begin(), split.test.end(), again.test.begin()));
  Split other = split_examples(data.examples, 0.2f, 18);
  std::set<int> other_test;
  for (const auto& e : other.test) other_test.insert(e.user);
  CHECK(other_test != test_users);
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

TEST_CASE("make_batches: sizes, padding, mask, id shift") {
  SyntheticData data = synthetic_planted(2, 50, 16, 4, 3, 6);
  std::vector<TrainingExample> ten(data.examples.begin(), data.examples.begin() + 10);
  auto batches = make_batches(ten, 4, 8, nullptr);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size == 4);
  CHECK(batches[1].size == 4);
  CHECK(batches[2].size == 2);

  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const Batch& b = batches[bi];
    CHECK(b.seq_len == 8);
    for (int e = 0; e < b.size; ++e) {
      const TrainingExample& ex = ten[bi * 4 + static_cast<std::size_t>(e)];
      CHECK(b.user_ids[static_cast<std::size_t>(e)] == ex.user + 1);
      CHECK(b.cand_items[static_cast<std::size_t>(e)] == ex.cand_item + 1);
      CHECK(b.cand_cats[static_cast<std::size_t>(e)] == ex.cand_cat + 1);
      CHECK(b.labels.at(e) == static_cast<float>(ex.label));
      for (int k = 0; k < b.seq_len; ++k) {
        const std::size_t r = static_cast<std::size_t>(e) * 8 + static_cast<std::size_t>(k);
        if (k < static_cast<int>(ex.seq.size())) {
          CHECK(b.seq_items[r] == ex.seq[static_cast<std::size_t>(k)].first + 1);
          CHECK(b.seq_cats[r] == ex.seq[static_cast<std::size_t>(k)].second + 1);
          CHECK(b.mask.at(static_cast<int>(r)) == 1.0f);
        } else {
          CHECK(b.seq_items[r] == 0);  // padding row
          CHECK(b.seq_cats[r] == 0);
          CHECK(b.mask.at(static_cast<int>(r)) == 0.0f);
        }
      }
    }
  }

  // Sequences longer than max_seq_len are a caller bug (the example
  // builders already truncate) and are rejected loudly.
  std::vector<TrainingExample> one = {ten[0]};
  one[0].seq = {{1, 0}, {2, 0}, {3, 0}, {4, 1}};
  CHECK_THROWS(make_batches(one, 1, 2, nullptr));
}

TEST_CASE("make_batches: shuffling is seed-deterministic and order-preserving without rng") {
  SyntheticData data = synthetic_planted(4, 40, 16, 4);
  Rng r1(123), r2(123), r3(321);
  auto a = make_batches(data.examples, 16, 16, &r1);
  auto b = make_batches(data.examples, 16, 16, &r2);
  auto c = make_batches(data.examples, 16, 16, &r3);
  CHECK(a[0].cand_items == b[0].cand_items);
  CHECK(a[0].cand_items != c[0].cand_items);

  auto plain = make_batches(data.examples, 16, 16, nullptr);
  for (int e = 0; e < plain[0].size; ++e)
    CHECK(plain[0].cand_items[static_cast<std::size_t>(e)] ==
          data.examples[static_cast<std::size_t>(e)].cand_item + 1);
}

// ---------------------------------------------------------------------------
// Example cache file
// ---------------------------------------------------------------------------

TEST_CASE("example cache: round trip is exact and byte-stable") {
  SyntheticData data = synthetic_planted(8, 60, 32, 8);
  TempDir dir;
  const std::string p1 = (dir.path / "a.fitd").string();
  const std::string p2 = (dir.path / "b.fitd").string();
  save_examples(p1, data.examples, data.n_users, data.n_items, data.n_cats, 16);

  CacheContents back = load_examples(p1);
  CHECK(back.examples == data.examples);
  CHECK(back.n_users == data.n_users);
  CHECK(back.n_items == data.n_items);
  CHECK(back.n_cats == data.n_cats);
  CHECK(back.max_len == 16);

  // Writing the loaded contents again produces identical bytes.
  save_examples(p2, back.examples, back.n_users, back.n_items, back.n_cats, back.max_len);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string bytes1((std::istreambuf_iterator<char>(f1)), {});
  const std::string bytes2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(bytes1 == bytes2);
  CHECK_FALSE(bytes1.empty());
}

TEST_CASE("example cache: corruption is rejected") {
  SyntheticData data = synthetic_planted(8, 20, 8, 4);
  TempDir dir;
  const std::string path = (dir.path / "c.fitd").string();
  save_examples(path, data.examples, data.n_users, data.n_items, data.n_cats, 16);

  // Truncated file.
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<long>(bytes.size() / 2));
  out.close();
  CHECK_THROWS(load_examples(path));

  // Bad magic.
  bytes[0] = 'X';
  std::ofstream out2(path, std::ios::binary | std::ios::trunc);
  out2.write(bytes.data(), static_cast<long>(bytes.size()));
  out2.close();
  CHECK_THROWS(load_examples(path));

  // Trailing garbage.
  const std::string p3 = (dir.path / "d.fitd").string();
  save_examples(p3, data.examples, data.n_users, data.n_items, data.n_cats, 16);
  std::ofstream app(p3, std::ios::binary | std::ios::app);
  app << "zz";
  app.close();
  CHECK_THROWS(load_examples(p3));

  CHECK_THROWS(load_examples((dir.path / "missing.fitd").string()));
}

TEST_CASE("sequence length larger than the cache max_len is rejected") {
  std::vector<TrainingExample> one(1);
  one[0].seq = {{0, 0}, {1, 0}, {2, 0}};
  TempDir dir;
  CHECK_THROWS(save_examples((dir.path / "e.fitd").string(), one, 1, 3, 1, 2));
}
