#include "fit/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_set>

namespace fit {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

// Splits a MovieLens line on the literal "::" separator.
std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find("::", pos);
    if (next == std::string::npos) {
      out.push_back(line.substr(pos));
      break;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + 2;
  }
  return out;
}

long long parse_ll(const std::string& s, const std::string& file, int line_no) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(file + ":" + std::to_string(line_no) +
                             ": malformed numeric field '" + s + "'");
  }
}

}  // namespace

InteractionLog load_movielens(const std::string& dir) {
  const std::string ratings_path = dir + "/ratings.dat";
  const std::string movies_path = dir + "/movies.dat";

  // movies.dat: MovieID::Title::Genres (genres pipe-separated). Only the
  // first genre is kept as the category feature.
  std::ifstream movies(movies_path);
  require(movies.good(), "cannot open " + movies_path);
  std::map<long long, std::string> movie_genre;  // original id -> first genre
  {
    std::string line;
    int line_no = 0;
    while (std::getline(movies, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto f = split_fields(line);
      require(f.size() == 3, movies_path + ":" + std::to_string(line_no) +
                                 ": expected 3 '::' fields, got " +
                                 std::to_string(f.size()));
      const long long id = parse_ll(f[0], movies_path, line_no);
      const std::string genres = f[2];
      const std::size_t bar = genres.find('|');
      movie_genre[id] = bar == std::string::npos ? genres : genres.substr(0, bar);
    }
  }
  require(!movie_genre.empty(), movies_path + ": no movies parsed");

  // ratings.dat: UserID::MovieID::Rating::Timestamp
  std::ifstream ratings(ratings_path);
  require(ratings.good(), "cannot open " + ratings_path);
  struct RawEvent {
    long long movie;
    long long ts;
  };
  std::map<long long, std::vector<RawEvent>> by_user;  // original user id
  std::set<long long> rated;
  std::int64_t n_ratings = 0;
  {
    std::string line;
    int line_no = 0;
    while (std::getline(ratings, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto f = split_fields(line);
      require(f.size() == 4, ratings_path + ":" + std::to_string(line_no) +
                                 ": expected 4 '::' fields, got " +
                                 std::to_string(f.size()));
      const long long user = parse_ll(f[0], ratings_path, line_no);
      const long long movie = parse_ll(f[1], ratings_path, line_no);
      parse_ll(f[2], ratings_path, line_no);  // rating value unused
      const long long ts = parse_ll(f[3], ratings_path, line_no);
      require(movie_genre.count(movie) != 0,
              ratings_path + ":" + std::to_string(line_no) + ": movie " +
                  std::to_string(movie) + " absent from movies.dat");
      by_user[user].push_back({movie, ts});
      rated.insert(movie);
      ++n_ratings;
    }
  }
  require(n_ratings > 0, ratings_path + ": no ratings parsed");

  // Dense re-indexing by ascending original id; categories by sorted
  // genre name. All deterministic.
  std::map<long long, int> item_id;
  for (long long m : rated) item_id.emplace(m, static_cast<int>(item_id.size()));
  std::set<std::string> genre_names;
  for (long long m : rated) genre_names.insert(movie_genre.at(m));
  std::map<std::string, int> cat_id;
  for (const std::string& g : genre_names) cat_id.emplace(g, static_cast<int>(cat_id.size()));

  InteractionLog log;
  log.n_items = static_cast<int>(item_id.size());
  log.n_cats = static_cast<int>(cat_id.size());
  log.n_ratings = n_ratings;
  log.raw_users = static_cast<int>(by_user.size());
  log.raw_movies = static_cast<int>(movie_genre.size());
  log.rated_movies = static_cast<int>(rated.size());
  log.item_cat.resize(static_cast<std::size_t>(log.n_items));
  for (const auto& [orig, dense] : item_id)
    log.item_cat[static_cast<std::size_t>(dense)] = cat_id.at(movie_genre.at(orig));

  log.users.reserve(by_user.size());
  for (auto& [orig_user, events] : by_user) {
    (void)orig_user;
    std::vector<Interaction> list;
    list.reserve(events.size());
    for (const RawEvent& e : events) {
      const int item = item_id.at(e.movie);
      list.push_back({item, log.item_cat[static_cast<std::size_t>(item)], e.ts});
    }
    // Strict total order: timestamp, then dense item id.
    std::sort(list.begin(), list.end(), [](const Interaction& a, const Interaction& b) {
      return a.ts != b.ts ? a.ts < b.ts : a.item < b.item;
    });
    log.users.push_back(std::move(list));
  }
  return log;
}

BuildResult build_examples(const InteractionLog& log, int max_len, std::uint64_t seed) {
  require(max_len > 0, "build_examples: max_len must be positive");
  Rng rng(seed);
  BuildResult out;
  for (std::size_t u = 0; u < log.users.size(); ++u) {
    const auto& events = log.users[u];
    if (events.size() < 2) {
      ++out.dropped_users;
      continue;
    }
    std::unordered_set<int> history;
    for (const Interaction& e : events) history.insert(e.item);
    // A user who has touched the whole catalog has no candidate negatives.
    if (static_cast<int>(history.size()) >= log.n_items) {
      ++out.dropped_users;
      continue;
    }

    const Interaction& last = events.back();
    std::vector<std::pair<int, int>> seq;
    const std::size_t t_end = events.size() - 1;
    const std::size_t t_begin =
        t_end > static_cast<std::size_t>(max_len) ? t_end - static_cast<std::size_t>(max_len)
                                                  : 0;
    for (std::size_t t = t_begin; t < t_end; ++t)
      seq.emplace_back(events[t].item, events[t].cat);

    TrainingExample pos;
    pos.user = static_cast<int>(u);
    pos.seq = seq;
    pos.cand_item = last.item;
    pos.cand_cat = last.cat;
    pos.label = 1;

    int neg_item = rng.below(log.n_items);
    while (history.count(neg_item) != 0) neg_item = rng.below(log.n_items);
    TrainingExample neg;
    neg.user = static_cast<int>(u);
    neg.seq = std::move(seq);
    neg.cand_item = neg_item;
    neg.cand_cat = log.item_cat[static_cast<std::size_t>(neg_item)];
    neg.label = 0;

    out.examples.push_back(std::move(pos));
    out.examples.push_back(std::move(neg));
  }
  return out;
}

SyntheticData synthetic_planted(std::uint64_t seed, int n_users, int n_items,
                                int n_clusters, int seq_min, int seq_max, float mix) {
  require(n_users > 0 && n_items > 0 && n_clusters > 0, "synthetic_planted: sizes > 0");
  require(n_items % n_clusters == 0, "synthetic_planted: n_items must divide by n_clusters");
  require(seq_min >= 1 && seq_max >= seq_min, "synthetic_planted: bad sequence lengths");
  const int sz = n_items / n_clusters;

  SyntheticData data;
  data.n_users = n_users;
  data.n_items = n_items;
  data.n_cats = n_clusters;
  data.n_clusters = n_clusters;
  data.max_seq_len = seq_max;
  data.degenerate = n_clusters == 1;
  data.item_cluster.resize(static_cast<std::size_t>(n_items));
  for (int i = 0; i < n_items; ++i) data.item_cluster[static_cast<std::size_t>(i)] = i / sz;

  Rng rng(seed);
  for (int u = 0; u < n_users; ++u) {
    const int pref = u % n_clusters;
    const int len = seq_min + rng.below(seq_max - seq_min + 1);
    std::vector<std::pair<int, int>> seq;
    std::vector<int> count(static_cast<std::size_t>(n_clusters), 0);
    seq.reserve(static_cast<std::size_t>(len));
    for (int t = 0; t < len; ++t) {
      const int c = rng.uniform() < static_cast<double>(mix) ? pref : rng.below(n_clusters);
      const int item = c * sz + rng.below(sz);
      seq.emplace_back(item, c);
      ++count[static_cast<std::size_t>(c)];
    }
    int maj = 0;
    for (int c = 1; c < n_clusters; ++c)
      if (count[static_cast<std::size_t>(c)] > count[static_cast<std::size_t>(maj)]) maj = c;

    const auto make_example = [&](int cluster) {
      TrainingExample ex;
      ex.user = u;
      ex.seq = seq;
      ex.cand_item = cluster * sz + rng.below(sz);
      ex.cand_cat = cluster;
      ex.label = cluster == maj ? 1 : 0;
      return ex;
    };
    data.examples.push_back(make_example(maj));

    // Negative cluster: prefer ones trailing the majority count by >= 2 so
    // the planted rule has a clean margin; fall back to any non-majority.
    std::vector<int> eligible;
    for (int c = 0; c < n_clusters; ++c)
      if (c != maj && count[static_cast<std::size_t>(c)] <= count[static_cast<std::size_t>(maj)] - 2)
        eligible.push_back(c);
    if (eligible.empty())
      for (int c = 0; c < n_clusters; ++c)
        if (c != maj) eligible.push_back(c);
    const int neg_cluster =
        eligible.empty() ? maj : eligible[static_cast<std::size_t>(rng.below(
                                     static_cast<int>(eligible.size())))];
    data.examples.push_back(make_example(neg_cluster));
  }
  return data;
}

Split split_examples(const std::vector<TrainingExample>& examples, float val_frac,
                     std::uint64_t seed) {
  require(!examples.empty(), "split_examples: no examples");
  require(val_frac >= 0.0f && val_frac < 1.0f, "split_examples: val_frac in [0,1)");
  std::set<int> user_set;
  for (const TrainingExample& e : examples) user_set.insert(e.user);
  std::vector<int> users(user_set.begin(), user_set.end());
  Rng rng(seed);
  shuffle(users, rng);

  const std::size_t n = users.size();
  const std::size_t n_test = static_cast<std::size_t>(
      std::llround(0.1 * static_cast<double>(n)));
  const std::size_t n_val = static_cast<std::size_t>(
      std::llround(static_cast<double>(val_frac) * static_cast<double>(n - n_test)));

  enum class Part { train, val, test };
  std::map<int, Part> part;
  for (std::size_t i = 0; i < n; ++i)
    part[users[i]] = i < n_test           ? Part::test
                     : i < n_test + n_val ? Part::val
                                          : Part::train;

  Split split;
  for (const TrainingExample& e : examples) {
    switch (part.at(e.user)) {
      case Part::train: split.train.push_back(e); break;
      case Part::val: split.val.push_back(e); break;
      case Part::test: split.test.push_back(e); break;
    }
  }
  return split;
}

std::vector<Batch> make_batches(const std::vector<TrainingExample>& examples,
                                int batch_size, int max_seq_len, Rng* shuffle_rng) {
  require(batch_size > 0 && max_seq_len > 0, "make_batches: sizes must be positive");
  std::vector<const TrainingExample*> order;
  order.reserve(examples.size());
  for (const TrainingExample& e : examples) order.push_back(&e);
  if (shuffle_rng) shuffle(order, *shuffle_rng);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const int b = static_cast<int>(
        std::min<std::size_t>(static_cast<std::size_t>(batch_size), order.size() - start));
    Batch batch;
    batch.size = b;
    batch.seq_len = max_seq_len;
    batch.user_ids.resize(static_cast<std::size_t>(b));
    batch.seq_items.assign(static_cast<std::size_t>(b) * max_seq_len, 0);
    batch.seq_cats.assign(static_cast<std::size_t>(b) * max_seq_len, 0);
    batch.cand_items.resize(static_cast<std::size_t>(b));
    batch.cand_cats.resize(static_cast<std::size_t>(b));
    batch.mask = Tensor::zeros({b * max_seq_len});
    batch.labels = Tensor::zeros({b});
    batch.labels_int.resize(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
      const TrainingExample& e = *order[start + static_cast<std::size_t>(i)];
      require(static_cast<int>(e.seq.size()) <= max_seq_len,
              "make_batches: sequence longer than max_seq_len");
      batch.user_ids[static_cast<std::size_t>(i)] = e.user + 1;
      batch.cand_items[static_cast<std::size_t>(i)] = e.cand_item + 1;
      batch.cand_cats[static_cast<std::size_t>(i)] = e.cand_cat + 1;
      for (std::size_t k = 0; k < e.seq.size(); ++k) {
        const std::size_t r = static_cast<std::size_t>(i) * max_seq_len + k;
        batch.seq_items[r] = e.seq[k].first + 1;
        batch.seq_cats[r] = e.seq[k].second + 1;
        batch.mask.data()[r] = 1.0f;
      }
      batch.labels.data()[i] = static_cast<float>(e.label);
      batch.labels_int[static_cast<std::size_t>(i)] = e.label;
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

// --------------------------------------------------------------------------
// Example cache (FITD)
// --------------------------------------------------------------------------

namespace {

void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}
  std::uint16_t u16() { return static_cast<std::uint16_t>(u8() | (u8() << 8)); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint32_t u8() {
    require(pos_ < bytes_.size(), path_ + ": truncated file");
    return static_cast<unsigned char>(bytes_[pos_++]);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

void save_examples(const std::string& path, const std::vector<TrainingExample>& examples,
                   int n_users, int n_items, int n_cats, int max_len) {
  std::string out;
  out += "FITD";
  put_u16(out, 1);  // version
  put_u32(out, static_cast<std::uint32_t>(examples.size()));
  put_u32(out, static_cast<std::uint32_t>(n_users));
  put_u32(out, static_cast<std::uint32_t>(n_items));
  put_u32(out, static_cast<std::uint32_t>(n_cats));
  put_u16(out, static_cast<std::uint16_t>(max_len));
  for (const TrainingExample& e : examples) {
    require(static_cast<int>(e.seq.size()) <= max_len,
            "save_examples: sequence exceeds max_len");
    put_u32(out, static_cast<std::uint32_t>(e.user));
    put_u32(out, static_cast<std::uint32_t>(e.cand_item));
    put_u32(out, static_cast<std::uint32_t>(e.cand_cat));
    out.push_back(static_cast<char>(e.label));
    put_u16(out, static_cast<std::uint16_t>(e.seq.size()));
    for (int k = 0; k < max_len; ++k) {
      const bool valid = k < static_cast<int>(e.seq.size());
      put_u32(out, valid ? static_cast<std::uint32_t>(e.seq[static_cast<std::size_t>(k)].first) : 0);
      put_u32(out, valid ? static_cast<std::uint32_t>(e.seq[static_cast<std::size_t>(k)].second) : 0);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(f.good(), "write failed for " + path);
}

CacheContents load_examples(const std::string& path) {
  Reader r(read_file(path), path);
  require(r.u8() == 'F' && r.u8() == 'I' && r.u8() == 'T' && r.u8() == 'D',
          path + ": bad magic (want FITD)");
  const std::uint16_t version = r.u16();
  require(version == 1, path + ": unsupported version " + std::to_string(version));
  CacheContents c;
  const std::uint32_t n = r.u32();
  c.n_users = static_cast<int>(r.u32());
  c.n_items = static_cast<int>(r.u32());
  c.n_cats = static_cast<int>(r.u32());
  c.max_len = r.u16();
  c.examples.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    TrainingExample e;
    e.user = static_cast<int>(r.u32());
    e.cand_item = static_cast<int>(r.u32());
    e.cand_cat = static_cast<int>(r.u32());
    e.label = static_cast<int>(r.u8());
    const std::uint16_t len = r.u16();
    require(len <= c.max_len, path + ": record sequence length exceeds max_len");
    for (int k = 0; k < c.max_len; ++k) {
      const int item = static_cast<int>(r.u32());
      const int cat = static_cast<int>(r.u32());
      if (k < len) e.seq.emplace_back(item, cat);
    }
    c.examples.push_back(std::move(e));
  }
  require(r.done(), path + ": trailing bytes after last record");
  return c;
}

}  // namespace fit
