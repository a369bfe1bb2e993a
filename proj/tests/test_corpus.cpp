#include <gtest/gtest.h>
#include <zlib.h>

#include <set>

#include "test_util.hpp"

using namespace rhia;
using testutil::TempDir;

namespace {

RawRecord record(std::string head_id, std::string tail_id, std::string head, std::string tail, std::string rel,
                 std::string sentence) {
  RawRecord r{std::move(head_id), std::move(tail_id), std::move(head), std::move(tail), std::move(rel), {}};
  r.tokens = split_tokens(sentence);
  return r;
}

const char* kBrin =
    "It showed that Sergey Brin , a co-founder of Google , not the search engine itself , paid for the study";

// Relation chains from the default synthetic plan plus NA.
RelationHierarchy default_hierarchy() {
  auto plan = testutil::plan_from("data/synthetic.plan");
  auto names = plan.relations;
  names.push_back("NA");
  return RelationHierarchy::build(names, 3);
}

}  // namespace

TEST(RelationChain, FullPath) {
  EXPECT_EQ(parse_relation_chain("/business/company/founders", 3),
            (std::vector<std::string>{"/business", "/business/company", "/business/company/founders"}));
}

TEST(RelationChain, NaAtEveryLevel) {
  EXPECT_EQ(parse_relation_chain("NA", 3), (std::vector<std::string>{"NA", "NA", "NA"}));
}

TEST(RelationChain, ShortPathRepeatsDeepestPrefix) {
  EXPECT_EQ(parse_relation_chain("/people/person", 3),
            (std::vector<std::string>{"/people", "/people/person", "/people/person"}));
}

TEST(RelationChain, EmptyNameIsAnError) { EXPECT_THROW(parse_relation_chain("", 3), DataError); }

TEST(RelationHierarchy, NaIsRelationAndNodeZero) {
  auto h = default_hierarchy();
  EXPECT_EQ(h.relation_name(0), "NA");
  EXPECT_EQ(h.num_relations(), 9u);
  for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(h.level_name(l, 0), "NA");
  EXPECT_EQ(h.chain(0), (std::vector<std::uint32_t>{0, 0, 0}));
}

TEST(RelationHierarchy, ChainsArePrefixConsistent) {
  auto h = default_hierarchy();
  for (std::uint32_t r = 1; r < h.num_relations(); ++r) {
    const auto& c = h.chain(r);
    ASSERT_EQ(c.size(), 3u);
    for (std::size_t l = 0; l + 1 < 3; ++l) {
      const auto& a = h.level_name(l, c[l]);
      const auto& b = h.level_name(l + 1, c[l + 1]);
      EXPECT_EQ(b.compare(0, a.size(), a), 0) << a << " vs " << b;
    }
    EXPECT_EQ(h.level_name(2, c[2]), h.relation_name(r));
  }
}

TEST(RelationHierarchy, LevelSizesGrowAndEveryNodeIsReachable) {
  auto h = default_hierarchy();
  const auto sizes = h.level_sizes();
  // NA plus /business /location /people, then the 6 two-segment prefixes, then the 8 leaves
  EXPECT_EQ(sizes, (std::vector<std::size_t>{4, 7, 9}));
  for (std::size_t l = 0; l < 3; ++l) {
    std::set<std::uint32_t> seen;
    for (std::uint32_t r = 0; r < h.num_relations(); ++r) seen.insert(h.chain(r)[l]);
    EXPECT_EQ(seen.size(), sizes[l]);
  }
  std::set<std::vector<std::uint32_t>> chains;
  for (std::uint32_t r = 0; r < h.num_relations(); ++r) chains.insert(h.chain(r));
  EXPECT_EQ(chains.size(), h.num_relations());
}

TEST(BuildBags, SamePairSameRelationFormsOneBag) {
  std::vector<RawRecord> recs = {record("m.1", "m.2", "Paris", "France", "/location/location/contains",
                                        "France contains Paris"),
                                 record("m.1", "m.2", "Paris", "France", "/location/location/contains",
                                        "Paris is in France")};
  auto vocab = vocabulary_from_records(recs);
  auto h = RelationHierarchy::build(relation_names(recs), 3);
  auto set = build_bags(recs, vocab, h, BagMode::Train, 120);
  ASSERT_EQ(set.bags.size(), 1u);
  EXPECT_EQ(set.bags[0].instances.size(), 2u);
  EXPECT_EQ(set.stats.sentences, 2u);
}

TEST(BuildBags, TestModeGroupsByPairWithGoldSet) {
  std::vector<RawRecord> recs = {
      record("m.1", "m.2", "A", "B", "/x/y/p", "A p B"), record("m.1", "m.2", "A", "B", "/x/y/q", "A q B"),
      record("m.1", "m.2", "A", "B", "NA", "A and B"), record("m.3", "m.2", "C", "B", "NA", "C and B")};
  auto vocab = vocabulary_from_records(recs);
  auto h = RelationHierarchy::build(relation_names(recs), 3);
  auto train = build_bags(recs, vocab, h, BagMode::Train, 120);
  EXPECT_EQ(train.bags.size(), 4u);
  auto test = build_bags(recs, vocab, h, BagMode::Test, 120);
  ASSERT_EQ(test.bags.size(), 2u);
  EXPECT_EQ(test.bags[0].instances.size(), 3u);
  EXPECT_EQ(test.bags[0].labels, (std::vector<std::uint32_t>{h.id("/x/y/p"), h.id("/x/y/q")}));
  EXPECT_EQ(test.bags[1].labels, (std::vector<std::uint32_t>{0}));
}

TEST(BuildBags, RejectsAndCountsBadRecords) {
  std::vector<RawRecord> recs = {record("m.1", "m.2", "A", "B", "/x/y/p", "A p B"),
                                 record("m.1", "m.2", "A", "Zed", "/x/y/p", "A p B"),
                                 record("m.1", "m.2", "A", "B", "/x/y/unknown", "A p B")};
  auto vocab = vocabulary_from_records(recs);
  auto h = RelationHierarchy::build({"/x/y/p"}, 3);
  auto set = build_bags(recs, vocab, h, BagMode::Train, 120);
  EXPECT_EQ(set.stats.records, 3u);
  EXPECT_EQ(set.stats.sentences, 1u);
  EXPECT_EQ(set.stats.rejected_missing_entity, 1u);
  EXPECT_EQ(set.stats.rejected_unknown_relation, 1u);
}

TEST(BuildBags, LongSentencesAreTruncatedAndFlagged) {
  std::string kept = "A p B";
  for (int i = 0; i < 130; ++i) kept += " w";
  std::string lost = "A p";
  for (int i = 0; i < 130; ++i) lost += " w";
  lost += " B";
  std::vector<RawRecord> recs = {record("m.1", "m.2", "A", "B", "/x/y/p", kept),
                                 record("m.1", "m.2", "A", "B", "/x/y/p", lost)};
  auto vocab = vocabulary_from_records(recs);
  auto h = RelationHierarchy::build({"/x/y/p"}, 3);
  auto set = build_bags(recs, vocab, h, BagMode::Train, 120);
  ASSERT_EQ(set.stats.sentences, 1u);
  EXPECT_EQ(set.stats.rejected_truncation, 1u);
  const auto& inst = set.bags[0].instances[0];
  EXPECT_TRUE(inst.truncated);
  EXPECT_EQ(inst.length, 120u);
  EXPECT_EQ(inst.tokens.size(), 120u);
}

TEST(BuildBags, ShortSentencesArePadded) {
  std::vector<RawRecord> recs = {record("m.1", "m.2", "A", "B", "/x/y/p", "A p B")};
  auto vocab = vocabulary_from_records(recs);
  auto h = RelationHierarchy::build({"/x/y/p"}, 3);
  const auto built = build_bags(recs, vocab, h, BagMode::Train, 120);
  const auto& inst = built.bags[0].instances[0];
  EXPECT_EQ(inst.length, 3u);
  ASSERT_EQ(inst.tokens.size(), 120u);
  for (std::size_t i = 3; i < 120; ++i) EXPECT_EQ(inst.tokens[i], vocab.pad());
}

TEST(BuildBags, SyntheticCountsMatchGeneratorBookkeeping) {
  auto plan = testutil::plan_from("data/synthetic.plan");
  auto corpus = generate_synthetic(plan);
  auto vocab = vocabulary_from_records(corpus.train);
  auto h = RelationHierarchy::build(relation_names(corpus.train), 3);
  for (auto [records, declared, mode] : {std::tuple{&corpus.train, &corpus.train_bags, BagMode::Train},
                                         std::tuple{&corpus.test, &corpus.test_bags, BagMode::Test}}) {
    auto set = build_bags(*records, vocab, h, mode, 120);
    EXPECT_EQ(set.stats.rejected(), 0u);
    EXPECT_EQ(set.stats.sentences, records->size());
    std::size_t total = 0;
    for (const auto& b : set.bags) total += b.instances.size();
    EXPECT_EQ(total, set.stats.sentences);
    EXPECT_EQ(set.bags.size(), std::accumulate(declared->begin(), declared->end(), std::size_t{0}));
    EXPECT_EQ(set.stats.relation_bags[0], (*declared)[0]);
    for (std::size_t f = 1; f < declared->size(); ++f) {
      EXPECT_EQ(set.stats.relation_bags[h.id(plan.relations[f - 1])], (*declared)[f]) << plan.relations[f - 1];
    }
  }
}

TEST(RelativePositions, NearestTokenOffsets) {
  std::vector<RawRecord> recs = {record("m.g", "m.s", "Google", "Sergey Brin", "/business/company/founders", kBrin)};
  auto vocab = vocabulary_from_records(recs);
  auto h = RelationHierarchy::build(relation_names(recs), 3);
  const auto built = build_bags(recs, vocab, h, BagMode::Train, 120);
  const auto& inst = built.bags.at(0).instances.at(0);
  EXPECT_EQ(inst.tail.begin, 3u);
  EXPECT_EQ(inst.tail.end, 5u);
  EXPECT_EQ(inst.head.begin, 9u);
  auto pos = relative_positions(inst, 120);
  // "co-founder" is token 7
  EXPECT_EQ(vocab.word(inst.tokens[7]), "co-founder");
  EXPECT_EQ(pos[7].head, -2);
  EXPECT_EQ(pos[7].tail, 3);
  EXPECT_EQ(pos[9].head, 0);
  EXPECT_EQ(pos[3].tail, 0);
  EXPECT_EQ(pos[4].tail, 0);
}

TEST(RelativePositions, BoundedOnMaximalSentence) {
  std::string s = "A";
  for (int i = 0; i < 118; ++i) s += " w";
  s += " B";
  std::vector<RawRecord> recs = {record("m.1", "m.2", "A", "B", "/x/y/p", s)};
  auto vocab = vocabulary_from_records(recs);
  auto h = RelationHierarchy::build({"/x/y/p"}, 3);
  const auto built = build_bags(recs, vocab, h, BagMode::Train, 120);
  const auto& inst = built.bags.at(0).instances.at(0);
  ASSERT_EQ(inst.length, 120u);
  auto pos = relative_positions(inst, 120);
  int lo = 0, hi = 0;
  for (const auto& p : pos) {
    lo = std::min({lo, p.head, p.tail});
    hi = std::max({hi, p.head, p.tail});
    EXPECT_LT(position_index(p.head, 120), 241u);
  }
  EXPECT_EQ(lo, -119);
  EXPECT_EQ(hi, 119);
  EXPECT_EQ(position_index(-200, 120), 0u);
  EXPECT_EQ(position_index(200, 120), 240u);
}

TEST(RelativePositions, StableAcrossSerialization) {
  TempDir dir("roundtrip");
  auto corpus = generate_synthetic(testutil::plan_from("data/toy.plan"));
  write_corpus(dir.str("c.txt"), corpus.train);
  auto back = read_corpus(dir.str("c.txt"));
  ASSERT_EQ(back.size(), corpus.train.size());
  auto vocab = vocabulary_from_records(corpus.train);
  auto h = RelationHierarchy::build(relation_names(corpus.train), 3);
  auto a = build_bags(corpus.train, vocab, h, BagMode::Train, 24);
  auto b = build_bags(back, vocab, h, BagMode::Train, 24);
  ASSERT_EQ(a.bags.size(), b.bags.size());
  for (std::size_t i = 0; i < a.bags.size(); ++i) {
    for (std::size_t j = 0; j < a.bags[i].instances.size(); ++j) {
      auto pa = relative_positions(a.bags[i].instances[j], 24);
      auto pb = relative_positions(b.bags[i].instances[j], 24);
      ASSERT_EQ(pa.size(), pb.size());
      for (std::size_t t = 0; t < pa.size(); ++t) {
        EXPECT_EQ(pa[t].head, pb[t].head);
        EXPECT_EQ(pa[t].tail, pb[t].tail);
      }
    }
  }
}

TEST(EntityOrder, FromSpanStarts) {
  Instance inst;
  inst.head = {2, 4};
  inst.tail = {7, 8};
  EXPECT_EQ(entity_order(inst), EntityOrder::HeadFirst);
  std::swap(inst.head, inst.tail);
  EXPECT_EQ(entity_order(inst), EntityOrder::TailFirst);
  EXPECT_EQ(entity_split_points(inst), (std::pair<std::uint32_t, std::uint32_t>{3, 7}));
}

TEST(EntityOrder, SyntheticRatioWithinOnePercent) {
  auto plan = testutil::plan_from("data/synthetic.plan");
  auto corpus = generate_synthetic(plan);
  auto vocab = vocabulary_from_records(corpus.train);
  auto h = RelationHierarchy::build(relation_names(corpus.train), 3);
  auto set = build_bags(corpus.train, vocab, h, BagMode::Train, 120);
  std::size_t head_first = 0, n = 0;
  for (const auto& b : set.bags)
    for (const auto& inst : b.instances) {
      head_first += entity_order(inst) == EntityOrder::HeadFirst;
      ++n;
    }
  EXPECT_EQ(head_first, set.stats.head_first);
  EXPECT_NEAR(double(head_first) / double(n), plan.order_ratio, 0.01);
}

TEST(Embeddings, TableGainsUnkAndPadRows) {
  TempDir dir("emb");
  testutil::spit(dir.str("e.txt"), "the 0.5 -1.25\nSergey_Brin 2 3\nof 1e-3 4\n");
  auto t = load_embeddings(dir.str("e.txt"));
  EXPECT_EQ(t.dim, 2u);
  EXPECT_EQ(t.vocab.size(), 5u);
  EXPECT_EQ(t.values.size(), 10u);
  EXPECT_EQ(t.row(t.vocab.lookup("the"))[0], 0.5);
  EXPECT_EQ(t.row(t.vocab.lookup("the"))[1], -1.25);
  EXPECT_EQ(t.row(t.vocab.lookup("of"))[0], 1e-3);
  EXPECT_EQ(t.vocab.lookup("Sergey_Brin"), 1u);
  EXPECT_EQ(t.vocab.lookup("missing"), t.vocab.unk());
  EXPECT_EQ(t.row(t.vocab.unk())[0], 0.0);
  EXPECT_EQ(t.row(t.vocab.pad())[1], 0.0);
}

TEST(Embeddings, RaggedLineNamesItsLine) {
  TempDir dir("emb");
  testutil::spit(dir.str("e.txt"), "a 1 2\nb 3 4\nc 5\n");
  try {
    load_embeddings(dir.str("e.txt"));
    FAIL() << "expected a ragged-line error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
}

TEST(Embeddings, CountHeaderIsSkipped) {
  TempDir dir("emb");
  testutil::spit(dir.str("e.txt"), "2 3\na 1 2 3\nb 4 5 6\n");
  auto t = load_embeddings(dir.str("e.txt"));
  EXPECT_EQ(t.dim, 3u);
  EXPECT_EQ(t.vocab.words(), (std::vector<std::string>{"a", "b"}));
}

TEST(CorpusFile, GzipMatchesPlainText) {
  TempDir dir("gz");
  const std::string text = "m.1\tm.2\tA\tB\t/x/y/p\tA p B\nm.3\tm.4\tC D\tE\tNA\tC D and E\n";
  testutil::spit(dir.str("c.txt"), text);
  gzFile f = gzopen(dir.str("c.txt.gz").c_str(), "wb");
  ASSERT_NE(f, nullptr);
  gzwrite(f, text.data(), static_cast<unsigned>(text.size()));
  gzclose(f);
  auto plain = read_corpus(dir.str("c.txt"));
  auto gz = read_corpus(dir.str("c.txt.gz"));
  ASSERT_EQ(plain.size(), 2u);
  ASSERT_EQ(gz.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(format_record(plain[i]), format_record(gz[i]));
  EXPECT_EQ(plain[1].head, "C D");
  EXPECT_EQ(join_entity(plain[1].head), "C_D");
}

TEST(CorpusFile, MissingFieldIsAnError) {
  EXPECT_THROW(parse_record("m.1\tm.2\tA\tB\tA p B", "x"), DataError);
  EXPECT_THROW(read_corpus("/nonexistent/corpus.txt"), DataError);
}

TEST(CorpusFile, NytLineConversion) {
  auto r = parse_nyt_line("m.0ccvx m.05gf08 queens belle_harbor /location/location/contains "
                          "sen. charles e. schumer called on federal safety officials in queens belle_harbor . ###END###",
                          "nyt");
  EXPECT_EQ(r.head_id, "m.0ccvx");
  EXPECT_EQ(r.tail, "belle_harbor");
  EXPECT_EQ(r.relation, "/location/location/contains");
  EXPECT_EQ(r.tokens.back(), ".");
  EXPECT_EQ(r.tokens.front(), "sen.");
  EXPECT_THROW(parse_nyt_line("a b c d", "nyt"), DataError);
}

TEST(Synthetic, SameSeedSameBytes) {
  TempDir a("syn"), b("syn");
  auto plan = testutil::plan_from("data/synthetic.plan");
  write_synthetic(a.path(), plan, generate_synthetic(plan));
  write_synthetic(b.path(), plan, generate_synthetic(plan));
  for (const char* f : {"train.txt", "test.txt", "stats.txt"}) {
    const auto x = testutil::slurp(a.str(f));
    EXPECT_FALSE(x.empty());
    EXPECT_EQ(x, testutil::slurp(b.str(f))) << f;
  }
  plan.seed += 1;
  EXPECT_NE(testutil::slurp(a.str("train.txt")), [&] {
    TempDir c("syn");
    write_synthetic(c.path(), plan, generate_synthetic(plan));
    return testutil::slurp(c.str("train.txt"));
  }());
}

TEST(Synthetic, GeometricSkewSpansTwoToTheSeventh) {
  auto plan = testutil::plan_from("data/synthetic.plan");
  ASSERT_EQ(plan.relations.size(), 8u);
  auto counts = planned_bag_counts(plan);
  // independent oracle: the planned positives are round(1500 * 0.5^i / sum_j 0.5^j)
  double norm = 0;
  for (int i = 0; i < 8; ++i) norm += std::ldexp(1.0, -i);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(double(counts[i + 1]), std::round(1500 * std::ldexp(1.0, -i) / norm));
  const double ratio = double(counts[1]) / double(counts[8]);
  EXPECT_NEAR(ratio / 128.0, 1.0, 0.05);
  auto corpus = generate_synthetic(plan);
  for (std::size_t f = 0; f < counts.size(); ++f) EXPECT_EQ(corpus.train_bags[f] + corpus.test_bags[f], counts[f]);
}

TEST(Synthetic, NoiselessFamiliesMatchLabels) {
  auto plan = testutil::plan_from("data/toy.plan");
  plan.noise_rate = 0;
  auto corpus = generate_synthetic(plan);
  EXPECT_EQ(corpus.mislabeled_train, 0u);
  EXPECT_EQ(corpus.train_family, corpus.train_label);
  EXPECT_EQ(corpus.test_family, corpus.test_label);
}

TEST(Synthetic, NoiseRateIsExact) {
  auto plan = testutil::plan_from("data/synthetic.plan");
  auto corpus = generate_synthetic(plan);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < corpus.train.size(); ++i) differ += corpus.train_family[i] != corpus.train_label[i];
  EXPECT_EQ(differ, corpus.mislabeled_train);
  EXPECT_EQ(double(differ), std::round(0.1 * double(corpus.train.size())));
}

TEST(Synthetic, InvalidPlansAreRejected) {
  SyntheticPlan p;
  EXPECT_THROW(generate_synthetic(p), UsageError);
  p.relations = {"/a/b"};
  p.noise_rate = 1.0;
  EXPECT_THROW(generate_synthetic(p), UsageError);
  p.noise_rate = 0.1;
  p.relations = {"a/b"};
  EXPECT_THROW(generate_synthetic(p), UsageError);
}

TEST(CorpusStats, ReportListsLongTailFlags) {
  auto p = testutil::prepare(testutil::plan_from("data/synthetic.plan"), ModelConfig{});
  auto set = build_bags(p.corpus.train, p.data.vocab, p.data.hierarchy, BagMode::Train, 120);
  std::ostringstream os;
  write_stats(os, set.stats, p.data.hierarchy);
  const auto text = os.str();
  EXPECT_NE(text.find("sentences\t" + std::to_string(p.corpus.train.size())), std::string::npos);
  EXPECT_NE(text.find("long_tail_lt1000"), std::string::npos);
  std::size_t below = 0;
  for (std::uint32_t r = 1; r < p.data.hierarchy.num_relations(); ++r) below += set.stats.relation_instances[r] < 100;
  EXPECT_NE(text.find("\n100\t" + std::to_string(below) + "\n"), std::string::npos);
}
