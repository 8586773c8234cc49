#include <cmath>

#include "gtest/gtest.h"

#include "ascd/profiler.hpp"
#include "fixtures.hpp"

using namespace ascd;
namespace fx = ascd::fixtures;

namespace {

AttentionRecord rec(std::size_t layer, std::size_t head, std::vector<float> w) {
  return AttentionRecord{layer, head, w.size() - 1, {}, {}, std::move(w)};
}

RatioMatrix ratio(std::size_t L, std::size_t H, std::vector<float> v) { return {L, H, std::move(v)}; }

// Summation oracle written without shared helpers.
double brute_jsd(const std::vector<double>& p, const std::vector<double>& q) {
  double kl_pm = 0.0, kl_qm = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = (p[i] + q[i]) / 2.0;
    if (p[i] != 0.0) kl_pm += p[i] * (std::log(p[i]) - std::log(m));
    if (q[i] != 0.0) kl_qm += q[i] * (std::log(q[i]) - std::log(m));
  }
  return (kl_pm + kl_qm) / 2.0;
}

}  // namespace

TEST(AttentionRatio, Examples) {
  const std::vector<Modality> mask{Modality::visual, Modality::text, Modality::text};
  // text 0.6, visual 0.3 (remaining 0.1 outside the mask region is text too).
  auto r = attention_ratio(std::vector{rec(0, 0, {0.3f, 0.6f, 0.1f})}, mask, 1, 1);
  EXPECT_NEAR(r.at(0, 0), 0.7f / 0.3f, 1e-5);
  r = attention_ratio(std::vector{rec(0, 0, {0.3f, 0.6f})}, mask, 1, 1);
  EXPECT_NEAR(r.at(0, 0), 2.0f, 1e-6);
  r = attention_ratio(std::vector{rec(0, 0, {1.0f})}, mask, 1, 1);
  EXPECT_EQ(r.at(0, 0), 0.0f);
  r = attention_ratio(std::vector{rec(0, 0, {0.0f, 1.0f})}, mask, 1, 1);
  EXPECT_TRUE(std::isinf(r.at(0, 0)));
}

TEST(AttentionRatio, UniformOverTwiceAsManyTextKeys) {
  const std::size_t V = 5;
  const auto mask = modality_mask(V, 3 * V);
  const std::vector<float> uniform(3 * V, 1.0f / float(3 * V));
  EXPECT_NEAR(attention_ratio(std::vector{rec(0, 0, uniform)}, mask, 1, 1).at(0, 0), 2.0f, 1e-5);
}

TEST(AttentionRatio, SumsOverQueriesBeforeDividing) {
  const std::vector<Modality> mask{Modality::visual, Modality::text};
  const std::vector recs{rec(0, 0, {0.5f, 0.5f}), rec(0, 0, {0.1f, 0.9f})};
  EXPECT_NEAR(attention_ratio(recs, mask, 1, 1).at(0, 0), 1.4f / 0.6f, 1e-5);
  EXPECT_THROW(attention_ratio(recs, mask, 1, 2), InvalidArgument);
}

TEST(Votes, DerivedExample) {
  auto f = HeadFrequencyMap::empty(2, 2, 2);
  accumulate_votes(f, ratio(2, 2, {5, 1, 3, 2}), 2);
  EXPECT_EQ(f.counts, (std::vector<std::uint64_t>{1, 0, 1, 0}));
  EXPECT_EQ(f.n_samples, 1u);
}

TEST(Votes, AllVotedAndAdditive) {
  auto all = HeadFrequencyMap::empty(2, 3, 6);
  accumulate_votes(all, ratio(2, 3, {1, 2, 3, 4, 5, 6}), 6);
  for (auto c : all.counts) EXPECT_EQ(c, 1u);

  Rng rng(1);
  std::vector<float> q(6);
  for (auto& v : q) v = float(rng.uniform());
  auto once = HeadFrequencyMap::empty(2, 3, 3), twice = once;
  accumulate_votes(once, ratio(2, 3, q), 3);
  accumulate_votes(twice, ratio(2, 3, q), 3);
  accumulate_votes(twice, ratio(2, 3, q), 3);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(twice.counts[i], 2 * once.counts[i]);
}

TEST(Votes, TotalInvariantAndInfinityRanksFirst) {
  Rng rng(4);
  auto f = HeadFrequencyMap::empty(3, 4, 5);
  for (int s = 0; s < 200; ++s) {
    std::vector<float> q(12);
    for (auto& v : q) v = rng.uniform() < 0.1 ? INFINITY : float(rng.uniform_index(4));
    accumulate_votes(f, ratio(3, 4, q), 5);
    EXPECT_EQ(f.total(), f.n_samples * f.vote_k);
  }
  auto g = HeadFrequencyMap::empty(1, 3, 1);
  accumulate_votes(g, ratio(1, 3, {1e30f, 2.0f, INFINITY}), 1);
  EXPECT_EQ(g.counts, (std::vector<std::uint64_t>{0, 0, 1}));
}

TEST(Votes, ShapeAndVoteKErrors) {
  auto f = HeadFrequencyMap::empty(2, 2, 2);
  EXPECT_THROW(accumulate_votes(f, ratio(1, 4, {1, 2, 3, 4}), 2), InvalidArgument);
  EXPECT_THROW(HeadFrequencyMap::empty(2, 2, 5), InvalidArgument);
  EXPECT_EQ(clamp_vote_k(32, 2, 2), 4u);
}

TEST(Votes, MergeIsElementwiseSum) {
  auto a = HeadFrequencyMap::empty(1, 3, 1), b = a;
  accumulate_votes(a, ratio(1, 3, {3, 1, 2}), 1);
  accumulate_votes(b, ratio(1, 3, {1, 3, 2}), 1);
  const auto m = merge(a, b);
  EXPECT_EQ(m.counts, (std::vector<std::uint64_t>{1, 1, 0}));
  EXPECT_EQ(m.n_samples, 2u);
  EXPECT_EQ(merge(a, b), merge(b, a));
}

TEST(SelectTextCentric, Examples) {
  HeadFrequencyMap f{2, 2, 1, 9, {1, 6, 1, 1}};
  EXPECT_EQ(select_text_centric(f, 1), HeadSet::of({{0, 1}}));
  EXPECT_EQ(select_text_centric(f, 4), HeadSet::all(2, 2));
  EXPECT_TRUE(select_text_centric(f, 0).empty());
  EXPECT_EQ(select_text_centric(f, 2), HeadSet::of({{0, 0}, {0, 1}}));  // tie -> lowest (layer, head)
  EXPECT_THROW(select_text_centric(f, 5), InvalidArgument);
}

TEST(SelectTextCentric, ScaleInvariant) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    HeadFrequencyMap f{3, 3, 1, 1, std::vector<std::uint64_t>(9)};
    for (auto& c : f.counts) c = rng.uniform_index(5);
    auto g = f;
    const std::uint64_t k = 1 + rng.uniform_index(7);
    for (auto& c : g.counts) c *= k;
    const std::size_t kappa = rng.uniform_index(10);
    EXPECT_EQ(select_text_centric(f, kappa), select_text_centric(g, kappa));
  }
}

TEST(JsDivergence, Examples) {
  const std::vector<double> a{0.5, 0.5}, one{1.0, 0.0}, other{0.0, 1.0};
  EXPECT_DOUBLE_EQ(js_divergence(a, a), 0.0);
  EXPECT_NEAR(js_divergence(one, other), std::log(2.0), 1e-12);
  EXPECT_NEAR(js_divergence(a, one), brute_jsd(a, one), 1e-12);
  EXPECT_NEAR(js_divergence(a, one), 0.2157, 1e-4);
  EXPECT_THROW(js_divergence(std::vector<double>{-0.1, 1.1}, a), InvalidArgument);
  EXPECT_THROW(js_divergence(std::vector<double>{0.5, 0.6}, a), InvalidArgument);
}

TEST(JsDivergence, PropertiesAndOracle) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(30);
    std::vector<double> p(n), q(n);
    double sp = 0, sq = 0;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
      q[i] = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
      sp += p[i];
      sq += q[i];
    }
    if (sp == 0 || sq == 0) continue;
    for (auto& v : p) v /= sp;
    for (auto& v : q) v /= sq;
    const double d = js_divergence(p, q);
    EXPECT_NEAR(d, brute_jsd(p, q), 1e-9);
    EXPECT_NEAR(d, js_divergence(q, p), 1e-12);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, std::log(2.0) + 1e-12);
    EXPECT_LT(js_divergence(p, p), 1e-12);
  }
}

TEST(Profile, RecoversPlantedHeads) {
  const auto c = fx::profiling_config();
  for (std::size_t size : {2u, 4u, 8u}) {
    const auto planted = fx::first_heads(size, c.n_heads, 3);
    const auto w = fx::planted_text_model(planted, 10 + size);
    const auto ref = fx::reference_set(c, 10, 77);
    ProfileConfig pc;
    pc.vote_k = size;
    pc.kappa_tch = size;
    const auto result = profile_heads(w, ref, pc);
    EXPECT_EQ(result.freq.n_samples, 10u);
    EXPECT_EQ(result.freq.total(), 10u * size);
    EXPECT_DOUBLE_EQ(HeadSet::jaccard(result.selected, HeadSet::of(planted)), 1.0) << "size " << size;
  }
}

TEST(Profile, VoteKClampsToHeadCount) {
  const auto c = fx::profiling_config();
  const auto w = fx::planted_text_model(fx::first_heads(2, c.n_heads), 1);
  const auto ref = fx::reference_set(c, 2, 1);
  const auto result = profile_heads(w, ref, ProfileConfig{});
  EXPECT_EQ(result.freq.vote_k, c.n_layers * c.n_heads);
  EXPECT_EQ(result.selected.size(), c.n_layers * c.n_heads);
}

TEST(Profile, JsonRoundTripAndHeatmap) {
  HeadFrequencyMap f{1, 2, 1, 3, {2, 1}};
  const auto sel = HeadSet::of({{0, 0}});
  const auto j = profile_to_json(f, sel);
  EXPECT_EQ(j["config"]["vote_k"], 1);
  EXPECT_EQ(j["counts"], nlohmann::json::parse("[[2,1]]"));
  EXPECT_EQ(j["selected"], nlohmann::json::parse("[[0,0]]"));
  const auto back = profile_from_json(j);
  EXPECT_EQ(back.freq, f);
  EXPECT_EQ(back.selected, sel);
  EXPECT_THROW(profile_from_json(nlohmann::json::parse("{\"counts\":[]}")), InvalidArgument);
  EXPECT_EQ(heatmap_csv(f).substr(0, 26), "layer,head,count,frequency");
}

TEST(Redistribution, DeterministicAndPartitioned) {
  const auto w = fx::visually_driven_model();
  const auto data = fx::clean_visual_set(4, 5);
  const std::vector tfs{BranchTransform::none(), BranchTransform::none(), BranchTransform::noise(2.0f, 1),
                        BranchTransform::negative_prefix({3, 4, 5})};
  const auto rows = redistribution_report(w, data, tfs);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].vis_mass, rows[1].vis_mass);
  for (const auto& r : rows) EXPECT_NEAR(r.vis_mass + r.text_mass, 1.0, 1e-6);
  EXPECT_LT(rows[2].vis_mass, rows[0].vis_mass);
  EXPECT_GT(rows[3].text_mass, rows[0].text_mass);
  EXPECT_THROW(redistribution_report(w, std::vector<MultimodalSequence>{}, tfs), InvalidArgument);
  const std::vector bad{BranchTransform::negative_prefix({})};
  EXPECT_THROW(redistribution_report(w, data, bad), InvalidArgument);
}
