#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "mvembed/retrieval.hpp"

using namespace mvembed;

namespace {

EmbeddingIndex random_index(std::mt19937_64& rng, std::size_t n, std::size_t dim, float scale = 1.0f) {
    std::normal_distribution<float> g;
    EmbeddingIndex idx;
    for (std::size_t i = 0; i < n; ++i) {
        Embedding e;
        e.model_id = "m" + std::to_string(1000 + (i * 7919) % 9000);
        for (std::size_t d = 0; d < dim; ++d) e.vector.push_back(g(rng) * scale);
        idx.add(std::move(e), "c" + std::to_string(i % 3));
    }
    return idx;
}

// O(n^2) selection by (distance, id) over distances computed in long double.
std::vector<std::pair<std::string, long double>> brute_rank(const EmbeddingIndex& idx, const std::string& q) {
    const auto& qv = idx.at(q).embedding.vector;
    std::vector<std::pair<std::string, long double>> pool;
    for (const auto& it : idx.items()) {
        if (it.embedding.model_id == q) continue;
        long double dot = 0, a = 0, b = 0;
        for (std::size_t d = 0; d < qv.size(); ++d) {
            dot += (long double)qv[d] * it.embedding.vector[d];
            a += (long double)qv[d] * qv[d];
            b += (long double)it.embedding.vector[d] * it.embedding.vector[d];
        }
        pool.emplace_back(it.embedding.model_id, 1 - dot / std::sqrt(a * b));
    }
    std::vector<std::pair<std::string, long double>> out;
    while (!pool.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < pool.size(); ++i)
            if (pool[i].second < pool[best].second ||
                (pool[i].second == pool[best].second && pool[i].first < pool[best].first))
                best = i;
        out.push_back(pool[best]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
    }
    return out;
}

std::vector<std::string> ids(const RankedList& l) {
    std::vector<std::string> out;
    for (const auto& e : l.entries) out.push_back(e.id);
    return out;
}

} // namespace

TEST(CosineDistance, Examples) {
    const std::vector<float> x{1, 0}, y{0, 1}, nx{-1, 0}, x2{3, 0}, z{0, 0};
    EXPECT_DOUBLE_EQ(cosine_distance(x, x2), 0.0);
    EXPECT_DOUBLE_EQ(cosine_distance(x, y), 1.0);
    EXPECT_DOUBLE_EQ(cosine_distance(x, nx), 2.0);
    RetrievalWarnings w;
    EXPECT_DOUBLE_EQ(cosine_distance(x, z, &w), 1.0);
    EXPECT_EQ(w.zero_norm, 1u);
    EXPECT_THROW(cosine_distance(x, std::vector<float>{1, 2, 3}), Error);
}

TEST(CosineDistance, RangeAndSymmetry) {
    std::mt19937_64 rng(1);
    std::normal_distribution<float> g;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<float> u(8), v(8);
        for (auto& a : u) a = g(rng);
        for (auto& a : v) a = g(rng);
        const double d = cosine_distance(u, v);
        EXPECT_GE(d, 0.0);
        EXPECT_LE(d, 2.0);
        EXPECT_EQ(d, cosine_distance(v, u));
    }
}

TEST(RankAll, MatchesBruteForce) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const auto idx = random_index(rng, 5 + trial % 20, 8);
        const auto& q = idx.items()[trial % idx.size()].embedding.model_id;
        const auto got = rank_all(idx, q);
        const auto want = brute_rank(idx, q);
        ASSERT_EQ(got.entries.size(), want.size());
        for (std::size_t i = 0; i < want.size(); ++i) {
            EXPECT_EQ(got.entries[i].id, want[i].first);
            EXPECT_NEAR(got.entries[i].distance, double(want[i].second), 1e-12);
        }
    }
}

TEST(RankAll, InvariantToPositiveScaling) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        std::mt19937_64 copy = rng;
        const auto idx = random_index(rng, 12, 8);
        for (float s : {1e-3f, 0.37f, 4.0f, 250.0f}) {
            std::mt19937_64 again = copy;
            const auto scaled = random_index(again, 12, 8, s);
            for (const auto& it : idx.items())
                EXPECT_EQ(ids(rank_all(idx, it.embedding.model_id)), ids(rank_all(scaled, it.embedding.model_id)));
        }
    }
}

TEST(RankAll, ExcludesQueryAndBreaksTiesById) {
    EmbeddingIndex idx;
    idx.add({"q", {1, 0}}, "A");
    idx.add({"zeta", {2, 0}}, "A");
    idx.add({"alpha", {5, 0}}, "B");
    idx.add({"mid", {1, 1}}, "B");
    const auto r = rank_all(idx, "q");
    EXPECT_EQ(ids(r), (std::vector<std::string>{"alpha", "zeta", "mid"}));
    EXPECT_THROW(rank_all(idx, "missing"), Error);
}

TEST(EmbeddingIndex, RejectsBadEntries) {
    EmbeddingIndex idx;
    idx.add({"a", {1, 2}}, "A");
    EXPECT_THROW(idx.add({"a", {1, 2}}, "A"), Error);
    EXPECT_THROW(idx.add({"b", {1, 2, 3}}, "A"), Error);
    EXPECT_THROW(idx.add({"c", {1, NAN}}, "A"), Error);
}

TEST(Mvem, RoundTrip) {
    std::mt19937_64 rng(5);
    const auto idx = random_index(rng, 9, 16);
    std::stringstream buf;
    write_corpus(idx, buf);
    const auto back = read_corpus(buf);
    ASSERT_EQ(back.size(), idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        EXPECT_EQ(back.items()[i].embedding, idx.items()[i].embedding);
        EXPECT_EQ(back.items()[i].label, idx.items()[i].label);
    }
}

TEST(Mvem, RejectsCorruptInput) {
    std::mt19937_64 rng(6);
    std::stringstream buf;
    write_corpus(random_index(rng, 3, 4), buf);
    const auto bytes = buf.str();
    std::stringstream cut(bytes.substr(0, bytes.size() - 1));
    EXPECT_THROW(read_corpus(cut), FormatError);
    std::stringstream bad("MVEX" + bytes.substr(4));
    EXPECT_THROW(read_corpus(bad), FormatError);
}

TEST(RankedCsv, Layout) {
    EmbeddingIndex idx;
    idx.add({"a", {1, 0}}, "A");
    idx.add({"b", {0, 1}}, "A");
    std::ostringstream out;
    write_ranked_csv({rank_all(idx, "a")}, out);
    EXPECT_EQ(out.str(), "query_id,rank,item_id,distance\na,1,b,1\n");
}
