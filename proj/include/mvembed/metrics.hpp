#pragma once

// Ranked-retrieval scores: AP, MAP, normalized DCG, micro/macro aggregation.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mvembed/error.hpp"
#include "mvembed/retrieval.hpp"

namespace mvembed {

/// g[i] is 1 iff the i-th ranked item shares the query's class. class_size
/// counts same-class corpus items with the query excluded.
struct RelevanceList {
    std::vector<std::uint8_t> g;
    std::size_t class_size = 0;
};

inline void validate(const RelevanceList& r) {
    std::size_t hits = 0;
    for (auto v : r.g) {
        if (v > 1) throw Error("relevance values must be 0 or 1");
        hits += v;
    }
    if (hits != r.class_size)
        throw Error("relevance list has " + std::to_string(hits) + " hits but class size " +
                    std::to_string(r.class_size));
}

inline double average_precision(const RelevanceList& r) {
    if (r.class_size == 0) throw Error("average precision undefined for an empty class");
    validate(r);
    double sum = 0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < r.g.size(); ++i) {
        if (!r.g[i]) continue;
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
    return sum / static_cast<double>(hits);
}

inline double mean_average_precision(std::span<const double> aps) {
    if (aps.empty()) throw Error("MAP over an empty query set");
    double s = 0;
    for (double a : aps) s += a;
    return s / static_cast<double>(aps.size());
}

/// Best achievable DCG when `class_size` relevant items lead the list.
inline double ideal_dcg(std::size_t class_size) {
    double d = class_size >= 1 ? 1.0 : 0.0;
    for (std::size_t j = 2; j <= class_size; ++j) d += 1.0 / std::log2(static_cast<double>(j));
    return d;
}

/// DCG normalized to [0,1]; position 1 is undiscounted, position i >= 2 is
/// weighted 1/log2(i).
inline double dcg(const RelevanceList& r) {
    if (r.class_size == 0) throw Error("DCG undefined for an empty class");
    validate(r);
    double d = 0;
    for (std::size_t i = 0; i < r.g.size(); ++i) {
        if (!r.g[i]) continue;
        d += i == 0 ? 1.0 : 1.0 / std::log2(static_cast<double>(i + 1));
    }
    return d / ideal_dcg(r.class_size);
}

struct QueryScore {
    std::string query_id;
    std::string label;
    double ap = 0;
    double dcg = 0;
};

struct ClassScore {
    std::string label;
    std::size_t queries = 0;
    double map = 0;
    double dcg = 0;
};

struct MetricsReport {
    double micro_map = 0, micro_dcg = 0, macro_map = 0, macro_dcg = 0;
    std::vector<ClassScore> per_class;  // sorted by label
    std::size_t queries = 0;
    std::vector<std::string> skipped;  // queries whose class has no other member
};

/// Sums run in input order so results are reproducible bit-for-bit.
inline MetricsReport aggregate(const std::vector<QueryScore>& scores, std::vector<std::string> skipped = {}) {
    if (scores.empty()) throw Error("no scored queries to aggregate");
    MetricsReport rep;
    rep.queries = scores.size();
    rep.skipped = std::move(skipped);
    std::map<std::string, ClassScore> classes;
    double ap = 0, dg = 0;
    for (const auto& s : scores) {
        ap += s.ap;
        dg += s.dcg;
        auto& c = classes[s.label];
        c.label = s.label;
        ++c.queries;
        c.map += s.ap;
        c.dcg += s.dcg;
    }
    const double n = static_cast<double>(scores.size());
    rep.micro_map = ap / n;
    rep.micro_dcg = dg / n;
    for (auto& [label, c] : classes) {
        c.map /= static_cast<double>(c.queries);
        c.dcg /= static_cast<double>(c.queries);
        rep.macro_map += c.map;
        rep.macro_dcg += c.dcg;
        rep.per_class.push_back(c);
    }
    rep.macro_map /= static_cast<double>(classes.size());
    rep.macro_dcg /= static_cast<double>(classes.size());
    return rep;
}

/// Relevance of a ranked list against corpus labels.
inline RelevanceList relevance(const RankedList& list, const EmbeddingIndex& index) {
    const auto& label = index.at(list.query_id).label;
    RelevanceList r;
    r.g.reserve(list.entries.size());
    for (const auto& e : list.entries) {
        const bool hit = index.at(e.id).label == label;
        r.g.push_back(hit ? 1 : 0);
        r.class_size += hit;
    }
    return r;
}

struct Evaluation {
    MetricsReport report;
    std::vector<RankedList> ranked;
    RetrievalWarnings warnings;
};

/// Every corpus item queries the rest of the corpus.
inline Evaluation evaluate_corpus(const EmbeddingIndex& index) {
    Evaluation ev;
    std::vector<QueryScore> scores;
    std::vector<std::string> skipped;
    for (const auto& item : index.items()) {
        auto list = rank_all(index, item.embedding.model_id, &ev.warnings);
        const auto rel = relevance(list, index);
        if (rel.class_size == 0)
            skipped.push_back(item.embedding.model_id);
        else
            scores.push_back({item.embedding.model_id, item.label, average_precision(rel), dcg(rel)});
        ev.ranked.push_back(std::move(list));
    }
    ev.report = aggregate(scores, std::move(skipped));
    return ev;
}

// ---- reports ----------------------------------------------------------------

struct TableRow {
    std::string model;
    int views = 0;
    MetricsReport report;
};

inline void write_table(const std::vector<TableRow>& rows, std::ostream& out) {
    std::size_t w = 5;
    for (const auto& r : rows) w = std::max(w, r.model.size());
    auto fmt = [](double v) {
        std::ostringstream s;
        s << std::fixed << std::setprecision(4) << v;
        return s.str();
    };
    out << std::left << std::setw(static_cast<int>(w)) << "Model" << "  Views  micro DCG  micro MAP  macro DCG  macro MAP\n";
    for (const auto& r : rows) {
        out << std::left << std::setw(static_cast<int>(w)) << r.model << "  " << std::right << std::setw(5) << r.views;
        for (double v : {r.report.micro_dcg, r.report.micro_map, r.report.macro_dcg, r.report.macro_map})
            out << "  " << std::setw(9) << fmt(v);
        out << '\n';
    }
}

inline void write_table_csv(const std::vector<TableRow>& rows, std::ostream& out) {
    out << "model,views,micro_dcg,micro_map,macro_dcg,macro_map,queries,skipped\n" << std::setprecision(17);
    for (const auto& r : rows)
        out << r.model << ',' << r.views << ',' << r.report.micro_dcg << ',' << r.report.micro_map << ','
            << r.report.macro_dcg << ',' << r.report.macro_map << ',' << r.report.queries << ','
            << r.report.skipped.size() << '\n';
}

inline void write_per_class_csv(const MetricsReport& rep, std::ostream& out) {
    out << "class,queries,map,dcg\n" << std::setprecision(17);
    for (const auto& c : rep.per_class) out << c.label << ',' << c.queries << ',' << c.map << ',' << c.dcg << '\n';
}

} // namespace mvembed
