#pragma once

// Small in-memory schemas, batches, and datasets shared by the test suites.

#include <functional>
#include <string>
#include <vector>

#include "graphfm/data.hpp"
#include "graphfm/rng.hpp"

namespace fixtures {

/// Schema with categorical fields c0..cK (given vocab sizes, unknown row
/// included in the count) followed by numeric fields n0..nM.
inline graphfm::DatasetSchema toy_schema(const std::vector<int>& cat_vocab_sizes, int n_num) {
    graphfm::DatasetSchema s;
    s.label_column = "y";
    int f = 0;
    for (int v : cat_vocab_sizes) {
        s.fields.push_back({"c" + std::to_string(f++), graphfm::FieldKind::categorical, 1});
        graphfm::FieldVocab vocab;
        for (int i = 1; i < v; ++i) vocab.add("x" + std::to_string(i));  // size() == v
        s.vocabs.push_back(std::move(vocab));
    }
    for (int i = 0; i < n_num; ++i) {
        s.fields.push_back({"n" + std::to_string(i), graphfm::FieldKind::numeric, 1});
        s.vocabs.emplace_back();
    }
    s.finalize();
    return s;
}

inline graphfm::Batch random_batch(const graphfm::DatasetSchema& s, int64_t B, uint64_t seed) {
    graphfm::Rng rng(seed);
    graphfm::Batch b;
    b.size = B;
    b.cat.resize(static_cast<size_t>(s.n_cat));
    b.num.resize(static_cast<size_t>(s.n_num));
    for (size_t f = 0; f < s.fields.size(); ++f) {
        if (s.fields[f].kind == graphfm::FieldKind::categorical) {
            auto& col = b.cat[static_cast<size_t>(s.cat_slot[f])];
            for (int64_t r = 0; r < B; ++r)
                col.push_back(
                    static_cast<int32_t>(rng.bounded(static_cast<uint64_t>(s.vocabs[f].size()))));
        } else {
            auto& col = b.num[static_cast<size_t>(s.num_slot[f])];
            for (int64_t r = 0; r < B; ++r) col.push_back(rng.uniform(-1.5, 1.5));
        }
    }
    for (int64_t r = 0; r < B; ++r) b.labels.push_back(static_cast<double>(rng.bounded(2)));
    return b;
}

/// Random rows; the label comes from the caller (categorical indices in field
/// order, then numeric values in field order).
inline graphfm::Dataset synth_dataset(
    const graphfm::DatasetSchema& schema, int64_t n_rows, uint64_t seed,
    const std::function<int(const std::vector<int32_t>&, const std::vector<double>&)>& label_fn) {
    graphfm::Rng rng(seed);
    graphfm::Dataset d;
    d.schema = schema;
    for (int64_t r = 0; r < n_rows; ++r) {
        std::vector<int32_t> cat;
        std::vector<double> num;
        for (size_t f = 0; f < schema.fields.size(); ++f) {
            if (schema.fields[f].kind == graphfm::FieldKind::categorical)
                cat.push_back(
                    static_cast<int32_t>(rng.bounded(static_cast<uint64_t>(schema.vocabs[f].size()))));
            else
                num.push_back(rng.uniform(-1.5, 1.5));
        }
        d.cat.insert(d.cat.end(), cat.begin(), cat.end());
        d.num.insert(d.num.end(), num.begin(), num.end());
        d.labels.push_back(static_cast<uint8_t>(label_fn(cat, num)));
    }
    return d;
}

}  // namespace fixtures
