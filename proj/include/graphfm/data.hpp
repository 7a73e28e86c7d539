#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace graphfm {

enum class FieldKind { categorical, numeric };

struct FieldSpec {
    std::string name;
    FieldKind kind = FieldKind::categorical;
    int64_t min_count = 1;  // categorical only
};

/// Parsed sidecar: which column is the label and what each feature column is.
struct SchemaSpec {
    std::string label_column;
    std::vector<FieldSpec> fields;
};

SchemaSpec schema_spec_from_json(const nlohmann::json& j);
SchemaSpec load_schema_spec(const std::string& path);

/// Per-field dictionary. Index 0 is reserved for unknown: values dropped by
/// min_count and categories never seen at fit time both land there.
struct FieldVocab {
    std::vector<std::string> values;  // values[i] has index i+1, first-seen order
    std::unordered_map<std::string, int32_t> index;

    int32_t size() const { return static_cast<int32_t>(values.size()) + 1; }
    int32_t lookup(const std::string& v) const {
        auto it = index.find(v);
        return it == index.end() ? 0 : it->second;
    }
    void add(std::string v) {
        index.emplace(v, static_cast<int32_t>(values.size()) + 1);
        values.push_back(std::move(v));
    }
};

/// SchemaSpec plus fitted vocabularies; the unit a model is built against.
struct DatasetSchema {
    std::string label_column;
    std::vector<FieldSpec> fields;
    std::vector<FieldVocab> vocabs;   // aligned with fields; unused for numeric
    std::vector<int64_t> cat_slot;    // field -> dense categorical position, -1 if numeric
    std::vector<int64_t> num_slot;    // field -> dense numeric position, -1 if categorical
    int64_t n_cat = 0;
    int64_t n_num = 0;

    int64_t n_fields() const { return static_cast<int64_t>(fields.size()); }
    int64_t total_features() const;
    void finalize();  // fills the slot maps; call after fields/vocabs are set

    uint64_t hash() const;
    nlohmann::json to_json() const;
    static DatasetSchema from_json(const nlohmann::json& j);
};

/// Encoded instances, row-major.
struct Dataset {
    DatasetSchema schema;
    std::vector<int32_t> cat;    // n_rows x n_cat
    std::vector<double> num;     // n_rows x n_num
    std::vector<uint8_t> labels; // 0/1

    int64_t n_rows() const { return static_cast<int64_t>(labels.size()); }
};

/// A subset of a dataset's rows (split or working set); does not own the data.
struct DatasetView {
    const Dataset* data = nullptr;
    std::vector<int64_t> rows;

    int64_t size() const { return static_cast<int64_t>(rows.size()); }
};

/// B instances packed column-wise per field, ready for embedding lookups.
struct Batch {
    int64_t size = 0;
    std::vector<std::vector<int32_t>> cat;  // n_cat columns of length size
    std::vector<std::vector<double>> num;   // n_num columns of length size
    std::vector<double> labels;
};

// Numeric preprocessing: values above 2 are squashed to log(z)^2 (natural
// log); missing values are 0. Applied at encode time.
double transform_numeric(double z);

// Rating-to-click binarization: > 3 positive, < 3 negative, == 3 dropped.
// Ratings outside 1..5 are malformed input.
std::optional<int> binarize_rating(int64_t rating);

/// Builds per-field vocabularies from raw rows (cells aligned with specs).
/// Frequencies below the field's min_count collapse into unknown (index 0);
/// kept values get dense indices 1.. in first-seen order.
DatasetSchema build_vocab(const std::vector<std::vector<std::string>>& rows, const SchemaSpec& spec);

/// Two streaming passes over a CSV with header: fit vocabularies, then encode.
Dataset load_csv(const std::string& csv_path, const SchemaSpec& spec);

/// Encode a CSV against an already-fitted schema (evaluation on new data).
/// Unseen categories map to index 0; encoding is a pure function of
/// (schema, raw cells).
Dataset encode_csv(const std::string& csv_path, const DatasetSchema& schema);

struct SplitSpec {
    double train = 0.8, val = 0.1, test = 0.1;
    uint64_t seed = 42;
};

struct Splits {
    DatasetView train, val, test;
};

/// Seeded shuffle, then contiguous cut. Every row lands in exactly one split;
/// a fraction that rounds to zero rows is an error.
Splits split_dataset(const Dataset& data, const SplitSpec& spec);

/// Everything needed to reproduce the split: seed and the index ranges into
/// the seed-determined permutation.
nlohmann::json split_manifest(const SplitSpec& spec, int64_t n_total);

Batch gather_batch(const Dataset& data, const std::vector<int64_t>& rows, int64_t begin, int64_t count);

/// Walks the view in batches. With shuffle on, the visit order is a fresh
/// permutation derived from (seed, epoch); off, it is the view's own order.
/// The final short batch is emitted.
void iterate_batches(const DatasetView& view, int64_t batch_size, uint64_t seed, int64_t epoch, bool shuffle,
                     const std::function<void(const Batch&)>& fn);

/// Minimal strict CSV: header row, quoted fields with doubled-quote escapes,
/// CRLF tolerated. Quoted newlines are not supported.
class CsvReader {
  public:
    explicit CsvReader(const std::string& path);
    ~CsvReader();
    CsvReader(const CsvReader&) = delete;
    CsvReader& operator=(const CsvReader&) = delete;

    const std::vector<std::string>& header() const { return header_; }
    /// Reads the next data row into cells; false at end of file.
    bool next(std::vector<std::string>& cells);
    int64_t line_number() const { return line_; }

  private:
    void* file_ = nullptr;
    std::string path_;
    std::vector<std::string> header_;
    int64_t line_ = 0;
};

void write_csv_row(std::string& out, const std::vector<std::string>& cells);

}  // namespace graphfm
