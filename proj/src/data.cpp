#include "graphfm/data.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>

#include "graphfm/error.hpp"
#include "graphfm/rng.hpp"

namespace graphfm {

namespace {

using nlohmann::json;

// Stream tags for seed derivation: the split shuffle uses stream 0, epoch
// shuffles use the (1-based) epoch number, so they never collide.
constexpr uint64_t kSplitStream = 0;

constexpr uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr uint64_t kFnvPrime = 1099511628211ULL;

void fnv_mix(uint64_t& h, const std::string& s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= kFnvPrime;
    }
    h ^= 0xff;  // field separator
    h *= kFnvPrime;
}

const char* kind_name(FieldKind k) { return k == FieldKind::categorical ? "categorical" : "numeric"; }

FieldKind kind_from_string(const std::string& s) {
    if (s == "categorical") return FieldKind::categorical;
    if (s == "numeric") return FieldKind::numeric;
    throw ParseError("unknown field kind '" + s + "' (expected categorical or numeric)");
}

void split_line(const std::string& line, std::vector<std::string>& cells, int64_t lineno,
                const std::string& path) {
    cells.clear();
    std::string cur;
    bool in_quotes = false;
    bool was_quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"' && cur.empty() && !was_quoted) {
            in_quotes = true;
            was_quoted = true;
        } else if (c == ',') {
            cells.push_back(cur);
            cur.clear();
            was_quoted = false;
        } else {
            cur += c;
        }
    }
    if (in_quotes)
        throw ParseError(path + ":" + std::to_string(lineno) + ": unterminated quoted field");
    cells.push_back(cur);
}

// Column position of every schema field plus the label in the header.
struct ColumnMap {
    std::vector<int64_t> field_col;
    int64_t label_col = -1;
};

ColumnMap map_columns(const std::vector<std::string>& header, const std::string& label_column,
                      const std::vector<FieldSpec>& fields, const std::string& path) {
    std::unordered_map<std::string, int64_t> pos;
    for (size_t i = 0; i < header.size(); ++i) pos.emplace(header[i], static_cast<int64_t>(i));
    ColumnMap cm;
    auto find = [&](const std::string& name) {
        auto it = pos.find(name);
        if (it == pos.end())
            throw ParseError("column '" + name + "' not found in header of " + path);
        return it->second;
    };
    cm.label_col = find(label_column);
    cm.field_col.reserve(fields.size());
    for (const FieldSpec& f : fields) cm.field_col.push_back(find(f.name));
    return cm;
}

uint8_t parse_label(const std::string& cell, const std::string& path, int64_t lineno) {
    if (cell == "0") return 0;
    if (cell == "1") return 1;
    throw ParseError(path + ":" + std::to_string(lineno) + ": label must be 0 or 1, got '" + cell + "'");
}

double parse_numeric(const std::string& cell, const std::string& path, int64_t lineno) {
    if (cell.empty()) return 0.0;  // missing
    const char* s = cell.c_str();
    char* end = nullptr;
    double v = std::strtod(s, &end);
    if (end == s || *end != '\0')
        throw ParseError(path + ":" + std::to_string(lineno) + ": bad numeric value '" + cell + "'");
    return v;
}

void check_cell_count(const std::vector<std::string>& cells, size_t expected, const std::string& path,
                      int64_t lineno) {
    if (cells.size() != expected)
        throw ParseError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(expected) +
                         " cells, got " + std::to_string(cells.size()));
}

}  // namespace

// ---- schema -----------------------------------------------------------

SchemaSpec schema_spec_from_json(const json& j) {
    SchemaSpec spec;
    if (!j.contains("label") || !j["label"].is_string())
        throw ParseError("schema: missing string entry 'label'");
    spec.label_column = j["label"].get<std::string>();
    int64_t default_min = j.value("min_count", static_cast<int64_t>(1));
    if (!j.contains("fields") || !j["fields"].is_array() || j["fields"].empty())
        throw ParseError("schema: 'fields' must be a non-empty array");
    std::unordered_map<std::string, int> seen;
    for (const auto& f : j["fields"]) {
        FieldSpec fs;
        fs.name = f.at("name").get<std::string>();
        fs.kind = kind_from_string(f.at("kind").get<std::string>());
        fs.min_count = f.value("min_count", default_min);
        if (fs.min_count < 1) throw ParseError("schema: min_count must be >= 1 for field " + fs.name);
        if (!seen.emplace(fs.name, 1).second) throw ParseError("schema: duplicate field '" + fs.name + "'");
        spec.fields.push_back(std::move(fs));
    }
    return spec;
}

SchemaSpec load_schema_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open schema file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("schema file " + path + ": " + e.what());
    }
    return schema_spec_from_json(j);
}

void DatasetSchema::finalize() {
    cat_slot.assign(fields.size(), -1);
    num_slot.assign(fields.size(), -1);
    n_cat = n_num = 0;
    for (size_t i = 0; i < fields.size(); ++i) {
        if (fields[i].kind == FieldKind::categorical)
            cat_slot[i] = n_cat++;
        else
            num_slot[i] = n_num++;
    }
    if (vocabs.size() != fields.size()) vocabs.resize(fields.size());
}

int64_t DatasetSchema::total_features() const {
    int64_t total = 0;
    for (size_t i = 0; i < fields.size(); ++i)
        total += fields[i].kind == FieldKind::categorical ? vocabs[i].size() : 1;
    return total;
}

uint64_t DatasetSchema::hash() const {
    uint64_t h = kFnvOffset;
    fnv_mix(h, label_column);
    for (size_t i = 0; i < fields.size(); ++i) {
        fnv_mix(h, fields[i].name);
        fnv_mix(h, kind_name(fields[i].kind));
        fnv_mix(h, std::to_string(fields[i].min_count));
        if (fields[i].kind == FieldKind::categorical)
            for (const std::string& v : vocabs[i].values) fnv_mix(h, v);
    }
    return h;
}

json DatasetSchema::to_json() const {
    json j;
    j["label"] = label_column;
    j["fields"] = json::array();
    for (size_t i = 0; i < fields.size(); ++i) {
        json f;
        f["name"] = fields[i].name;
        f["kind"] = kind_name(fields[i].kind);
        f["min_count"] = fields[i].min_count;
        if (fields[i].kind == FieldKind::categorical) f["vocab"] = vocabs[i].values;
        j["fields"].push_back(std::move(f));
    }
    return j;
}

DatasetSchema DatasetSchema::from_json(const json& j) {
    DatasetSchema schema;
    SchemaSpec spec = schema_spec_from_json(j);
    schema.label_column = spec.label_column;
    schema.fields = spec.fields;
    schema.vocabs.resize(schema.fields.size());
    size_t i = 0;
    for (const auto& f : j["fields"]) {
        if (schema.fields[i].kind == FieldKind::categorical) {
            if (!f.contains("vocab"))
                throw ParseError("schema: fitted vocab missing for field " + schema.fields[i].name);
            for (const auto& v : f["vocab"]) schema.vocabs[i].add(v.get<std::string>());
        }
        ++i;
    }
    schema.finalize();
    return schema;
}

// ---- encoding ---------------------------------------------------------

double transform_numeric(double z) {
    if (z > 2.0) {
        double l = std::log(z);
        return l * l;
    }
    return z;
}

std::optional<int> binarize_rating(int64_t rating) {
    if (rating < 0 || rating > 5)
        throw ParseError("rating out of range 0..5: " + std::to_string(rating));
    if (rating == 3) return std::nullopt;
    return rating > 3 ? 1 : 0;
}

DatasetSchema build_vocab(const std::vector<std::vector<std::string>>& rows, const SchemaSpec& spec) {
    if (rows.empty()) throw DataError("build_vocab: empty dataset");
    const size_t nf = spec.fields.size();
    std::vector<std::unordered_map<std::string, int64_t>> counts(nf);
    std::vector<std::vector<std::string>> first_seen(nf);
    for (const auto& row : rows) {
        if (row.size() != nf)
            throw DimensionError("build_vocab: row has " + std::to_string(row.size()) + " cells, expected " +
                                 std::to_string(nf));
        for (size_t i = 0; i < nf; ++i) {
            if (spec.fields[i].kind != FieldKind::categorical) continue;
            auto [it, fresh] = counts[i].emplace(row[i], 0);
            it->second++;
            if (fresh) first_seen[i].push_back(row[i]);
        }
    }
    DatasetSchema schema;
    schema.label_column = spec.label_column;
    schema.fields = spec.fields;
    schema.vocabs.resize(nf);
    for (size_t i = 0; i < nf; ++i) {
        if (spec.fields[i].kind != FieldKind::categorical) continue;
        for (const std::string& v : first_seen[i])
            if (counts[i][v] >= spec.fields[i].min_count) schema.vocabs[i].add(v);
    }
    schema.finalize();
    return schema;
}

namespace {

void encode_row(const DatasetSchema& schema, const std::vector<std::string>& cells, const ColumnMap& cm,
                const std::string& path, int64_t lineno, Dataset& out) {
    out.labels.push_back(parse_label(cells[static_cast<size_t>(cm.label_col)], path, lineno));
    for (size_t i = 0; i < schema.fields.size(); ++i) {
        const std::string& cell = cells[static_cast<size_t>(cm.field_col[i])];
        if (schema.fields[i].kind == FieldKind::categorical)
            out.cat.push_back(schema.vocabs[i].lookup(cell));
        else
            out.num.push_back(transform_numeric(parse_numeric(cell, path, lineno)));
    }
}

}  // namespace

Dataset load_csv(const std::string& csv_path, const SchemaSpec& spec) {
    const size_t nf = spec.fields.size();
    std::vector<std::unordered_map<std::string, int64_t>> counts(nf);
    std::vector<std::vector<std::string>> first_seen(nf);
    int64_t n_rows = 0;
    {
        CsvReader reader(csv_path);
        ColumnMap cm = map_columns(reader.header(), spec.label_column, spec.fields, csv_path);
        std::vector<std::string> cells;
        while (reader.next(cells)) {
            check_cell_count(cells, reader.header().size(), csv_path, reader.line_number());
            ++n_rows;
            for (size_t i = 0; i < nf; ++i) {
                if (spec.fields[i].kind != FieldKind::categorical) continue;
                const std::string& v = cells[static_cast<size_t>(cm.field_col[i])];
                auto [it, fresh] = counts[i].emplace(v, 0);
                it->second++;
                if (fresh) first_seen[i].push_back(v);
            }
        }
    }
    if (n_rows == 0) throw DataError("empty dataset: " + csv_path);

    Dataset out;
    out.schema.label_column = spec.label_column;
    out.schema.fields = spec.fields;
    out.schema.vocabs.resize(nf);
    for (size_t i = 0; i < nf; ++i) {
        if (spec.fields[i].kind != FieldKind::categorical) continue;
        for (const std::string& v : first_seen[i])
            if (counts[i][v] >= spec.fields[i].min_count) out.schema.vocabs[i].add(v);
    }
    out.schema.finalize();

    out.cat.reserve(static_cast<size_t>(n_rows * out.schema.n_cat));
    out.num.reserve(static_cast<size_t>(n_rows * out.schema.n_num));
    out.labels.reserve(static_cast<size_t>(n_rows));
    CsvReader reader(csv_path);
    ColumnMap cm = map_columns(reader.header(), spec.label_column, spec.fields, csv_path);
    std::vector<std::string> cells;
    while (reader.next(cells)) {
        check_cell_count(cells, reader.header().size(), csv_path, reader.line_number());
        encode_row(out.schema, cells, cm, csv_path, reader.line_number(), out);
    }
    return out;
}

Dataset encode_csv(const std::string& csv_path, const DatasetSchema& schema) {
    Dataset out;
    out.schema = schema;
    out.schema.finalize();
    CsvReader reader(csv_path);
    ColumnMap cm = map_columns(reader.header(), schema.label_column, schema.fields, csv_path);
    std::vector<std::string> cells;
    while (reader.next(cells)) {
        check_cell_count(cells, reader.header().size(), csv_path, reader.line_number());
        encode_row(out.schema, cells, cm, csv_path, reader.line_number(), out);
    }
    if (out.n_rows() == 0) throw DataError("empty dataset: " + csv_path);
    return out;
}

// ---- splits and batches ------------------------------------------------

Splits split_dataset(const Dataset& data, const SplitSpec& spec) {
    if (std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
    const int64_t n = data.n_rows();
    std::vector<int64_t> perm(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    Rng rng(derive_seed(spec.seed, kSplitStream));
    shuffle(perm, rng);

    const int64_t n_train = static_cast<int64_t>(std::floor(static_cast<double>(n) * spec.train));
    const int64_t n_trval = static_cast<int64_t>(std::floor(static_cast<double>(n) * (spec.train + spec.val)));
    const int64_t n_val = n_trval - n_train;
    const int64_t n_test = n - n_trval;
    if (n_train < 1 || n_val < 1 || n_test < 1)
        throw DataError("split produces an empty partition (n=" + std::to_string(n) + ")");

    Splits s;
    s.train.data = s.val.data = s.test.data = &data;
    s.train.rows.assign(perm.begin(), perm.begin() + n_train);
    s.val.rows.assign(perm.begin() + n_train, perm.begin() + n_trval);
    s.test.rows.assign(perm.begin() + n_trval, perm.end());
    return s;
}

nlohmann::json split_manifest(const SplitSpec& spec, int64_t n_total) {
    const int64_t n_train = static_cast<int64_t>(std::floor(static_cast<double>(n_total) * spec.train));
    const int64_t n_trval =
        static_cast<int64_t>(std::floor(static_cast<double>(n_total) * (spec.train + spec.val)));
    json j;
    j["seed"] = spec.seed;
    j["n_total"] = n_total;
    j["fractions"] = {{"train", spec.train}, {"val", spec.val}, {"test", spec.test}};
    // Half-open ranges into the permutation determined by the seed.
    j["ranges"] = {{"train", {0, n_train}}, {"val", {n_train, n_trval}}, {"test", {n_trval, n_total}}};
    return j;
}

Batch gather_batch(const Dataset& data, const std::vector<int64_t>& rows, int64_t begin, int64_t count) {
    const DatasetSchema& s = data.schema;
    Batch b;
    b.size = count;
    b.cat.assign(static_cast<size_t>(s.n_cat), {});
    b.num.assign(static_cast<size_t>(s.n_num), {});
    for (auto& c : b.cat) c.resize(static_cast<size_t>(count));
    for (auto& c : b.num) c.resize(static_cast<size_t>(count));
    b.labels.resize(static_cast<size_t>(count));
    for (int64_t k = 0; k < count; ++k) {
        const int64_t r = rows[static_cast<size_t>(begin + k)];
        b.labels[static_cast<size_t>(k)] = data.labels[static_cast<size_t>(r)];
        for (int64_t c = 0; c < s.n_cat; ++c)
            b.cat[static_cast<size_t>(c)][static_cast<size_t>(k)] =
                data.cat[static_cast<size_t>(r * s.n_cat + c)];
        for (int64_t c = 0; c < s.n_num; ++c)
            b.num[static_cast<size_t>(c)][static_cast<size_t>(k)] =
                data.num[static_cast<size_t>(r * s.n_num + c)];
    }
    return b;
}

void iterate_batches(const DatasetView& view, int64_t batch_size, uint64_t seed, int64_t epoch, bool shuffle_rows,
                     const std::function<void(const Batch&)>& fn) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    std::vector<int64_t> order = view.rows;
    if (shuffle_rows) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(epoch)));
        shuffle(order, rng);
    }
    const int64_t n = static_cast<int64_t>(order.size());
    for (int64_t begin = 0; begin < n; begin += batch_size) {
        const int64_t count = std::min(batch_size, n - begin);
        fn(gather_batch(*view.data, order, begin, count));
    }
}

// ---- csv io -------------------------------------------------------------

CsvReader::CsvReader(const std::string& path) : path_(path) {
    auto* f = new std::ifstream(path);
    if (!*f) {
        delete f;
        throw ParseError("cannot open " + path);
    }
    file_ = f;
    std::string line;
    if (!std::getline(*f, line)) throw ParseError(path + ": missing header row");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    line_ = 1;
    split_line(line, header_, line_, path_);
}

CsvReader::~CsvReader() { delete static_cast<std::ifstream*>(file_); }

bool CsvReader::next(std::vector<std::string>& cells) {
    auto* f = static_cast<std::ifstream*>(file_);
    std::string line;
    if (!std::getline(*f, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++line_;
    split_line(line, cells, line_, path_);
    return true;
}

void write_csv_row(std::string& out, const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        const std::string& c = cells[i];
        if (c.find_first_of(",\"\r\n") != std::string::npos) {
            out += '"';
            for (char ch : c) {
                if (ch == '"') out += '"';
                out += ch;
            }
            out += '"';
        } else {
            out += c;
        }
    }
    out += '\n';
}

}  // namespace graphfm
