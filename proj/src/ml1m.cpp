#include "graphfm/ml1m.hpp"

#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include "graphfm/data.hpp"
#include "graphfm/error.hpp"
#include "json.hpp"

namespace graphfm {

namespace {

std::vector<std::string> split_double_colon(const std::string& line) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (true) {
        size_t next = line.find("::", pos);
        if (next == std::string::npos) {
            out.push_back(line.substr(pos));
            return out;
        }
        out.push_back(line.substr(pos, next - pos));
        pos = next + 2;
    }
}

int64_t parse_int(const std::string& s, const std::string& where) {
    try {
        size_t used = 0;
        int64_t v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError(where + ": expected an integer, got '" + s + "'");
    }
}

/// Reads a ::-separated file line by line, handing each record to fn.
void read_dat(const std::string& path, size_t n_fields,
              const std::function<void(const std::vector<std::string>&, const std::string&)>& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells = split_double_colon(line);
        if (cells.size() != n_fields)
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(n_fields) + " fields, got " + std::to_string(cells.size()));
        fn(cells, path + ":" + std::to_string(lineno));
    }
}

}  // namespace

int64_t title_year(const std::string& title) {
    std::string t = title;
    while (!t.empty() && (t.back() == ' ' || t.back() == '\t')) t.pop_back();
    const size_t close = t.rfind(')');
    const size_t open = t.rfind('(');
    if (close == std::string::npos || open == std::string::npos || close != t.size() - 1 ||
        close - open != 5)
        throw ParseError("title has no trailing (YYYY): '" + title + "'");
    return parse_int(t.substr(open + 1, 4), "title '" + title + "'");
}

int64_t utc_year(int64_t unix_ts) {
    const time_t ts = static_cast<time_t>(unix_ts);
    std::tm tm{};
    if (gmtime_r(&ts, &tm) == nullptr) throw ParseError("timestamp out of range: " + std::to_string(unix_ts));
    return tm.tm_year + 1900;
}

Ml1mPrep prep_ml1m(const std::string& dir, const std::string& out_dir) {
    struct UserRow {
        std::string gender, age, occupation, zipcode;
    };
    struct MovieRow {
        std::string release_year, genre;
    };
    std::unordered_map<int64_t, UserRow> users;
    std::unordered_map<int64_t, MovieRow> movies;

    // UserID::Gender::Age::Occupation::Zip-code
    read_dat(dir + "/users.dat", 5, [&](const std::vector<std::string>& c, const std::string& where) {
        users[parse_int(c[0], where)] = {c[1], c[2], c[3], c[4]};
    });
    // MovieID::Title::Genres (pipe-separated; first genre kept)
    read_dat(dir + "/movies.dat", 3, [&](const std::vector<std::string>& c, const std::string& where) {
        const std::string genre = c[2].substr(0, c[2].find('|'));
        movies[parse_int(c[0], where)] = {std::to_string(title_year(c[1])), genre};
    });

    std::filesystem::create_directories(out_dir);
    Ml1mPrep out{0, 0, out_dir + "/ml1m.csv", out_dir + "/ml1m.schema.json"};
    std::ofstream csv(out.csv_path, std::ios::binary);
    if (!csv) throw DataError("cannot write " + out.csv_path);
    std::string line;
    write_csv_row(line, {"Gender", "Age", "Occupation", "Zipcode", "ReleaseTime", "WatchTime", "Genre", "y"});
    csv << line;

    // UserID::MovieID::Rating::Timestamp, kept in file order
    read_dat(dir + "/ratings.dat", 4, [&](const std::vector<std::string>& c, const std::string& where) {
        std::optional<int> label = binarize_rating(parse_int(c[2], where));
        if (!label) {
            ++out.rows_dropped;
            return;
        }
        auto uit = users.find(parse_int(c[0], where));
        if (uit == users.end()) throw DataError(where + ": unknown user id " + c[0]);
        auto mit = movies.find(parse_int(c[1], where));
        if (mit == movies.end()) throw DataError(where + ": unknown movie id " + c[1]);
        const UserRow& u = uit->second;
        const MovieRow& m = mit->second;
        line.clear();
        write_csv_row(line, {u.gender, u.age, u.occupation, u.zipcode, m.release_year,
                             std::to_string(utc_year(parse_int(c[3], where))), m.genre,
                             *label ? "1" : "0"});
        csv << line;
        ++out.rows_written;
    });
    csv.close();

    nlohmann::json schema;
    schema["label"] = "y";
    schema["min_count"] = 1;
    schema["fields"] = nlohmann::json::array();
    for (const char* name : {"Gender", "Age", "Occupation", "Zipcode", "ReleaseTime", "WatchTime", "Genre"})
        schema["fields"].push_back({{"name", name}, {"kind", "categorical"}});
    std::ofstream sf(out.schema_path, std::ios::binary);
    if (!sf) throw DataError("cannot write " + out.schema_path);
    sf << schema.dump(2) << "\n";
    return out;
}

}  // namespace graphfm
