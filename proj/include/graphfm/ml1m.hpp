#pragma once

#include <cstdint>
#include <string>

namespace graphfm {

struct Ml1mPrep {
    int64_t rows_written = 0;
    int64_t rows_dropped = 0;  // rating == 3
    std::string csv_path, schema_path;
};

/// Joins ratings.dat, users.dat, and movies.dat ("::"-separated) from dir into
/// one labeled CSV with fields Gender, Age, Occupation, Zipcode, ReleaseTime
/// (year in the movie title), WatchTime (UTC year of the rating timestamp),
/// and Genre (first listed), plus the binarized label; writes the matching
/// ingestion schema next to it. Rows keep ratings-file order.
Ml1mPrep prep_ml1m(const std::string& dir, const std::string& out_dir);

/// Year suffix "(YYYY)" at the end of a movie title.
int64_t title_year(const std::string& title);

/// UTC calendar year of a unix timestamp.
int64_t utc_year(int64_t unix_ts);

}  // namespace graphfm
