#include "aircorrect/csv.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "aircorrect/errors.hpp"

namespace aircorrect {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"' && cur.empty()) {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (quoted) throw ParseError("unterminated quote in CSV record: " + line);
    fields.push_back(std::move(cur));
    return fields;
}

CsvTable read_csv_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open CSV file: " + path.string());
    CsvTable table;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (first) {
            table.header = split_csv_line(line);
            first = false;
            continue;
        }
        if (line.empty()) continue;
        table.rows.push_back(split_csv_line(line));
    }
    if (first) throw ParseError("empty CSV file: " + path.string());
    return table;
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    // Shortest representation that parses back to the same bits.
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double_strict(const std::string& field, const std::string& context) {
    if (field.empty()) throw ParseError("empty numeric field " + context);
    char* end = nullptr;
    const double v = std::strtod(field.c_str(), &end);
    if (end != field.c_str() + field.size())
        throw ParseError("unparseable numeric cell \"" + field + "\" " + context);
    if (!std::isfinite(v)) throw ParseError("non-finite value \"" + field + "\" " + context);
    return v;
}

namespace {

// Civil-date conversion (proleptic Gregorian), exact for the full i64 range
// we care about. Days are relative to 1970-01-01.
std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t yi = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y = static_cast<int>(yi + (m <= 2));
}

}  // namespace

std::string epoch_to_iso8601(std::int64_t epoch_seconds) {
    std::int64_t days = epoch_seconds / 86400;
    std::int64_t rem = epoch_seconds % 86400;
    if (rem < 0) {
        rem += 86400;
        --days;
    }
    int y;
    unsigned m, d;
    civil_from_days(days, y, m, d);
    const int hh = static_cast<int>(rem / 3600);
    const int mm = static_cast<int>((rem % 3600) / 60);
    const int ss = static_cast<int>(rem % 60);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02dZ", y, m, d, hh, mm, ss);
    return buf;
}

std::int64_t iso8601_to_epoch(const std::string& text) {
    int y, hh, mm, ss;
    unsigned mo, dd;
    char tail = '\0';
    const int n = std::sscanf(text.c_str(), "%d-%u-%uT%d:%d:%d%c", &y, &mo, &dd, &hh, &mm, &ss, &tail);
    if (n < 6 || (n == 7 && tail != 'Z'))
        throw ParseError("malformed ISO-8601 timestamp: \"" + text + "\"");
    if (mo < 1 || mo > 12 || dd < 1 || dd > 31 || hh < 0 || hh > 23 || mm < 0 || mm > 59 ||
        ss < 0 || ss > 60)
        throw ParseError("out-of-range ISO-8601 timestamp: \"" + text + "\"");
    const std::int64_t days = days_from_civil(y, mo, dd);
    int ry;
    unsigned rm, rd;
    civil_from_days(days, ry, rm, rd);
    // Catches calendar-invalid dates like Feb 30 that pass the range check.
    if (ry != y || rm != mo || rd != dd)
        throw ParseError("invalid calendar date in timestamp: \"" + text + "\"");
    return days * 86400 + hh * 3600 + mm * 60 + ss;
}

}  // namespace aircorrect
