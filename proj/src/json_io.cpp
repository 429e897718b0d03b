#include "posespace/json_io.h"

#include "posespace/error.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace posespace {

namespace {

void append_number(std::string& out, double value) {
  if (!std::isfinite(value)) {
    // JSON has no representation for these; the readers treat null as NaN.
    out += "null";
    return;
  }
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.16e", value);
  out += buffer;
}

void append_indent(std::string& out, int indent, int depth) {
  if (indent < 0) {
    return;
  }
  out += '\n';
  out.append(static_cast<size_t>(indent * depth), ' ');
}

bool is_flat_numeric_array(const Json& doc) {
  for (const auto& item : doc) {
    if (!item.is_number()) {
      return false;
    }
  }
  return true;
}

void dump_value(std::string& out, const Json& doc, int indent, int depth) {
  switch (doc.type()) {
    case Json::value_t::object: {
      if (doc.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (const auto& [key, value] : doc.items()) {
        if (!first) {
          out += ',';
        }
        first = false;
        append_indent(out, indent, depth + 1);
        out += Json(key).dump();
        out += indent >= 0 ? ": " : ":";
        dump_value(out, value, indent, depth + 1);
      }
      append_indent(out, indent, depth);
      out += '}';
      return;
    }
    case Json::value_t::array: {
      if (doc.empty()) {
        out += "[]";
        return;
      }
      // Keep short numeric rows (points, triangles) on one line.
      const bool inline_row = is_flat_numeric_array(doc);
      out += '[';
      bool first = true;
      for (const auto& value : doc) {
        if (!first) {
          out += inline_row && indent >= 0 ? ", " : ",";
        }
        first = false;
        if (!inline_row) {
          append_indent(out, indent, depth + 1);
        }
        dump_value(out, value, indent, depth + 1);
      }
      if (!inline_row) {
        append_indent(out, indent, depth);
      }
      out += ']';
      return;
    }
    case Json::value_t::number_float:
      append_number(out, doc.get<double>());
      return;
    default:
      out += doc.dump();
      return;
  }
}

}  // namespace

std::string dump_json(const Json& doc, int indent) {
  std::string out;
  dump_value(out, doc, indent, 0);
  out += '\n';
  return out;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  POSESPACE_CHECK(in.good(), DataError, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw DataError("failed to parse " + path.string() + ": " + e.what());
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    POSESPACE_CHECK(out.good(), DataError, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    POSESPACE_CHECK(out.good(), DataError, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_json_file(const std::filesystem::path& path, const Json& doc) {
  write_file_atomic(path, dump_json(doc));
}

}  // namespace posespace
