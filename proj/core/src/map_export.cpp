#include "plop/map_export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <stdexcept>

namespace plop {

namespace {

size_t type_col(ModuleType t) {
  for (size_t i = 0; i < kCanonicalTypes.size(); ++i) {
    if (kCanonicalTypes[i] == t) return i;
  }
  throw std::logic_error("unknown module type");
}

void append_f(std::string& out, const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  out += buf;
}

}  // namespace

float NFNMap::cell(size_t layer_index, ModuleType t) const {
  return cells.at(layer_index * kCanonicalTypes.size() + type_col(t));
}

void NFNMap::set_cell(size_t layer_index, ModuleType t, float value) {
  cells.at(layer_index * kCanonicalTypes.size() + type_col(t)) = value;
}

NFNMap map_from_scores(const std::vector<NFNScore>& scores, const AliasMap& aliases) {
  if (scores.empty()) throw std::invalid_argument("map_from_scores: no scores");
  std::string bad_type, bad_layer;
  std::map<std::pair<int, size_t>, std::pair<double, int64_t>> sums;
  for (const auto& s : scores) {
    auto type = resolve_module_type(s.module_name, aliases);
    if (!type) {
      bad_type += bad_type.empty() ? s.module_name : ", " + s.module_name;
      continue;
    }
    auto layer = layer_from_name(s.module_name);
    if (!layer) {
      bad_layer += bad_layer.empty() ? s.module_name : ", " + s.module_name;
      continue;
    }
    auto& acc = sums[{*layer, type_col(*type)}];
    acc.first += s.score;
    acc.second += 1;
  }
  if (!bad_type.empty()) {
    throw std::invalid_argument("map_from_scores: unresolvable module type for: " + bad_type);
  }
  if (!bad_layer.empty()) {
    throw std::invalid_argument("map_from_scores: no layer index in: " + bad_layer);
  }

  NFNMap map;
  for (const auto& [key, acc] : sums) {
    if (map.layers.empty() || map.layers.back() != key.first) map.layers.push_back(key.first);
  }
  map.cells.assign(map.layers.size() * kCanonicalTypes.size(),
                   std::numeric_limits<float>::quiet_NaN());
  for (const auto& [key, acc] : sums) {
    size_t row = std::lower_bound(map.layers.begin(), map.layers.end(), key.first) -
                 map.layers.begin();
    map.cells[row * kCanonicalTypes.size() + key.second] =
        static_cast<float>(acc.first / static_cast<double>(acc.second));
  }
  return map;
}

std::string map_to_csv(const NFNMap& map) {
  std::string out = "layer";
  for (auto t : kCanonicalTypes) {
    out += ',';
    out += canonical_name(t);
  }
  out += '\n';
  for (size_t row = 0; row < map.layers.size(); ++row) {
    out += std::to_string(map.layers[row]);
    for (size_t col = 0; col < kCanonicalTypes.size(); ++col) {
      out += ',';
      float v = map.cells[row * kCanonicalTypes.size() + col];
      if (!std::isnan(v)) append_f(out, "%.9g", v);
    }
    out += '\n';
  }
  return out;
}

NFNMap map_from_csv(std::string_view text) {
  std::string expect = "layer";
  for (auto t : kCanonicalTypes) {
    expect += ',';
    expect += canonical_name(t);
  }
  size_t eol = text.find('\n');
  if (eol == std::string_view::npos || text.substr(0, eol) != expect) {
    throw std::invalid_argument("map_from_csv: header is not '" + expect + "'");
  }
  NFNMap map;
  size_t pos = eol + 1;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t f = 0;
    while (true) {
      size_t c = line.find(',', f);
      fields.push_back(line.substr(f, c == std::string::npos ? c : c - f));
      if (c == std::string::npos) break;
      f = c + 1;
    }
    if (fields.size() != 1 + kCanonicalTypes.size()) {
      throw std::invalid_argument("map_from_csv: row '" + line + "' has " +
                                  std::to_string(fields.size()) + " fields, expected " +
                                  std::to_string(1 + kCanonicalTypes.size()));
    }
    map.layers.push_back(std::stoi(fields[0]));
    for (size_t col = 0; col < kCanonicalTypes.size(); ++col) {
      const std::string& field = fields[1 + col];
      map.cells.push_back(field.empty() ? std::numeric_limits<float>::quiet_NaN()
                                        : std::stof(field));
    }
  }
  if (map.layers.empty()) throw std::invalid_argument("map_from_csv: no rows");
  return map;
}

namespace {

struct Rgb {
  int r, g, b;
};

// Diverging blue / white / red, centered on a score of 1.0.
Rgb score_color(float s) {
  double c = std::clamp(static_cast<double>(s), 0.5, 3.0);
  double t = c <= 1.0 ? (c - 0.5) : 0.5 + 0.5 * (c - 1.0) / 2.0;
  const Rgb lo{59, 76, 192}, mid{247, 247, 247}, hi{180, 4, 38};
  auto lerp = [](const Rgb& a, const Rgb& b, double u) {
    return Rgb{static_cast<int>(std::lround(a.r + (b.r - a.r) * u)),
               static_cast<int>(std::lround(a.g + (b.g - a.g) * u)),
               static_cast<int>(std::lround(a.b + (b.b - a.b) * u))};
  };
  return t <= 0.5 ? lerp(lo, mid, t * 2.0) : lerp(mid, hi, (t - 0.5) * 2.0);
}

std::string hex_color(Rgb c) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

const char* text_color(Rgb c) {
  double lum = 0.299 * c.r + 0.587 * c.g + 0.114 * c.b;
  return lum < 128.0 ? "#ffffff" : "#1a1a1a";
}

}  // namespace

std::string map_to_svg(const NFNMap& map) {
  const int cell_w = 78, cell_h = 26, left = 56, top = 34, legend_h = 46;
  const int cols = static_cast<int>(kCanonicalTypes.size());
  const int rows = static_cast<int>(map.layers.size());
  const int width = left + cols * cell_w + 12;
  const int height = top + rows * cell_h + legend_h;

  std::string svg;
  char buf[256];
  auto put = [&](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof(buf), fmt, args...);
    svg += buf;
  };

  put("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
      "viewBox=\"0 0 %d %d\" font-family=\"monospace\" font-size=\"11\">\n",
      width, height, width, height);
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";

  for (int col = 0; col < cols; ++col) {
    put("<text x=\"%d\" y=\"%d\" text-anchor=\"middle\" fill=\"#1a1a1a\">%s</text>\n",
        left + col * cell_w + cell_w / 2, top - 10, canonical_name(kCanonicalTypes[col]));
  }
  for (int row = 0; row < rows; ++row) {
    put("<text x=\"%d\" y=\"%d\" text-anchor=\"end\" fill=\"#1a1a1a\">%d</text>\n", left - 8,
        top + row * cell_h + cell_h / 2 + 4, map.layers[row]);
    for (int col = 0; col < cols; ++col) {
      float v = map.cells[static_cast<size_t>(row) * cols + col];
      int x = left + col * cell_w, y = top + row * cell_h;
      if (std::isnan(v)) {
        put("<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"#d0d0d0\" "
            "stroke=\"#ffffff\"/>\n",
            x, y, cell_w, cell_h);
        continue;
      }
      Rgb c = score_color(v);
      put("<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"%s\" "
          "stroke=\"#ffffff\"/>\n",
          x, y, cell_w, cell_h, hex_color(c).c_str());
      put("<text x=\"%d\" y=\"%d\" text-anchor=\"middle\" fill=\"%s\">%.2f</text>\n",
          x + cell_w / 2, y + cell_h / 2 + 4, text_color(c), v);
    }
  }

  // legend: gradient strip with the clamp endpoints and the center marked
  const int strip_w = cols * cell_w, strip_h = 10;
  const int ly = top + rows * cell_h + 14;
  const int steps = 64;
  for (int i = 0; i < steps; ++i) {
    double s = 0.5 + (3.0 - 0.5) * i / (steps - 1);
    int x0 = left + strip_w * i / steps;
    int x1 = left + strip_w * (i + 1) / steps;
    put("<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"%s\"/>\n", x0, ly, x1 - x0,
        strip_h, hex_color(score_color(static_cast<float>(s))).c_str());
  }
  auto tick = [&](double s, const char* label) {
    int x = left + static_cast<int>(strip_w * (s - 0.5) / 2.5);
    put("<text x=\"%d\" y=\"%d\" text-anchor=\"middle\" fill=\"#1a1a1a\">%s</text>\n", x,
        ly + strip_h + 14, label);
  };
  tick(0.5, "0.5");
  tick(1.0, "1.0");
  tick(3.0, "3.0");
  svg += "</svg>\n";
  return svg;
}

std::string type_scores_text(const TypeScoreTable& table) {
  // Report order puts down_proj ahead of up_proj; canonical order is for
  // data structures, this block is for eyes.
  static constexpr std::array<ModuleType, 7> kPrintOrder = {
      ModuleType::kQuery,    ModuleType::kKey,      ModuleType::kValue,  ModuleType::kOutProj,
      ModuleType::kGateProj, ModuleType::kDownProj, ModuleType::kUpProj,
  };
  std::string out;
  out += "===========================\n";
  out += " NFN Scores by Module Type\n";
  out += "===========================\n";
  for (auto t : kPrintOrder) {
    const auto* row = table.find(t);
    if (!row) continue;
    out += ' ';
    out += canonical_name(t);
    out += ": ";
    append_f(out, "%.2f", row->mean);
    out += '\n';
  }
  return out;
}

}  // namespace plop
