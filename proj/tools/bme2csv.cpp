// Converts a BME AI-Studio raw-data export (.bmerawdata JSON) into the board
// CSV read by `affcal evaluate-board`.
//
// usage: bme2csv <export.bmerawdata> [out.csv]

#include <fstream>
#include <iostream>

#include "affcal/dataset.hpp"
#include "affcal/io.hpp"

int main(int argc, char** argv) {
  if (argc < 2 || argc > 3) {
    std::cerr << "usage: bme2csv <export.bmerawdata> [out.csv]\n";
    return 2;
  }
  try {
    const auto doc = nlohmann::json::parse(affcal::io::read_text(argv[1]));
    const auto csv = affcal::board::board_csv(affcal::board::convert_bme_export(doc));
    if (argc == 3) {
      std::ofstream out(argv[2], std::ios::binary);
      if (!out) {
        std::cerr << "error: cannot write " << argv[2] << "\n";
        return 2;
      }
      out << csv;
    } else {
      std::cout << csv;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
