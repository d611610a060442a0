#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>
#include <unistd.h>

namespace test_support {

inline std::string data_path(const std::string& rel) { return std::string(ASPECTCHECK_DATA_DIR) + "/" + rel; }

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline const nlohmann::json& table2() {
    static const auto doc = nlohmann::json::parse(read_file(data_path("fixtures/table2_examples.json")));
    return doc;
}

inline std::string table2_original() { return table2().at("original").get<std::string>(); }

inline std::map<std::string, std::string> table2_perturbed() {
    return table2().at("perturbed").get<std::map<std::string, std::string>>();
}

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("aspectcheck_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace test_support
