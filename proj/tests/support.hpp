#pragma once

#include <filesystem>
#include <string>

#include "doctest.h"
#include "nrsa/error.hpp"

namespace testsupport {

template <typename F>
void check_code(F&& f, nrsa::ErrorCode code) {
    try {
        f();
        FAIL("expected an error");
    } catch (const nrsa::Error& e) {
        CHECK(e.code() == code);
    }
}

template <typename F>
std::string error_message(F&& f) {
    try {
        f();
    } catch (const nrsa::Error& e) {
        return e.what();
    }
    return {};
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("nrsa_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testsupport
