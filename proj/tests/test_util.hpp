#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "kegraph/tape.hpp"
#include "kegraph/tensor.hpp"

namespace testutil {

// Scratch directory, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        const auto base = std::filesystem::temp_directory_path();
        std::random_device rd;
        path_ = base / ("kegraph_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

  private:
    std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    f << content;
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

// Central finite differences against analytic gradients, elementwise:
// |fd - g| <= max(abs_floor, rel_tol * max(|fd|, |g|)).
struct GradCheck {
    double rel_tol = 1e-4;
    double abs_floor = 1e-7;
    double step = 1e-5;
    double worst_rel = 0.0;

    bool run(const std::function<double(const std::vector<kegraph::Tensor>&)>& f,
             std::vector<kegraph::Tensor> inputs,
             const std::vector<kegraph::Tensor>& analytic) {
        worst_rel = 0.0;
        for (size_t t = 0; t < inputs.size(); ++t) {
            for (size_t i = 0; i < inputs[t].size(); ++i) {
                const double orig = inputs[t][i];
                inputs[t][i] = orig + step;
                const double fp = f(inputs);
                inputs[t][i] = orig - step;
                const double fm = f(inputs);
                inputs[t][i] = orig;
                const double fd = (fp - fm) / (2.0 * step);
                const double g = analytic[t][i];
                const double err = std::abs(fd - g);
                const double scale = std::max(std::abs(fd), std::abs(g));
                const double rel = err / std::max(scale, abs_floor / rel_tol);
                worst_rel = std::max(worst_rel, rel);
                if (err > std::max(abs_floor, rel_tol * scale)) return false;
            }
        }
        return true;
    }
};

inline kegraph::Tensor random_tensor(size_t rows, size_t cols, kegraph::Rng& rng,
                                     double scale = 1.0) {
    kegraph::Tensor t(rows, cols);
    for (size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

}  // namespace testutil
