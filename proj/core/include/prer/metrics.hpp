#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prer/tensor.hpp"

namespace prer::metrics {

/// M x M score matrix; R(i, j) is the test accuracy on task j after task i.
/// Entries above the diagonal are never filled and read as NaN.
class ScoreMatrix {
public:
    ScoreMatrix() = default;
    explicit ScoreMatrix(std::size_t tasks);
    static ScoreMatrix from_rows(const std::vector<std::vector<double>>& rows);

    std::size_t tasks() const noexcept { return m_; }
    double at(std::size_t i, std::size_t j) const;
    void set(std::size_t i, std::size_t j, double value);
    bool filled(std::size_t i, std::size_t j) const;
    /// Final accuracy per task: the last row.
    std::vector<double> final_row() const;
    /// Row-major, 6-decimal fixed point; unfilled cells are written empty.
    std::string to_csv() const;

private:
    std::size_t m_ = 0;
    std::vector<double> cells_;
};

/// Mean of the lower triangle of R, diagonal included.
double accuracy_metric(const ScoreMatrix& r);

struct BwtResult {
    double value = 0.0;
    bool defined = false;
};

/// Mean of R(i, j) - R(j, j) over i > j. Reported as 0 and undefined when M = 1.
BwtResult bwt_metric(const ScoreMatrix& r);

enum class Method { naive, prer, lwf, ewc, gem, er };

Method parse_method(const std::string& name);
std::string to_string(Method m);

/// Sizes entering the memory formulas.
struct MemorySizes {
    std::optional<double> encoder;          // N
    std::optional<double> flow_decoder;     // NF
    std::optional<double> tasks;            // M
    std::optional<double> samples;          // S, per task
    std::optional<double> image_size;       // IM
    std::optional<double> embedding_size;   // E
    std::optional<double> classes_per_task; // c_m
};

/// Auxiliary floats a method must persist; throws ContractError naming the
/// first missing size.
double memory_footprint(Method method, const MemorySizes& sizes);

struct MetricsReport {
    double accuracy = 0.0;
    double bwt = 0.0;
    bool bwt_defined = false;
    std::size_t memory_floats = 0;
    std::vector<double> per_task_final;
};

MetricsReport make_report(const ScoreMatrix& r, std::size_t memory_floats);

struct PcaResult {
    Tensor projection;                    // [n x components]
    std::vector<std::vector<double>> components;  // unit directions, length d
    std::vector<double> variances;        // per component, sample variance (n - 1)
    std::vector<double> mean;
    bool degenerate = false;
    int iterations = 0;
};

/// Centers the rows and projects onto the top principal directions found by
/// orthogonal (subspace) power iteration.
PcaResult pca_project(const Tensor& embeddings, std::size_t components = 2, double tolerance = 1e-9,
                      int max_iterations = 1000);

}  // namespace prer::metrics
