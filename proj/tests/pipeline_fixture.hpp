#pragma once

// A throwaway workspace: synthetic corpus and perturbations on disk plus a
// RunConfig pointing at them and at the shipped data files.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "aspectcheck/pipeline.hpp"
#include "oracle_backend.hpp"
#include "test_support.hpp"

namespace fixture {

using namespace aspectcheck;

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

struct Workspace {
    test_support::TempDir dir;
    std::vector<Sample> samples;
    std::vector<PerturbedText> perturbed;
    RunConfig config;

    explicit Workspace(std::size_t n_samples) {
        samples = oracle::synthetic_corpus(n_samples);
        perturbed = oracle::synthetic_perturbations(samples);
        save_samples(dir.path() / "corpus.jsonl", samples);
        std::ofstream(dir.path() / "perturbed.jsonl", std::ios::binary) << perturbed_to_jsonl(perturbed);

        config.corpus = dir.path() / "corpus.jsonl";
        config.criteria = test_support::data_path("criteria.json");
        config.expectations = test_support::data_path("expectations.json");
        config.demos = test_support::data_path("demos.json");
        config.cache_dir = dir.path() / "cache";
        config.out_dir = dir.path() / "runs";
        config.perturbed = dir.path() / "perturbed.jsonl";
        config.parallelism = 8;
    }

    std::shared_ptr<const oracle::MatrixBackendState> state() const {
        auto catalog = CriteriaCatalog::load(config.criteria);
        return std::make_shared<const oracle::MatrixBackendState>(catalog.entries(), samples, perturbed,
                                                                  ExpectationMatrix::load(config.expectations));
    }
};

}  // namespace fixture
