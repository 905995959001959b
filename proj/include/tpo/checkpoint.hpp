// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary checkpoints: magic, format version, config hash, then
// named float64 tensors with shape headers. Optionally carries optimizer
// moments so training resumes exactly. Round-trips bitwise.

#ifndef TPO_CHECKPOINT_HPP
#define TPO_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tpo/nn.hpp"
#include "tpo/tensor.hpp"

namespace tpo {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckpointVersionError : CheckpointError {
    using CheckpointError::CheckpointError;
};

constexpr char kCkptMagic[8] = {'T', 'P', 'O', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kCkptVersion = 1;

struct OptimizerState {
    std::map<std::string, Mat> m, v;
    uint64_t step{0};
};

namespace detail_ckpt {

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw CheckpointError("checkpoint truncated");
    return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
    put<uint32_t>(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
    uint32_t n = get<uint32_t>(is);
    if (n > (1u << 20)) throw CheckpointError("checkpoint corrupt: absurd name length");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw CheckpointError("checkpoint truncated");
    return s;
}

inline void put_mat(std::ostream& os, const Mat& m) {
    put<uint64_t>(os, static_cast<uint64_t>(m.rows()));
    put<uint64_t>(os, static_cast<uint64_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(sizeof(double) * m.size()));
}

inline Mat get_mat(std::istream& is) {
    uint64_t r = get<uint64_t>(is), c = get<uint64_t>(is);
    if (r > (1ull << 24) || c > (1ull << 24)) throw CheckpointError("checkpoint corrupt: absurd shape");
    Mat m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!is) throw CheckpointError("checkpoint truncated");
    return m;
}

}  // namespace detail_ckpt

inline void save_checkpoint(const std::string& path, const ParamStore& params,
                            uint64_t config_hash, const OptimizerState* opt = nullptr) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open for writing: " + path);
    os.write(kCkptMagic, sizeof(kCkptMagic));
    detail_ckpt::put<uint32_t>(os, kCkptVersion);
    detail_ckpt::put<uint64_t>(os, config_hash);
    detail_ckpt::put<uint64_t>(os, params.order.size());
    for (const auto& name : params.order) {
        detail_ckpt::put_string(os, name);
        detail_ckpt::put_mat(os, params.params.at(name)->value);
    }
    detail_ckpt::put<uint8_t>(os, opt ? 1 : 0);
    if (opt) {
        detail_ckpt::put<uint64_t>(os, opt->step);
        detail_ckpt::put<uint64_t>(os, opt->m.size());
        for (const auto& [name, m] : opt->m) {
            detail_ckpt::put_string(os, name);
            detail_ckpt::put_mat(os, m);
            detail_ckpt::put_mat(os, opt->v.at(name));
        }
    }
    if (!os) throw CheckpointError("write failed: " + path);
}

// Loads values into an already-constructed parameter store; names and
// shapes must match the architecture exactly.
inline uint64_t load_checkpoint(const std::string& path, ParamStore& params,
                                OptimizerState* opt = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open for reading: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw CheckpointError("checkpoint corrupt: bad magic");
    uint32_t version = detail_ckpt::get<uint32_t>(is);
    if (version != kCkptVersion)
        throw CheckpointVersionError("checkpoint format version " + std::to_string(version) +
                                     " is not supported");
    uint64_t config_hash = detail_ckpt::get<uint64_t>(is);
    uint64_t n = detail_ckpt::get<uint64_t>(is);
    if (n != params.order.size())
        throw CheckpointError("checkpoint has " + std::to_string(n) + " tensors, model has " +
                              std::to_string(params.order.size()));
    for (uint64_t i = 0; i < n; ++i) {
        std::string name = detail_ckpt::get_string(is);
        Mat m = detail_ckpt::get_mat(is);
        auto it = params.params.find(name);
        if (it == params.params.end()) throw CheckpointError("unknown tensor in checkpoint: " + name);
        if (m.rows() != it->second->rows() || m.cols() != it->second->cols())
            throw CheckpointError("shape mismatch for " + name);
        it->second->value = std::move(m);
    }
    uint8_t has_opt = detail_ckpt::get<uint8_t>(is);
    if (has_opt && opt) {
        opt->step = detail_ckpt::get<uint64_t>(is);
        uint64_t k = detail_ckpt::get<uint64_t>(is);
        opt->m.clear();
        opt->v.clear();
        for (uint64_t i = 0; i < k; ++i) {
            std::string name = detail_ckpt::get_string(is);
            opt->m[name] = detail_ckpt::get_mat(is);
            opt->v[name] = detail_ckpt::get_mat(is);
        }
    }
    return config_hash;
}

}  // namespace tpo

#endif  // TPO_CHECKPOINT_HPP
