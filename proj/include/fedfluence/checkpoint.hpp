#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "fedfluence/errors.hpp"
#include "fedfluence/fedavg.hpp"

namespace fedfluence {

// Binary trajectory checkpoint, little-endian, magic "FEDFLU1".

namespace detail {

inline void write_bytes(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void write_i32(std::ostream& out, std::int32_t v) { write_bytes(out, &v, 4); }
inline void write_u8(std::ostream& out, std::uint8_t v) { write_bytes(out, &v, 1); }
inline void write_f64(std::ostream& out, double v) { write_bytes(out, &v, 8); }

inline void write_vec(std::ostream& out, const std::vector<double>& v) {
    write_i32(out, static_cast<std::int32_t>(v.size()));
    write_bytes(out, v.data(), v.size() * 8);
}

inline void read_bytes(std::istream& in, void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw FormatError("checkpoint: truncated file");
}

inline std::int32_t read_i32(std::istream& in) {
    std::int32_t v;
    read_bytes(in, &v, 4);
    return v;
}

inline std::uint8_t read_u8(std::istream& in) {
    std::uint8_t v;
    read_bytes(in, &v, 1);
    return v;
}

inline double read_f64(std::istream& in) {
    double v;
    read_bytes(in, &v, 8);
    return v;
}

inline std::vector<double> read_vec(std::istream& in) {
    const std::int32_t n = read_i32(in);
    if (n < 0) throw FormatError("checkpoint: negative vector length");
    std::vector<double> v(static_cast<std::size_t>(n));
    read_bytes(in, v.data(), v.size() * 8);
    return v;
}

inline void write_params(std::ostream& out, const LayeredParams& p) {
    write_i32(out, static_cast<std::int32_t>(p.layers.size()));
    for (std::size_t j = 0; j < p.layers.size(); ++j) {
        const LayerShape shape = j < p.layout.size() ? p.layout[j]
                                 : LayerShape{static_cast<int>(p.layers[j].size()), 1};
        write_i32(out, shape.rows);
        write_i32(out, shape.cols);
        write_vec(out, p.layers[j]);
    }
}

inline LayeredParams read_params(std::istream& in) {
    const std::int32_t blocks = read_i32(in);
    if (blocks < 0) throw FormatError("checkpoint: negative block count");
    LayeredParams p;
    for (std::int32_t j = 0; j < blocks; ++j) {
        LayerShape shape;
        shape.rows = read_i32(in);
        shape.cols = read_i32(in);
        p.layout.push_back(shape);
        p.layers.push_back(read_vec(in));
        if (static_cast<int>(p.layers.back().size()) != shape.size())
            throw FormatError("checkpoint: block length does not match shape");
    }
    return p;
}

} // namespace detail

inline constexpr char kCheckpointMagic[8] = "FEDFLU1"; // 7 chars + NUL

inline void save_trajectory(const FederationTrajectory& trajectory, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("save_trajectory: cannot open " + path);
    detail::write_bytes(out, kCheckpointMagic, 7);
    detail::write_u8(out, 1); // version

    detail::write_i32(out, trajectory.first_round);
    detail::write_i32(out, static_cast<std::int32_t>(trajectory.models.size()));
    for (const auto& w : trajectory.models) detail::write_params(out, w);

    detail::write_i32(out, static_cast<std::int32_t>(trajectory.records.size()));
    for (const auto& rec : trajectory.records) {
        detail::write_i32(out, rec.round);
        detail::write_i32(out, static_cast<std::int32_t>(rec.participants.size()));
        for (const auto& p : rec.participants) {
            detail::write_i32(out, p.client_id);
            detail::write_i32(out, p.n_k);
            detail::write_params(out, p.local_model);
            detail::write_u8(out, p.sampled_grads.empty() ? 0 : 1);
            if (!p.sampled_grads.empty()) {
                detail::write_i32(out, static_cast<std::int32_t>(p.sampled_grads.size()));
                for (const auto& per_block : p.sampled_grads) {
                    detail::write_i32(out, static_cast<std::int32_t>(per_block.size()));
                    for (const auto& flat : per_block) detail::write_vec(out, flat);
                }
            }
            detail::write_u8(out, p.exact_hessians.empty() ? 0 : 1);
            if (!p.exact_hessians.empty()) {
                detail::write_i32(out, static_cast<std::int32_t>(p.exact_hessians.size()));
                for (const auto& per_block : p.exact_hessians) {
                    detail::write_i32(out, static_cast<std::int32_t>(per_block.size()));
                    for (const auto& h : per_block) {
                        detail::write_i32(out, h.size());
                        detail::write_bytes(out, h.flat().data(), h.flat().size() * 8);
                    }
                }
            }
        }
    }
    detail::write_i32(out, static_cast<std::int32_t>(trajectory.degenerate_rounds.size()));
    for (int t : trajectory.degenerate_rounds) detail::write_i32(out, t);
    if (!out) throw FormatError("save_trajectory: write failed on " + path);
}

inline FederationTrajectory load_trajectory(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("load_trajectory: cannot open " + path);
    char magic[7];
    detail::read_bytes(in, magic, 7);
    if (std::memcmp(magic, kCheckpointMagic, 7) != 0)
        throw FormatError("load_trajectory: bad magic header");
    if (detail::read_u8(in) != 1)
        throw FormatError("load_trajectory: unsupported version");

    FederationTrajectory trajectory;
    trajectory.first_round = detail::read_i32(in);
    const std::int32_t model_count = detail::read_i32(in);
    for (std::int32_t i = 0; i < model_count; ++i)
        trajectory.models.push_back(detail::read_params(in));

    const std::int32_t record_count = detail::read_i32(in);
    for (std::int32_t r = 0; r < record_count; ++r) {
        RoundRecord rec;
        rec.round = detail::read_i32(in);
        const std::int32_t participant_count = detail::read_i32(in);
        for (std::int32_t pi = 0; pi < participant_count; ++pi) {
            ParticipantRecord p;
            p.client_id = detail::read_i32(in);
            p.n_k = detail::read_i32(in);
            p.local_model = detail::read_params(in);
            if (detail::read_u8(in)) {
                const std::int32_t m = detail::read_i32(in);
                p.sampled_grads.resize(static_cast<std::size_t>(m));
                for (auto& per_block : p.sampled_grads) {
                    const std::int32_t blocks = detail::read_i32(in);
                    per_block.resize(static_cast<std::size_t>(blocks));
                    for (auto& flat : per_block) flat = detail::read_vec(in);
                }
            }
            if (detail::read_u8(in)) {
                const std::int32_t m = detail::read_i32(in);
                p.exact_hessians.resize(static_cast<std::size_t>(m));
                for (auto& per_block : p.exact_hessians) {
                    const std::int32_t blocks = detail::read_i32(in);
                    per_block.reserve(static_cast<std::size_t>(blocks));
                    for (std::int32_t b = 0; b < blocks; ++b) {
                        const std::int32_t n = detail::read_i32(in);
                        DenseMatrix h(n);
                        detail::read_bytes(in, h.flat().data(), h.flat().size() * 8);
                        per_block.push_back(std::move(h));
                    }
                }
            }
            rec.participants.push_back(std::move(p));
        }
        trajectory.records.push_back(std::move(rec));
    }
    const std::int32_t degen = detail::read_i32(in);
    for (std::int32_t i = 0; i < degen; ++i)
        trajectory.degenerate_rounds.push_back(detail::read_i32(in));
    return trajectory;
}

} // namespace fedfluence
