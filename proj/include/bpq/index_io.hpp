#pragma once

// On-disk formats, all little-endian.
//
// Model file ("BPQC"):
//   magic, u32 version, u32 block count, then per block a u32 kind and its
//   payload:
//     1 codebook  u32 size, u32 dim, f32[size*dim]
//     2 rotation  u32 dim, f32[dim*dim] (row-major)
//     3 codec     u32 parts, u32 k, u32 sub_dim, f32[parts*k*sub_dim]
//     4 bank      u32 t, u32 half_parts, u32 k, u32 sub_dim, u32 rotated,
//                 [f32[h*h] x2 when rotated, h = half_parts*sub_dim],
//                 f32[k*sub_dim] per book in (half, cell, part) order
//
// Index file ("BPQI"):
//   magic, u32 version, u32 D, u32 T, u32 M, u32 K, u32 flags, u64 N,
//   [f32[D*D] coarse rotation], f32[T*D/2] x2 coarse books,
//   global codec payload (flags & hbpq == 0) or bank rotations and books,
//   u64[T*T+1] cell offsets, N packed entries of (u32 id, u8[M] code).

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "bpq/hbpq.hpp"
#include "bpq/multi_index.hpp"
#include "bpq/serialize.hpp"

namespace bpq {

inline constexpr std::uint32_t kModelVersion = 1;
inline constexpr std::uint32_t kIndexVersion = 1;

enum IndexFlags : std::uint32_t {
  kFlagOptimized = 1u << 0,
  kFlagHbpq = 1u << 1,
  kFlagHalfRotations = 1u << 2,
};

namespace detail {

inline void put_floats(ByteWriter& w, const std::vector<float>& v) { w.put_array(std::span<const float>(v)); }

inline std::uint32_t checked_u32(ByteReader& r, const char* what, std::uint32_t max = 1u << 30) {
  const auto v = r.get<std::uint32_t>();
  if (v == 0 || v > max) throw Error(ErrorKind::format, std::string("implausible ") + what + " " + std::to_string(v));
  return v;
}

inline void write_rotation_payload(ByteWriter& w, const Rotation& rot) { put_floats(w, rot.matrix); }

inline Rotation read_rotation_payload(ByteReader& r, std::size_t dim) {
  return Rotation{dim, r.get_vector<float>(dim * dim)};
}

inline Codebook read_codebook_payload(ByteReader& r, std::size_t size, std::size_t dim) {
  return Codebook(dim, r.get_vector<float>(size * dim));
}

inline void check_version(std::uint32_t version, std::uint32_t supported, const char* what) {
  if (version != supported) {
    throw Error(ErrorKind::version, std::string("unsupported ") + what + " version " + std::to_string(version) +
                                        " (this build reads " + std::to_string(supported) + ")");
  }
}

}  // namespace detail

using ModelBlock = std::variant<Codebook, Rotation, PqCodec, LocalCodebookBank>;

inline std::vector<std::uint8_t> serialize_model(std::span<const ModelBlock> blocks) {
  ByteWriter w;
  w.put_magic("BPQC");
  w.put<std::uint32_t>(kModelVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(blocks.size()));
  for (const auto& block : blocks) {
    std::visit(
        [&](const auto& b) {
          using T = std::decay_t<decltype(b)>;
          if constexpr (std::is_same_v<T, Codebook>) {
            w.put<std::uint32_t>(1);
            w.put<std::uint32_t>(static_cast<std::uint32_t>(b.size()));
            w.put<std::uint32_t>(static_cast<std::uint32_t>(b.dim()));
            detail::put_floats(w, b.data());
          } else if constexpr (std::is_same_v<T, Rotation>) {
            w.put<std::uint32_t>(2);
            w.put<std::uint32_t>(static_cast<std::uint32_t>(b.dim));
            detail::write_rotation_payload(w, b);
          } else if constexpr (std::is_same_v<T, PqCodec>) {
            w.put<std::uint32_t>(3);
            w.put<std::uint32_t>(static_cast<std::uint32_t>(b.num_parts()));
            w.put<std::uint32_t>(static_cast<std::uint32_t>(b.size()));
            w.put<std::uint32_t>(static_cast<std::uint32_t>(b.sub_dim()));
            for (const auto& book : b.books()) detail::put_floats(w, book.data());
          } else {
            w.put<std::uint32_t>(4);
            w.put<std::uint32_t>(static_cast<std::uint32_t>(b.t()));
            w.put<std::uint32_t>(static_cast<std::uint32_t>(b.half_parts()));
            w.put<std::uint32_t>(static_cast<std::uint32_t>(b.k()));
            w.put<std::uint32_t>(static_cast<std::uint32_t>(b.sub_dim()));
            w.put<std::uint32_t>(b.rotated() ? 1u : 0u);
            if (b.rotated()) {
              detail::write_rotation_payload(w, *b.rotation(0));
              detail::write_rotation_payload(w, *b.rotation(1));
            }
            for (const auto& book : b.books()) detail::put_floats(w, book.data());
          }
        },
        block);
  }
  return w.take();
}

inline std::vector<ModelBlock> deserialize_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("BPQC");
  detail::check_version(r.get<std::uint32_t>(), kModelVersion, "model file");
  const auto count = r.get<std::uint32_t>();
  std::vector<ModelBlock> out;
  for (std::uint32_t b = 0; b < count; ++b) {
    const auto kind = r.get<std::uint32_t>();
    switch (kind) {
      case 1: {
        const auto size = detail::checked_u32(r, "codebook size");
        const auto dim = detail::checked_u32(r, "codebook dim");
        out.emplace_back(detail::read_codebook_payload(r, size, dim));
        break;
      }
      case 2: {
        const auto dim = detail::checked_u32(r, "rotation dim", 1u << 16);
        out.emplace_back(detail::read_rotation_payload(r, dim));
        break;
      }
      case 3: {
        const auto parts = detail::checked_u32(r, "part count", 1u << 16);
        const auto k = detail::checked_u32(r, "codec size");
        const auto sub = detail::checked_u32(r, "sub dim");
        std::vector<Codebook> books;
        for (std::uint32_t p = 0; p < parts; ++p) books.push_back(detail::read_codebook_payload(r, k, sub));
        out.emplace_back(PqCodec(std::move(books)));
        break;
      }
      case 4: {
        const auto t = detail::checked_u32(r, "bank t");
        const auto hp = detail::checked_u32(r, "bank half parts", 1u << 16);
        const auto k = detail::checked_u32(r, "bank k");
        const auto sub = detail::checked_u32(r, "bank sub dim");
        const auto rotated = r.get<std::uint32_t>();
        std::optional<Rotation> r1, r2;
        if (rotated) {
          r1 = detail::read_rotation_payload(r, std::size_t(hp) * sub);
          r2 = detail::read_rotation_payload(r, std::size_t(hp) * sub);
        }
        std::vector<Codebook> books;
        for (std::size_t i = 0; i < 2ull * t * hp; ++i) books.push_back(detail::read_codebook_payload(r, k, sub));
        out.emplace_back(LocalCodebookBank(t, hp, std::move(books), std::move(r1), std::move(r2)));
        break;
      }
      default:
        throw Error(ErrorKind::format, "unknown model block kind " + std::to_string(kind));
    }
  }
  if (r.remaining() != 0) throw Error(ErrorKind::format, "trailing bytes after model blocks");
  return out;
}

inline void save_model(std::span<const ModelBlock> blocks, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_model(blocks));
}

inline std::vector<ModelBlock> load_model(const std::filesystem::path& path) {
  return deserialize_model(read_file_bytes(path));
}

inline void save_coarse(const CoarsePair& coarse, const std::filesystem::path& path) {
  std::vector<ModelBlock> blocks{coarse.book1, coarse.book2};
  if (coarse.rotation) blocks.emplace_back(*coarse.rotation);
  save_model(blocks, path);
}

inline CoarsePair load_coarse(const std::filesystem::path& path) {
  auto blocks = load_model(path);
  if (blocks.size() < 2 || blocks.size() > 3 || !std::holds_alternative<Codebook>(blocks[0]) ||
      !std::holds_alternative<Codebook>(blocks[1]) ||
      (blocks.size() == 3 && !std::holds_alternative<Rotation>(blocks[2]))) {
    throw Error(ErrorKind::format, path.string() + " does not hold a coarse codebook pair");
  }
  CoarsePair pair{std::get<Codebook>(std::move(blocks[0])), std::get<Codebook>(std::move(blocks[1])), std::nullopt};
  if (blocks.size() == 3) pair.rotation = std::get<Rotation>(std::move(blocks[2]));
  pair.validate();
  return pair;
}

template <typename T>
T load_single_block(const std::filesystem::path& path, const char* what) {
  auto blocks = load_model(path);
  if (blocks.size() != 1 || !std::holds_alternative<T>(blocks[0])) {
    throw Error(ErrorKind::format, path.string() + " does not hold a " + what);
  }
  return std::get<T>(std::move(blocks[0]));
}

inline void save_codec(const PqCodec& codec, const std::filesystem::path& path) {
  const ModelBlock b = codec;
  save_model(std::span<const ModelBlock>(&b, 1), path);
}
inline PqCodec load_codec(const std::filesystem::path& path) { return load_single_block<PqCodec>(path, "PQ codec"); }

inline void save_bank(const LocalCodebookBank& bank, const std::filesystem::path& path) {
  const ModelBlock b = bank;
  save_model(std::span<const ModelBlock>(&b, 1), path);
}
inline LocalCodebookBank load_bank(const std::filesystem::path& path) {
  return load_single_block<LocalCodebookBank>(path, "local codebook bank");
}

struct IndexHeader {
  std::uint32_t version = 0;
  IndexParams params;
  std::uint32_t flags = 0;
  std::uint64_t count = 0;

  bool optimized() const { return flags & kFlagOptimized; }
  bool hbpq() const { return flags & kFlagHbpq; }
  bool half_rotations() const { return flags & kFlagHalfRotations; }
};

using AnyIndex = std::variant<MultiIndex, HbpqIndex>;

namespace detail {

inline void write_header(ByteWriter& w, const IndexParams& p, std::uint32_t flags, std::uint64_t n) {
  w.put_magic("BPQI");
  w.put<std::uint32_t>(kIndexVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.t));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.m));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.k));
  w.put<std::uint32_t>(flags);
  w.put<std::uint64_t>(n);
}

inline IndexHeader read_header(ByteReader& r) {
  r.expect_magic("BPQI");
  IndexHeader h;
  h.version = r.get<std::uint32_t>();
  check_version(h.version, kIndexVersion, "index file");
  h.params.dim = r.get<std::uint32_t>();
  h.params.t = r.get<std::uint32_t>();
  h.params.m = r.get<std::uint32_t>();
  h.params.k = r.get<std::uint32_t>();
  h.flags = r.get<std::uint32_t>();
  h.count = r.get<std::uint64_t>();
  validate_params(h.params);
  return h;
}

inline void write_coarse(ByteWriter& w, const CoarsePair& coarse) {
  if (coarse.rotation) write_rotation_payload(w, *coarse.rotation);
  put_floats(w, coarse.book1.data());
  put_floats(w, coarse.book2.data());
}

inline void write_store(ByteWriter& w, const CellStore& store, std::size_t m) {
  w.put_array(std::span<const std::uint64_t>(store.cells.offsets));
  for (std::size_t p = 0; p < store.size(); ++p) {
    w.put<std::uint32_t>(store.ids[p]);
    w.put_array(std::span<const std::uint8_t>(store.codes.data() + p * m, m));
  }
}

inline CellStore read_store(ByteReader& r, const IndexHeader& h) {
  CellStore store;
  store.cells.t = h.params.t;
  store.cells.offsets = r.get_vector<std::uint64_t>(h.params.t * h.params.t + 1);
  if (store.cells.total() != h.count) throw Error(ErrorKind::format, "cell offsets disagree with entry count");
  const std::size_t m = h.params.m;
  if (r.remaining() < h.count * (4 + m)) {
    throw Error(ErrorKind::format, "truncated input at byte offset " + std::to_string(r.offset()));
  }
  store.ids.resize(h.count);
  store.codes.resize(h.count * m);
  for (std::size_t p = 0; p < h.count; ++p) {
    store.ids[p] = r.get<std::uint32_t>();
    r.get_array(std::span<std::uint8_t>(store.codes.data() + p * m, m));
  }
  return store;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_index(const MultiIndex& index) {
  ByteWriter w;
  const auto& p = index.params();
  detail::write_header(w, p, index.coarse().rotation ? kFlagOptimized : 0u, index.size());
  detail::write_coarse(w, index.coarse());
  for (const auto& book : index.fine().books()) detail::put_floats(w, book.data());
  detail::write_store(w, index.store(), p.m);
  return w.take();
}

inline std::vector<std::uint8_t> serialize_index(const HbpqIndex& index) {
  ByteWriter w;
  const auto& p = index.params();
  std::uint32_t flags = kFlagHbpq;
  if (index.coarse().rotation) flags |= kFlagOptimized;
  if (index.bank().rotated()) flags |= kFlagHalfRotations;
  detail::write_header(w, p, flags, index.size());
  detail::write_coarse(w, index.coarse());
  if (index.bank().rotated()) {
    detail::write_rotation_payload(w, *index.bank().rotation(0));
    detail::write_rotation_payload(w, *index.bank().rotation(1));
  }
  for (const auto& book : index.bank().books()) detail::put_floats(w, book.data());
  detail::write_store(w, index.store(), p.m);
  return w.take();
}

inline IndexHeader parse_index_header(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  return detail::read_header(r);
}

inline AnyIndex deserialize_any_index(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto h = detail::read_header(r);
  const std::size_t d = h.params.dim;
  const std::size_t hd = d / 2;
  const std::size_t sub = d / h.params.m;
  CoarsePair coarse;
  if (h.optimized()) coarse.rotation = detail::read_rotation_payload(r, d);
  coarse.book1 = detail::read_codebook_payload(r, h.params.t, hd);
  coarse.book2 = detail::read_codebook_payload(r, h.params.t, hd);
  if (!h.hbpq()) {
    std::vector<Codebook> books;
    for (std::size_t part = 0; part < h.params.m; ++part) books.push_back(detail::read_codebook_payload(r, h.params.k, sub));
    PqCodec fine(std::move(books));
    auto store = detail::read_store(r, h);
    if (r.remaining() != 0) throw Error(ErrorKind::format, "trailing bytes after index entries");
    return MultiIndex(h.params, std::move(coarse), std::move(fine), std::move(store));
  }
  std::optional<Rotation> r1, r2;
  if (h.half_rotations()) {
    r1 = detail::read_rotation_payload(r, hd);
    r2 = detail::read_rotation_payload(r, hd);
  }
  const std::size_t hp = h.params.m / 2;
  std::vector<Codebook> books;
  for (std::size_t b = 0; b < 2 * h.params.t * hp; ++b) books.push_back(detail::read_codebook_payload(r, h.params.k, sub));
  LocalCodebookBank bank(h.params.t, hp, std::move(books), std::move(r1), std::move(r2));
  auto store = detail::read_store(r, h);
  if (r.remaining() != 0) throw Error(ErrorKind::format, "trailing bytes after index entries");
  return HbpqIndex(h.params, std::move(coarse), std::move(bank), std::move(store));
}

inline void save_index(const MultiIndex& index, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_index(index));
}
inline void save_index(const HbpqIndex& index, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_index(index));
}

inline IndexHeader read_index_header(const std::filesystem::path& path) {
  return parse_index_header(read_file_bytes(path));
}

inline AnyIndex load_any_index(const std::filesystem::path& path) {
  return deserialize_any_index(read_file_bytes(path));
}

inline MultiIndex load_index(const std::filesystem::path& path) {
  auto any = load_any_index(path);
  if (!std::holds_alternative<MultiIndex>(any)) {
    throw Error(ErrorKind::config, path.string() + " holds an hbpq index, not a global-codebook index");
  }
  return std::get<MultiIndex>(std::move(any));
}

inline HbpqIndex load_hbpq_index(const std::filesystem::path& path) {
  auto any = load_any_index(path);
  if (!std::holds_alternative<HbpqIndex>(any)) {
    throw Error(ErrorKind::config, path.string() + " holds a global-codebook index, not an hbpq index");
  }
  return std::get<HbpqIndex>(std::move(any));
}

}  // namespace bpq
