#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "infdit/tensor.hpp"

namespace infdit {

// Block lattice over an image: blocks are the caching/scheduling unit,
// patches the token unit.
struct BlockGridSpec {
  std::int64_t block_size = 0;  // B, pixels
  std::int64_t patch_size = 0;  // p, pixels
  std::int64_t h = 0;           // block rows
  std::int64_t w = 0;           // block cols

  std::int64_t patches_per_side() const { return block_size / patch_size; }
  std::int64_t tokens_per_block() const {
    const std::int64_t s = patches_per_side();
    return s * s;
  }
  std::int64_t blocks() const { return h * w; }
};

inline BlockGridSpec partition(std::int64_t height, std::int64_t width, std::int64_t block_size,
                               std::int64_t patch_size) {
  if (block_size < 1 || patch_size < 1)
    throw std::invalid_argument("partition: block/patch size must be >= 1");
  if (block_size % patch_size != 0)
    throw std::invalid_argument("partition: block size not divisible by patch size");
  if (height % block_size != 0 || width % block_size != 0)
    throw std::invalid_argument("partition: image dims not divisible by block size");
  BlockGridSpec spec;
  spec.block_size = block_size;
  spec.patch_size = patch_size;
  spec.h = height / block_size;
  spec.w = width / block_size;
  return spec;
}

struct BlockCoord {
  std::int64_t i = 0;  // row
  std::int64_t j = 0;  // col

  bool operator==(const BlockCoord&) const = default;
  bool operator<(const BlockCoord& o) const { return i != o.i ? i < o.i : j < o.j; }
};

// The three 1st-order neighbors a block depends on, clipped at the grid.
inline std::vector<BlockCoord> dependencies(BlockCoord c, std::int64_t h, std::int64_t w) {
  if (c.i < 0 || c.j < 0 || c.i >= h || c.j >= w)
    throw std::invalid_argument("dependencies: coordinate outside grid");
  std::vector<BlockCoord> out;
  if (c.i > 0) out.push_back({c.i - 1, c.j});
  if (c.j > 0) out.push_back({c.i, c.j - 1});
  if (c.i > 0 && c.j > 0) out.push_back({c.i - 1, c.j - 1});
  return out;
}

// block pixels [side, side, C] -> tokens [side/p * side/p, p*p*C],
// patches enumerated in raster order, each flattened HWC.
template <typename S>
Tensor<S> patchify(const Tensor<S>& block, std::int64_t p) {
  if (block.rank() != 3) throw std::invalid_argument("patchify: expected [H,W,C]");
  const std::int64_t side_h = block.shape[0];
  const std::int64_t side_w = block.shape[1];
  const std::int64_t ch = block.shape[2];
  if (side_h % p != 0 || side_w % p != 0)
    throw std::invalid_argument("patchify: side not divisible by patch size");
  const std::int64_t ph = side_h / p;
  const std::int64_t pw = side_w / p;
  Tensor<S> out({ph * pw, p * p * ch});
  for (std::int64_t ti = 0; ti < ph; ++ti)
    for (std::int64_t tj = 0; tj < pw; ++tj) {
      S* dst = out.data.data() + (ti * pw + tj) * p * p * ch;
      for (std::int64_t y = 0; y < p; ++y)
        for (std::int64_t x = 0; x < p; ++x)
          for (std::int64_t c = 0; c < ch; ++c)
            *dst++ = block[((ti * p + y) * side_w + (tj * p + x)) * ch + c];
    }
  return out;
}

template <typename S>
Tensor<S> unpatchify(const Tensor<S>& tokens, std::int64_t p, std::int64_t side_h,
                     std::int64_t side_w, std::int64_t ch) {
  const std::int64_t ph = side_h / p;
  const std::int64_t pw = side_w / p;
  if (tokens.rank() != 2 || tokens.shape[0] != ph * pw || tokens.shape[1] != p * p * ch)
    throw std::invalid_argument("unpatchify: token shape mismatch");
  Tensor<S> out({side_h, side_w, ch});
  for (std::int64_t ti = 0; ti < ph; ++ti)
    for (std::int64_t tj = 0; tj < pw; ++tj) {
      const S* src = tokens.data.data() + (ti * pw + tj) * p * p * ch;
      for (std::int64_t y = 0; y < p; ++y)
        for (std::int64_t x = 0; x < p; ++x)
          for (std::int64_t c = 0; c < ch; ++c)
            out[((ti * p + y) * side_w + (tj * p + x)) * ch + c] = *src++;
    }
  return out;
}

enum class Trajectory { kRowMajor, kColumnMajor };

// One n x n tile (clipped at the grid boundary) plus its cache bookkeeping.
struct PlanBatch {
  std::vector<BlockCoord> blocks;     // raster order within the tile
  std::vector<BlockCoord> deps;       // earlier-batch blocks whose cache is read
  std::vector<BlockCoord> stores;     // batch blocks some later batch depends on
  std::vector<BlockCoord> evictions;  // cache entries dead after this batch
};

struct GenerationPlan {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::int64_t n = 1;
  Trajectory trajectory = Trajectory::kRowMajor;
  std::vector<PlanBatch> batches;

  // Paper-style residency bound the plan must satisfy.
  std::int64_t cache_bound() const {
    return (trajectory == Trajectory::kRowMajor ? w : h) + n;
  }
};

// Tiles enumerated top-left to bottom-right (column-major when the grid is
// wider than tall, unless overridden). Eviction sets come from exact
// liveness analysis: an entry dies at its last reading batch.
inline GenerationPlan plan_generation(std::int64_t h, std::int64_t w, std::int64_t n,
                                      std::optional<Trajectory> trajectory = std::nullopt) {
  if (h < 1 || w < 1) throw std::invalid_argument("plan: grid dims must be >= 1");
  if (n < 1) throw std::invalid_argument("plan: tile side must be >= 1");

  GenerationPlan plan;
  plan.h = h;
  plan.w = w;
  plan.n = n;
  plan.trajectory = trajectory.value_or(w > h ? Trajectory::kColumnMajor : Trajectory::kRowMajor);

  const bool row_major = plan.trajectory == Trajectory::kRowMajor;
  const std::int64_t outer_extent = row_major ? h : w;
  const std::int64_t inner_extent = row_major ? w : h;
  for (std::int64_t to = 0; to < outer_extent; to += n)
    for (std::int64_t ti = 0; ti < inner_extent; ti += n) {
      PlanBatch batch;
      const std::int64_t i0 = row_major ? to : ti;
      const std::int64_t j0 = row_major ? ti : to;
      for (std::int64_t i = i0; i < std::min(i0 + n, h); ++i)
        for (std::int64_t j = j0; j < std::min(j0 + n, w); ++j)
          batch.blocks.push_back({i, j});
      std::set<BlockCoord> own(batch.blocks.begin(), batch.blocks.end());
      std::set<BlockCoord> deps;
      for (const auto& b : batch.blocks)
        for (const auto& d : dependencies(b, h, w))
          if (!own.count(d)) deps.insert(d);
      batch.deps.assign(deps.begin(), deps.end());
      plan.batches.push_back(std::move(batch));
    }

  // liveness: last batch index reading each block
  std::map<BlockCoord, std::size_t> last_use;
  for (std::size_t t = 0; t < plan.batches.size(); ++t)
    for (const auto& d : plan.batches[t].deps) last_use[d] = t;

  std::map<BlockCoord, std::size_t> produced_at;
  for (std::size_t t = 0; t < plan.batches.size(); ++t)
    for (const auto& b : plan.batches[t].blocks) produced_at[b] = t;

  for (std::size_t t = 0; t < plan.batches.size(); ++t) {
    auto& batch = plan.batches[t];
    for (const auto& b : batch.blocks)
      if (auto it = last_use.find(b); it != last_use.end() && it->second > t)
        batch.stores.push_back(b);
    for (const auto& [coord, last] : last_use)
      if (last == t && produced_at.at(coord) < t) batch.evictions.push_back(coord);
  }
  return plan;
}

// Replays a plan against pure residency accounting; throws on any
// contract violation. Returns the high-water cached-block count.
inline std::int64_t simulate_residency(const GenerationPlan& plan) {
  std::set<BlockCoord> live;
  std::int64_t high_water = 0;
  for (const auto& batch : plan.batches) {
    for (const auto& d : batch.deps)
      if (!live.count(d)) throw std::runtime_error("plan replay: dependency not cached");
    for (const auto& e : batch.evictions)
      if (!live.erase(e)) throw std::runtime_error("plan replay: evicting absent entry");
    for (const auto& s : batch.stores)
      if (!live.insert(s).second) throw std::runtime_error("plan replay: double store");
    high_water = std::max<std::int64_t>(high_water, static_cast<std::int64_t>(live.size()));
  }
  if (!live.empty()) throw std::runtime_error("plan replay: cache not drained at end");
  return high_water;
}

// n^2*M1 + (w+n)*M2 + C
inline double peak_memory_estimate(std::int64_t n, std::int64_t w, double m1_block_work,
                                   double m2_block_cache, double c_constant) {
  if (n < 0 || w < 0 || m1_block_work < 0 || m2_block_cache < 0 || c_constant < 0)
    throw std::invalid_argument("peak_memory_estimate: negative input");
  return static_cast<double>(n * n) * m1_block_work +
         static_cast<double>(w + n) * m2_block_cache + c_constant;
}

// Per-layer K/V-producing state of one block. k_base holds the key
// projection before any relative-position embedding (consumers add their
// slot's projected embedding on read); v is the finished value projection.
template <typename S>
struct KVCacheEntry {
  std::vector<Tensor<S>> k_base;  // per layer, [tokens, d]
  std::vector<Tensor<S>> v;       // per layer, [tokens, d]

  std::int64_t bytes() const {
    std::int64_t n = 0;
    for (const auto& t : k_base) n += t.numel();
    for (const auto& t : v) n += t.numel();
    return n * static_cast<std::int64_t>(sizeof(S));
  }
};

// Block-coordinate keyed KV cache with strict contracts: reads of absent
// or evicted entries are planner bugs and throw.
template <typename S>
class KVCacheStore {
 public:
  void put(BlockCoord c, KVCacheEntry<S> entry) {
    const std::int64_t entry_bytes = entry.bytes();
    if (!entries_.emplace(c, std::move(entry)).second)
      throw std::runtime_error("kv-cache: put over existing entry");
    bytes_ += entry_bytes;
    high_water_blocks_ = std::max<std::int64_t>(high_water_blocks_,
                                                static_cast<std::int64_t>(entries_.size()));
    high_water_bytes_ = std::max(high_water_bytes_, bytes_);
  }

  const KVCacheEntry<S>& get(BlockCoord c) const {
    auto it = entries_.find(c);
    if (it == entries_.end()) throw std::runtime_error("kv-cache: get on absent/evicted entry");
    return it->second;
  }

  bool contains(BlockCoord c) const { return entries_.count(c) != 0; }

  void evict(BlockCoord c) {
    auto it = entries_.find(c);
    if (it == entries_.end()) throw std::runtime_error("kv-cache: evicting absent entry");
    bytes_ -= it->second.bytes();
    entries_.erase(it);
  }

  std::int64_t size() const { return static_cast<std::int64_t>(entries_.size()); }
  std::int64_t bytes() const { return bytes_; }
  std::int64_t high_water_blocks() const { return high_water_blocks_; }
  std::int64_t high_water_bytes() const { return high_water_bytes_; }

 private:
  std::map<BlockCoord, KVCacheEntry<S>> entries_;
  std::int64_t bytes_ = 0;
  std::int64_t high_water_blocks_ = 0;
  std::int64_t high_water_bytes_ = 0;
};

// Line-oriented schedule report for the CLI `plan` command.
inline std::string plan_to_text(const GenerationPlan& plan) {
  std::ostringstream os;
  os << "grid " << plan.h << "x" << plan.w << " tile " << plan.n << " trajectory "
     << (plan.trajectory == Trajectory::kRowMajor ? "row_major" : "column_major")
     << " bound " << plan.cache_bound() << "\n";
  for (std::size_t t = 0; t < plan.batches.size(); ++t) {
    const auto& b = plan.batches[t];
    os << "batch " << t << ": blocks=";
    for (const auto& c : b.blocks) os << "(" << c.i << "," << c.j << ")";
    os << " deps=" << b.deps.size() << " evict=";
    for (const auto& c : b.evictions) os << "(" << c.i << "," << c.j << ")";
    os << "\n";
  }
  return os.str();
}

}  // namespace infdit
