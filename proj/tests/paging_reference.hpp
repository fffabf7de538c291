#pragma once

// Reference page-replacement simulators used as test oracles for the EPC
// emulator. Pure bookkeeping over page ids; no memory, no crypto.

#include <cstddef>
#include <cstdint>
#include <list>
#include <optional>
#include <unordered_map>
#include <vector>

namespace encdp::testing {

struct SimResult {
  std::vector<std::uint64_t> evicted;  // page ids in eviction order
  std::uint64_t faults = 0;
};

inline SimResult simulate_lru(const std::vector<std::uint64_t>& trace, std::size_t frames) {
  SimResult r;
  std::list<std::uint64_t> order;  // front = most recent
  std::unordered_map<std::uint64_t, std::list<std::uint64_t>::iterator> where;
  for (std::uint64_t page : trace) {
    auto it = where.find(page);
    if (it != where.end()) {
      order.splice(order.begin(), order, it->second);
      continue;
    }
    ++r.faults;
    if (order.size() == frames) {
      r.evicted.push_back(order.back());
      where.erase(order.back());
      order.pop_back();
    }
    order.push_front(page);
    where[page] = order.begin();
  }
  return r;
}

// Second-chance clock: frames fill in index order, the hand starts at frame
// 0, a loaded or re-touched page gets its reference bit set.
inline SimResult simulate_clock(const std::vector<std::uint64_t>& trace, std::size_t frames) {
  SimResult r;
  std::vector<std::optional<std::uint64_t>> slot(frames);
  std::vector<bool> ref(frames, false);
  std::unordered_map<std::uint64_t, std::size_t> where;
  std::size_t filled = 0;
  std::size_t hand = 0;
  for (std::uint64_t page : trace) {
    auto it = where.find(page);
    if (it != where.end()) {
      ref[it->second] = true;
      continue;
    }
    ++r.faults;
    std::size_t f;
    if (filled < frames) {
      f = filled++;
    } else {
      while (ref[hand]) {
        ref[hand] = false;
        hand = (hand + 1) % frames;
      }
      f = hand;
      hand = (hand + 1) % frames;
      r.evicted.push_back(*slot[f]);
      where.erase(*slot[f]);
    }
    slot[f] = page;
    ref[f] = true;
    where[page] = f;
  }
  return r;
}

}  // namespace encdp::testing
