#pragma once

#include <cstdint>
#include <queue>
#include <tuple>
#include <vector>

#include "blesdn/core.hpp"

namespace blesdn {

/// Total order on events: time, then kind rank, then node, then insertion
/// sequence. Equal keys cannot occur because seq is unique per queue.
struct EventKey {
  SimTime time = 0;
  int rank = 0;
  std::uint16_t node = 0;
  std::uint64_t seq = 0;

  friend constexpr auto operator<=>(const EventKey&, const EventKey&) = default;
};

template <typename Payload>
class EventQueue {
 public:
  struct Entry {
    EventKey key;
    Payload payload;
  };

  void push(SimTime time, int rank, NodeId node, Payload payload) {
    heap_.push(Entry{EventKey{time, rank, node.value, next_seq_++}, std::move(payload)});
  }

  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }
  const Entry& top() const { return heap_.top(); }

  Entry pop() {
    Entry e = heap_.top();
    heap_.pop();
    return e;
  }

  /// Pending entries in pop order, without disturbing the queue.
  std::vector<Entry> pending() const {
    auto copy = heap_;
    std::vector<Entry> out;
    out.reserve(copy.size());
    while (!copy.empty()) {
      out.push_back(copy.top());
      copy.pop();
    }
    return out;
  }

 private:
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const { return b.key < a.key; }
  };
  std::priority_queue<Entry, std::vector<Entry>, Later> heap_;
  std::uint64_t next_seq_ = 0;
};

}  // namespace blesdn
