#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ctxprof/events.hpp"

namespace ctxprof {

// Per-thread bookkeeping needed to check ordering and nesting rules.
class EventValidator {
 public:
  // Throws TraceError on the first violated rule; state is left unchanged
  // when an event is rejected.
  void validate(const TraceEvent& event, std::uint64_t line = 0);

  std::size_t open_operators(std::uint64_t thread_id) const;

 private:
  struct ThreadState {
    std::uint64_t last_timestamp = 0;
    bool seen = false;
    std::vector<std::uint64_t> open_ops;  // op addresses, outermost first
  };
  std::unordered_map<std::uint64_t, ThreadState> threads_;
  std::unordered_set<std::uint64_t> correlation_ids_;
};

// Decodes one trace line. Header records yield std::nullopt. seq_no is left
// for the caller to assign.
std::optional<TraceEvent> parse_record(std::string_view line, std::uint64_t line_no = 0);

std::string serialize_event(const TraceEvent& event);
std::string trace_header_line();

// Streams events from a newline-delimited trace, assigning seq_no by
// position and validating each record.
class TraceReader {
 public:
  explicit TraceReader(std::istream& in, bool validate = true);

  // Returns false at end of input.
  bool next(TraceEvent& event);

  std::uint64_t events_read() const noexcept { return next_seq_; }

 private:
  std::istream& in_;
  bool validate_;
  std::string line_;
  std::uint64_t line_no_ = 0;
  std::uint64_t next_seq_ = 0;
  EventValidator validator_;
};

std::vector<TraceEvent> parse_trace(std::istream& in, bool validate = true);
std::vector<TraceEvent> parse_trace_text(std::string_view text, bool validate = true);

// Writes the header record followed by one line per event.
void write_trace(std::ostream& out, const std::vector<TraceEvent>& events);
std::string serialize_trace(const std::vector<TraceEvent>& events);

}  // namespace ctxprof
