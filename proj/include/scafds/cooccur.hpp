#pragma once

#include <map>
#include <string>
#include <vector>

namespace scafds::cooccur {

enum class EventSource { SAR_registry, internal_SAR, foreign_FIU, law_enforcement };

std::string to_string(EventSource s);
EventSource event_source_from_string(const std::string& s);

struct FraudEvent {
  std::string institution;
  int time = 0;  // integer day index, >= 0
  EventSource source = EventSource::SAR_registry;
};

// Append-only confirmed-fraud event log with a per-institution time index.
class FraudEventLog {
 public:
  FraudEventLog() = default;
  explicit FraudEventLog(std::vector<FraudEvent> events);

  void append(const FraudEvent& event);
  const std::vector<FraudEvent>& events() const { return events_; }

  // Sorted event days for one institution (empty when unknown).
  const std::vector<int>& times_of(const std::string& institution) const;

 private:
  std::vector<FraudEvent> events_;           // sorted nondecreasing by time
  std::map<std::string, std::vector<int>> by_institution_;
  static const std::vector<int> kNoTimes;
};

struct CooccurrenceWindows {
  std::vector<int> windows{90, 180, 365};  // day spans, strictly increasing
  void validate() const;
};

struct Disposition {
  std::string u;
  std::string v;
  int time = 0;
  double strength = 1.0;  // consumed by the feedback update, not by the log
};

// Fraction of u-events (visible at day t) followed by a v-event within
// [t', t'+window], both ends inclusive. 0 when u has no visible events.
double cooccurrence_frequency(const FraudEventLog& log, const std::string& u,
                              const std::string& v, int t, int window);

// [f(u,v,t;W)] for each configured window, in order.
std::vector<double> edge_feature_vector(const FraudEventLog& log, const std::string& u,
                                        const std::string& v, int t,
                                        const CooccurrenceWindows& windows);

// Confirmed analyst disposition: appends one paired event for u and v.
void apply_disposition(FraudEventLog& log, const Disposition& d);

FraudEventLog read_events_csv(const std::string& path);
void write_events_csv(const std::string& path, const FraudEventLog& log);

}  // namespace scafds::cooccur
