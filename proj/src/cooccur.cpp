#include "scafds/cooccur.hpp"

#include <algorithm>

#include "scafds/csv.hpp"
#include "scafds/errors.hpp"

namespace scafds::cooccur {

const std::vector<int> FraudEventLog::kNoTimes{};

std::string to_string(EventSource s) {
  switch (s) {
    case EventSource::SAR_registry: return "SAR_registry";
    case EventSource::internal_SAR: return "internal_SAR";
    case EventSource::foreign_FIU: return "foreign_FIU";
    case EventSource::law_enforcement: return "law_enforcement";
  }
  throw DomainError("unknown event source");
}

EventSource event_source_from_string(const std::string& s) {
  if (s == "SAR_registry") return EventSource::SAR_registry;
  if (s == "internal_SAR") return EventSource::internal_SAR;
  if (s == "foreign_FIU") return EventSource::foreign_FIU;
  if (s == "law_enforcement") return EventSource::law_enforcement;
  throw DomainError("unknown event source '" + s + "'");
}

FraudEventLog::FraudEventLog(std::vector<FraudEvent> events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const FraudEvent& a, const FraudEvent& b) { return a.time < b.time; });
  for (const auto& e : events) append(e);
}

void FraudEventLog::append(const FraudEvent& event) {
  if (event.time < 0) throw DomainError("event time must be nonnegative");
  // Out-of-order appends are tolerated; both indices stay sorted.
  auto pos = std::upper_bound(
      events_.begin(), events_.end(), event.time,
      [](int t, const FraudEvent& e) { return t < e.time; });
  events_.insert(pos, event);
  auto& times = by_institution_[event.institution];
  times.insert(std::upper_bound(times.begin(), times.end(), event.time), event.time);
}

const std::vector<int>& FraudEventLog::times_of(const std::string& institution) const {
  auto it = by_institution_.find(institution);
  return it == by_institution_.end() ? kNoTimes : it->second;
}

void CooccurrenceWindows::validate() const {
  if (windows.empty()) throw DomainError("no co-occurrence windows configured");
  int prev = 0;
  for (int w : windows) {
    if (w <= prev) throw DomainError("windows must be positive and strictly increasing");
    prev = w;
  }
}

double cooccurrence_frequency(const FraudEventLog& log, const std::string& u,
                              const std::string& v, int t, int window) {
  if (u == v) throw DomainError("self co-occurrence is undefined");
  if (window <= 0) throw DomainError("window must be positive");

  const auto& u_times = log.times_of(u);
  auto u_end = std::upper_bound(u_times.begin(), u_times.end(), t);
  const auto denom = static_cast<std::size_t>(u_end - u_times.begin());
  if (denom == 0) return 0.0;  // no evidence convention

  const auto& v_times = log.times_of(v);
  auto v_end = std::upper_bound(v_times.begin(), v_times.end(), t);

  std::size_t matched = 0;
  for (auto it = u_times.begin(); it != u_end; ++it) {
    auto hit = std::lower_bound(v_times.begin(), v_end, *it);
    if (hit != v_end && *hit <= *it + window) ++matched;
  }
  return static_cast<double>(matched) / static_cast<double>(denom);
}

std::vector<double> edge_feature_vector(const FraudEventLog& log, const std::string& u,
                                        const std::string& v, int t,
                                        const CooccurrenceWindows& windows) {
  windows.validate();
  std::vector<double> f;
  f.reserve(windows.windows.size());
  for (int w : windows.windows) f.push_back(cooccurrence_frequency(log, u, v, t, w));
  return f;
}

void apply_disposition(FraudEventLog& log, const Disposition& d) {
  log.append(FraudEvent{d.u, d.time, EventSource::internal_SAR});
  log.append(FraudEvent{d.v, d.time, EventSource::internal_SAR});
}

FraudEventLog read_events_csv(const std::string& path) {
  auto table = csv::read_table(path);
  const int ci = csv::require_column(table, "institution");
  const int ct = csv::require_column(table, "time");
  const int cs = csv::require_column(table, "source");
  std::vector<FraudEvent> events;
  events.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string ctx = path + ":" + std::to_string(r + 2);
    FraudEvent e;
    e.institution = row[static_cast<std::size_t>(ci)];
    e.time = static_cast<int>(csv::parse_long(row[static_cast<std::size_t>(ct)], ctx));
    e.source = event_source_from_string(row[static_cast<std::size_t>(cs)]);
    events.push_back(e);
  }
  return FraudEventLog(std::move(events));
}

void write_events_csv(const std::string& path, const FraudEventLog& log) {
  std::vector<std::string> lines;
  lines.reserve(log.events().size() + 1);
  lines.push_back("institution,time,source");
  for (const auto& e : log.events())
    lines.push_back(e.institution + "," + std::to_string(e.time) + "," + to_string(e.source));
  csv::write_lines(path, lines);
}

}  // namespace scafds::cooccur
