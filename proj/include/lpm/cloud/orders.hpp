#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpm/cloud/catalog.hpp"
#include "lpm/cloud/store.hpp"

namespace lpm::cloud {

enum class OrderStatus { proposed, approved, submitted, rejected };

inline constexpr OrderStatus all_order_statuses[] = {OrderStatus::proposed, OrderStatus::approved,
                                                     OrderStatus::submitted, OrderStatus::rejected};

inline std::string status_name(OrderStatus s) {
  switch (s) {
    case OrderStatus::proposed: return "PROPOSED";
    case OrderStatus::approved: return "APPROVED";
    case OrderStatus::submitted: return "SUBMITTED";
    case OrderStatus::rejected: break;
  }
  return "REJECTED";
}

inline OrderStatus status_from_name(const std::string& s) {
  for (auto st : all_order_statuses)
    if (status_name(st) == s) return st;
  throw FormatError("unknown order status '" + s + "'");
}

inline bool legal_transition(OrderStatus from, OrderStatus to) {
  return (from == OrderStatus::proposed && (to == OrderStatus::approved || to == OrderStatus::rejected)) ||
         (from == OrderStatus::approved && to == OrderStatus::submitted);
}

class OrderStateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MaintenanceOrder {
  std::string order_id;
  std::string equipment_id;
  std::string part;
  OrderAction action = OrderAction::inspect;
  OrderStatus status = OrderStatus::proposed;
  std::string prediction_id;
  std::string cause;
  std::string erp_receipt;
  std::map<std::string, std::int64_t> audit;  // status name -> transition time (ms)

  bool open() const { return status == OrderStatus::proposed || status == OrderStatus::approved; }
  bool operator==(const MaintenanceOrder&) const = default;
};

inline Json to_json(const MaintenanceOrder& o) {
  Json audit = Json::object();
  for (const auto& [k, v] : o.audit) audit[k] = v;
  return Json{{"order_id", o.order_id},       {"equipment_id", o.equipment_id},
              {"part", o.part},               {"action", action_name(o.action)},
              {"status", status_name(o.status)}, {"prediction_id", o.prediction_id},
              {"cause", o.cause},             {"erp_receipt", o.erp_receipt.empty() ? Json() : Json(o.erp_receipt)},
              {"audit", audit}};
}

inline MaintenanceOrder order_from_json(const Json& j) {
  using namespace lpm::detail;
  MaintenanceOrder o;
  o.order_id = string_at(j, "order_id");
  o.equipment_id = string_at(j, "equipment_id");
  o.part = string_at(j, "part");
  o.action = action_from_name(string_at(j, "action"));
  o.status = status_from_name(string_at(j, "status"));
  o.prediction_id = value_or<std::string>(j, "prediction_id", "");
  o.cause = value_or<std::string>(j, "cause", "");
  if (j.contains("erp_receipt") && j.at("erp_receipt").is_string()) o.erp_receipt = j.at("erp_receipt");
  if (j.contains("audit"))
    for (const auto& [k, v] : j.at("audit").items()) o.audit[k] = v.get<std::int64_t>();
  return o;
}

// Stand-in for the ERP system: one canonical line per submitted order.
class ErpStub {
 public:
  explicit ErpStub(std::filesystem::path path) : log_(std::move(path)) {
    log_.replay([&](const Json&) { ++count_; });
  }

  void set_available(bool up) { available_.store(up); }
  bool available() const { return available_.load(); }

  // Receipt id, or nullopt when the ERP is down.
  std::optional<std::string> submit(const MaintenanceOrder& o, std::int64_t now_ms) {
    if (!available()) return std::nullopt;
    std::lock_guard lock(mu_);
    const auto receipt = "erp-" + std::to_string(count_ + 1);
    try {
      log_.append(Json{{"order_id", o.order_id},
                       {"equipment_id", o.equipment_id},
                       {"part", o.part},
                       {"action", action_name(o.action)},
                       {"receipt_id", receipt},
                       {"submitted_at", now_ms}});
    } catch (const StorageError&) {
      return std::nullopt;
    }
    ++count_;
    return receipt;
  }

  std::size_t submitted() const {
    std::lock_guard lock(mu_);
    return count_;
  }
  const std::filesystem::path& path() const noexcept { return log_.path(); }

 private:
  AppendLog log_;
  mutable std::mutex mu_;
  std::size_t count_ = 0;
  std::atomic<bool> available_{true};
};

// In-memory order table; persistence is the caller's (every mutation returns
// the new order state for logging).
class OrderBook {
 public:
  MaintenanceOrder& create(MaintenanceOrder o, std::int64_t now_ms) {
    o.order_id = "ord-" + std::to_string(++next_);
    o.status = OrderStatus::proposed;
    o.audit[status_name(o.status)] = now_ms;
    orders_.push_back(std::move(o));
    return orders_.back();
  }

  MaintenanceOrder& transition(const std::string& id, OrderStatus to, std::int64_t now_ms) {
    auto& o = get_mut(id);
    if (!legal_transition(o.status, to))
      throw OrderStateError("order " + id + " cannot go from " + status_name(o.status) + " to " + status_name(to));
    o.status = to;
    o.audit[status_name(to)] = now_ms;
    return o;
  }

  // Replay of a persisted state.
  void restore(MaintenanceOrder o) {
    if (auto n = o.order_id.rfind('-'); n != std::string::npos) {
      try {
        next_ = std::max<std::uint64_t>(next_, std::stoull(o.order_id.substr(n + 1)));
      } catch (const std::exception&) {
      }
    }
    for (auto& existing : orders_)
      if (existing.order_id == o.order_id) {
        existing = std::move(o);
        return;
      }
    orders_.push_back(std::move(o));
  }

  const MaintenanceOrder* find(const std::string& id) const {
    for (const auto& o : orders_)
      if (o.order_id == id) return &o;
    return nullptr;
  }

  const MaintenanceOrder* open_for(const std::string& equipment_id) const {
    for (const auto& o : orders_)
      if (o.equipment_id == equipment_id && o.open()) return &o;
    return nullptr;
  }

  const std::vector<MaintenanceOrder>& all() const noexcept { return orders_; }

 private:
  MaintenanceOrder& get_mut(const std::string& id) {
    for (auto& o : orders_)
      if (o.order_id == id) return o;
    throw NotFound("unknown order " + id);
  }

  std::vector<MaintenanceOrder> orders_;
  std::uint64_t next_ = 0;
};

}  // namespace lpm::cloud
