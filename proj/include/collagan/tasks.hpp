#pragma once

#include <array>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace collagan {

enum class Task { inpaint, segment, detect };

inline constexpr std::array<Task, 3> kAllTasks{Task::inpaint, Task::segment, Task::detect};

inline char task_code(Task t) {
  switch (t) {
    case Task::inpaint: return 'i';
    case Task::segment: return 's';
    case Task::detect: return 'd';
  }
  return '?';
}

inline Task task_from_code(char c) {
  switch (c) {
    case 'i': return Task::inpaint;
    case 's': return Task::segment;
    case 'd': return Task::detect;
    default: throw std::invalid_argument(std::string("unknown task '") + c + "' (expected i, s or d)");
  }
}

/// Nonempty subset of {inpaint, segment, detect}.
class TaskSet {
 public:
  TaskSet() = default;
  TaskSet(std::initializer_list<Task> tasks) {
    for (Task t : tasks) bits_ |= bit(t);
  }

  /// Parses "i,s,d", "isd" or "i s d".
  static TaskSet parse(std::string_view text) {
    TaskSet out;
    for (char c : text) {
      if (c == ',' || c == ' ' || c == '{' || c == '}') continue;
      out.bits_ |= bit(task_from_code(c));
    }
    if (out.empty()) throw std::invalid_argument("task set must not be empty");
    return out;
  }

  bool contains(Task t) const { return (bits_ & bit(t)) != 0; }
  bool empty() const { return bits_ == 0; }
  int size() const { return (bits_ & 1) + ((bits_ >> 1) & 1) + ((bits_ >> 2) & 1); }
  void insert(Task t) { bits_ |= bit(t); }
  void erase(Task t) { bits_ &= ~bit(t); }

  std::vector<Task> tasks() const {
    std::vector<Task> out;
    for (Task t : kAllTasks) {
      if (contains(t)) out.push_back(t);
    }
    return out;
  }

  std::string to_string() const {
    std::string s;
    for (Task t : tasks()) {
      if (!s.empty()) s += ',';
      s += task_code(t);
    }
    return s;
  }

  /// All seven nonempty subsets.
  static std::vector<TaskSet> all_nonempty() {
    std::vector<TaskSet> out;
    for (unsigned b = 1; b < 8; ++b) {
      TaskSet s;
      s.bits_ = b;
      out.push_back(s);
    }
    return out;
  }

  friend bool operator==(TaskSet a, TaskSet b) { return a.bits_ == b.bits_; }

 private:
  static unsigned bit(Task t) { return 1u << static_cast<unsigned>(t); }
  unsigned bits_ = 0;
};

/// Adversarial and reconstruction coefficients, present exactly for the active tasks.
struct LossWeights {
  std::map<Task, double> adv;
  std::map<Task, double> rec;

  void validate(const TaskSet& tasks) const {
    for (Task t : kAllTasks) {
      const std::string name(1, task_code(t));
      for (const auto* table : {&adv, &rec}) {
        const char* kind = table == &adv ? "lambda_adv_" : "lambda_rec_";
        auto it = table->find(t);
        if (tasks.contains(t) && it == table->end()) {
          throw std::invalid_argument("missing weight " + std::string(kind) + name + " for active task");
        }
        if (!tasks.contains(t) && it != table->end()) {
          throw std::invalid_argument("weight " + std::string(kind) + name + " given for inactive task");
        }
        if (it != table->end() && !(it->second >= 0)) {
          throw std::invalid_argument("weight " + std::string(kind) + name + " must be >= 0");
        }
      }
    }
  }
};

}  // namespace collagan
