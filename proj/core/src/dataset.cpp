#include "genrec/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "genrec/errors.hpp"

namespace genrec {

std::vector<Interaction> five_core_filter(std::vector<Interaction> records,
                                          int core) {
  bool changed = true;
  while (changed) {
    changed = false;
    std::map<int64_t, int> user_count, item_count;
    for (const auto& r : records) {
      user_count[r.user] += 1;
      item_count[r.item] += 1;
    }
    std::vector<Interaction> kept;
    kept.reserve(records.size());
    for (const auto& r : records) {
      if (user_count[r.user] >= core && item_count[r.item] >= core)
        kept.push_back(r);
      else
        changed = true;
    }
    records = std::move(kept);
  }
  return records;
}

SplitDataset leave_one_out_split(const std::vector<Interaction>& records,
                                 SplitMode mode, int max_history) {
  std::map<int64_t, std::vector<Interaction>> by_user;
  std::set<int64_t> item_set;
  for (const auto& r : records) {
    by_user[r.user].push_back(r);
    item_set.insert(r.item);
  }

  SplitDataset out;
  out.items.assign(item_set.begin(), item_set.end());

  auto tail = [max_history](const std::vector<int64_t>& seq, size_t end) {
    size_t start = end > static_cast<size_t>(max_history)
                       ? end - static_cast<size_t>(max_history)
                       : 0;
    return std::vector<int64_t>(seq.begin() + start, seq.begin() + end);
  };

  for (auto& [user, rows] : by_user) {
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Interaction& a, const Interaction& b) {
                       return a.ts < b.ts;
                     });
    const size_t n = rows.size();
    if (n < 3)
      throw SequenceTooShort("user " + std::to_string(user) + " has " +
                             std::to_string(n) + " interactions");
    out.users.push_back(user);
    std::vector<int64_t> seq(n);
    for (size_t i = 0; i < n; ++i) seq[i] = rows[i].item;

    out.test.push_back({user, tail(seq, n - 1), seq[n - 1]});
    out.validation.push_back({user, tail(seq, n - 2), seq[n - 2]});
    if (mode == SplitMode::kPerPrefix) {
      for (size_t t = 1; t + 1 < n; ++t)
        out.train.push_back({user, tail(seq, t), seq[t]});
    } else {
      out.train.push_back({user, tail(seq, n - 2), seq[n - 2]});
    }
  }
  return out;
}

void save_interactions(const std::string& path,
                       const std::vector<Interaction>& records) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  for (const auto& r : records)
    f << r.user << '\t' << r.item << '\t' << r.ts << '\n';
  if (!f) throw IoError("write failed for " + path);
}

std::vector<Interaction> load_interactions(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::vector<Interaction> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    Interaction r;
    if (!(ss >> r.user >> r.item >> r.ts))
      throw IoError(path + ":" + std::to_string(lineno) + ": bad record");
    out.push_back(r);
  }
  return out;
}

}  // namespace genrec
