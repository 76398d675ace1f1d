#include "segprobe/run_record.hpp"

#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace segprobe {

std::string artifact_version() { return std::string(SEGPROBE_VERSION) + "+" + SEGPROBE_GIT_DESCRIBE; }

nlohmann::json RunRecord::to_json() const {
  const std::time_t t = std::chrono::system_clock::to_time_t(started);
  std::tm utc{};
  gmtime_r(&t, &utc);
  std::ostringstream stamp;
  stamp << std::put_time(&utc, "%Y-%m-%dT%H:%M:%SZ");
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - clock).count();
  return {{"subcommand", subcommand},
          {"command_line", command_line},
          {"config", config},
          {"seeds", seeds},
          {"store_hash", store_hash},
          {"version", artifact_version()},
          {"started_at", stamp.str()},
          {"wall_clock_seconds", wall},
          {"outputs", outputs},
          {"details", details}};
}

void RunRecord::write(const std::filesystem::path& dir) const {
  std::ofstream out(dir / "run.json", std::ios::trunc);
  out << to_json().dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write " + (dir / "run.json").string());
}

}  // namespace segprobe
