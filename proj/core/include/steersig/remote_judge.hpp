#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

#include "steersig/judge.hpp"

namespace steersig {

inline constexpr std::string_view kJudgeTokenEnv = "STEERSIG_JUDGE_TOKEN";

struct RemoteJudgeConfig {
  std::string id = "remote";  // judge label written into annotations
  std::string endpoint;       // e.g. http://127.0.0.1:8080/v1/chat/completions
  std::string model;
  std::size_t attempts = 3;
  std::chrono::milliseconds initial_backoff{250};
  std::chrono::milliseconds timeout{30000};
  std::size_t concurrency = 4;

  void validate() const;
};

void from_json(const nlohmann::json& j, RemoteJudgeConfig& c);
RemoteJudgeConfig load_remote_judge_config(const std::filesystem::path& path);

// Appends one JSON line per request/response. Safe to share between threads.
class ExchangeLog {
 public:
  explicit ExchangeLog(const std::filesystem::path& path);
  void write(const nlohmann::json& entry);

 private:
  std::mutex mutex_;
  std::ofstream out_;
};

struct RemoteVerdict {
  enum class Status { ok, unparseable, transport_error };
  Status status = Status::transport_error;
  std::optional<Judgment> judgment;
  std::string detail;
  std::size_t attempts = 0;
};

std::string to_string(RemoteVerdict::Status s);

// Reads the token from STEERSIG_JUDGE_TOKEN; throws ConfigError when unset
// or empty. Called before any request is made.
std::string judge_token_from_env();

// POSTs {"model", "messages": [{"role": "system", ...}, {"role": "user", ...}]}.
// When the reply has choices[0].message.content that string is parsed,
// otherwise the raw body. Transport failures and non-2xx statuses are
// retried with exponential backoff; unparseable replies are not.
RemoteVerdict remote_judge(const RemoteJudgeConfig& config, const std::string& token,
                           const std::string& prompt, const std::string& text,
                           const std::string& run_id = {}, ExchangeLog* log = nullptr);

}  // namespace steersig
