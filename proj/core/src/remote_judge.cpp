#include "steersig/remote_judge.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "steersig/checkpoint.hpp"
#include "steersig/error.hpp"

namespace steersig {

void RemoteJudgeConfig::validate() const {
  if (id.empty()) throw ConfigError("remote judge id is empty");
  if (endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0) {
    throw ConfigError("remote judge endpoint must start with http:// or https://");
  }
  if (model.empty()) throw ConfigError("remote judge model name is empty");
  if (attempts == 0) throw ConfigError("remote judge needs at least one attempt");
  if (concurrency == 0) throw ConfigError("remote judge concurrency must be >= 1");
}

void from_json(const nlohmann::json& j, RemoteJudgeConfig& c) {
  c.id = j.value("id", c.id);
  c.endpoint = j.at("endpoint").get<std::string>();
  c.model = j.at("model").get<std::string>();
  c.attempts = j.value("attempts", c.attempts);
  c.initial_backoff = std::chrono::milliseconds(j.value("initial_backoff_ms", c.initial_backoff.count()));
  c.timeout = std::chrono::milliseconds(j.value("timeout_ms", c.timeout.count()));
  c.concurrency = j.value("concurrency", c.concurrency);
}

RemoteJudgeConfig load_remote_judge_config(const std::filesystem::path& path) {
  RemoteJudgeConfig c;
  try {
    auto j = nlohmann::json::parse(read_file(path));
    if (j.contains("remote_judge")) j = j["remote_judge"];
    c = j.get<RemoteJudgeConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad remote judge config " + path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

ExchangeLog::ExchangeLog(const std::filesystem::path& path) : out_(path, std::ios::app) {
  if (!out_) throw DataError("cannot open judge log " + path.string());
}

void ExchangeLog::write(const nlohmann::json& entry) {
  std::lock_guard lock(mutex_);
  out_ << entry.dump() << '\n';
  out_.flush();
}

std::string to_string(RemoteVerdict::Status s) {
  switch (s) {
    case RemoteVerdict::Status::ok: return "ok";
    case RemoteVerdict::Status::unparseable: return "unparseable";
    case RemoteVerdict::Status::transport_error: return "transport_error";
  }
  return "unknown";
}

std::string judge_token_from_env() {
  const char* v = std::getenv(std::string(kJudgeTokenEnv).c_str());
  if (v == nullptr || *v == '\0') {
    throw ConfigError(std::string(kJudgeTokenEnv) + " is not set");
  }
  return v;
}

namespace {

struct SplitUrl {
  std::string base;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string reply_text(const std::string& body) {
  try {
    const auto j = nlohmann::json::parse(body);
    if (j.is_object() && j.contains("choices")) {
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    }
  } catch (const nlohmann::json::exception&) {
  }
  return body;
}

}  // namespace

RemoteVerdict remote_judge(const RemoteJudgeConfig& config, const std::string& token,
                           const std::string& prompt, const std::string& text,
                           const std::string& run_id, ExchangeLog* log) {
  config.validate();
  const auto url = split_url(config.endpoint);
  const nlohmann::json request = {
      {"model", config.model},
      {"messages",
       nlohmann::json::array({{{"role", "system"}, {"content", prompt}}, {{"role", "user"}, {"content", text}}})}};
  const std::string body = request.dump();

  httplib::Client client(url.base);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  const httplib::Headers headers = {{"Authorization", "Bearer " + token}};

  RemoteVerdict verdict;
  auto backoff = config.initial_backoff;
  for (std::size_t attempt = 1; attempt <= config.attempts; ++attempt) {
    verdict.attempts = attempt;
    if (log) log->write({{"run_id", run_id}, {"attempt", attempt}, {"request", request}});
    auto res = client.Post(url.path, headers, body, "application/json");
    if (!res) {
      verdict.detail = "transport: " + httplib::to_string(res.error());
    } else if (res->status < 200 || res->status >= 300) {
      verdict.detail = "http status " + std::to_string(res->status);
      if (log) log->write({{"run_id", run_id}, {"attempt", attempt}, {"status", res->status}, {"body", res->body}});
    } else {
      if (log) log->write({{"run_id", run_id}, {"attempt", attempt}, {"status", res->status}, {"body", res->body}});
      try {
        verdict.judgment = parse_judgment(reply_text(res->body));
        verdict.status = RemoteVerdict::Status::ok;
        verdict.detail.clear();
      } catch (const FormatError& e) {
        verdict.status = RemoteVerdict::Status::unparseable;
        verdict.detail = e.what();
      }
      return verdict;
    }
    if (log) log->write({{"run_id", run_id}, {"attempt", attempt}, {"error", verdict.detail}});
    if (attempt < config.attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  verdict.status = RemoteVerdict::Status::transport_error;
  return verdict;
}

}  // namespace steersig
