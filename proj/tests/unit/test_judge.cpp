#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "helpers.hpp"
#include "mock_judge.hpp"
#include "steersig/checkpoint.hpp"
#include "steersig/error.hpp"
#include "steersig/judge.hpp"
#include "steersig/remote_judge.hpp"

using namespace steersig;

namespace {

ConceptLexicon angry() {
  ConceptLexicon l;
  l.concept_name = "angry";
  l.criterion = default_criterion("angry");
  l.tokens = {65, 66};
  l.words = {"C"};
  return l;
}

}  // namespace

TEST_SUITE("judge") {
  TEST_CASE("prompt template") {
    const auto p = render_prompt(angry());
    CHECK(p.find("The text contains angry words or angry sentiment.") != std::string::npos);
    CHECK(p.find("coherent and grammatically correct") != std::string::npos);
    CHECK(p.find("Provide integer scores from 1 to 10.") != std::string::npos);
    CHECK(p.find(R"(Output JSON only: {"score": int, "coherence": int})") != std::string::npos);
    CHECK(p == render_prompt(angry()));
  }

  TEST_CASE("judgment parsing") {
    CHECK(parse_judgment(R"({"score": 7, "coherence": 9})") == Judgment{7, 9});
    CHECK(parse_judgment(R"(Sure! {"score": 3, "coherence": 10})") == Judgment{3, 10});
    CHECK(parse_judgment(R"(note {not json} then {"coherence": 2, "score": 5.0} end)") == Judgment{5, 2});
    CHECK(parse_judgment(R"({"text": "a } inside", "score": 1, "coherence": 1})") == Judgment{1, 1});
    CHECK_THROWS_AS(parse_judgment(R"({"score": 11, "coherence": 9})"), FormatError);
    CHECK_THROWS_AS(parse_judgment(R"({"score": 0, "coherence": 9})"), FormatError);
    CHECK_THROWS_AS(parse_judgment(R"({"score": 6.5, "coherence": 9})"), FormatError);
    CHECK_THROWS_AS(parse_judgment(R"({"score": 6})"), FormatError);
    CHECK_THROWS_AS(parse_judgment("no braces here"), FormatError);
  }

  TEST_CASE("normalization") {
    CHECK(normalize_and_combine("r", "h", 10, 10).performance == 1.0);
    CHECK(normalize_and_combine("r", "h", 8, 5).performance == doctest::Approx(0.40));
    const auto low = normalize_and_combine("r", "h", 1, 10);
    CHECK(low.steering == doctest::Approx(0.1));
    CHECK(low.performance == doctest::Approx(0.1));
    const auto mm = normalize_and_combine("r", "h", 1, 10, ScoreMapping::min_max);
    CHECK(mm.steering == 0.0);
    CHECK(mm.coherence_norm == 1.0);
    CHECK_THROWS_AS(normalize_and_combine("r", "h", 0, 5), InvalidArgument);
  }

  TEST_CASE("heuristic judge formula") {
    const auto lex = angry();
    const std::vector<TokenId> none{100, 101, 102, 103, 104, 105};
    CHECK(heuristic_judge(none, lex).score == 1);
    CHECK(heuristic_judge(none, lex).coherence == 10);
    const std::vector<TokenId> many{65, 100, 66, 101, 67, 102, 65, 103, 66};  // 'C' = 67 via words
    CHECK(heuristic_judge(many, lex).score == 10);
    const std::vector<TokenId> three{65, 100, 66, 101, 67};
    CHECK(heuristic_judge(three, lex).score == 1 + 5);  // round(9 * 3/5) = 5
    const std::vector<TokenId> loop(30, 104);
    // 28 windows, 27 repeat the first: r = 27/28, round(9r) = 9
    CHECK(heuristic_judge(loop, lex).coherence == 1);
    CHECK(heuristic_judge(loop, lex) == heuristic_judge(loop, lex));
    // one repeated window out of four: round(9 / 4) = 2
    const std::vector<TokenId> once{100, 101, 102, 100, 101, 102};
    CHECK(heuristic_judge(once, lex).coherence == 10 - 2);
  }

  TEST_CASE("lexicon files") {
    const auto lex = parse_lexicons(R"({"concepts": [{"concept": "angry", "words": ["A", "B"]},
                                                      {"concept": "calm", "tokens": [97], "criterion": "Calm."}]})");
    REQUIRE(lex.size() == 2);
    CHECK(lex[0].criterion == default_criterion("angry"));
    CHECK(lex[0].matches(65));
    CHECK_FALSE(lex[0].matches(67));
    CHECK(find_lexicon(lex, "calm").criterion == "Calm.");
    CHECK(find_lexicon(lex, "calm").matches(97));
    CHECK_THROWS_AS(find_lexicon(lex, "sad"), DataError);
    CHECK_THROWS_AS(parse_lexicons(R"([{"concept": "x"}])"), FormatError);
    CHECK(parse_lexicons(R"([{"concept": "x", "tokens": [1]}])").size() == 1);
  }

  TEST_CASE("annotation JSONL") {
    const auto a = normalize_and_combine("run1", "heuristic", 8, 5);
    const auto line = annotation_to_jsonl(a);
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"run_id", "judge", "score", "coherence", "S", "C", "P"}) CHECK(j.contains(key));
    const auto back = parse_annotations(line + "\n\n" + annotation_to_jsonl(normalize_and_combine("run2", "x", 2, 2)));
    REQUIRE(back.size() == 2);
    CHECK(back[0].performance == a.performance);
    CHECK(back[1].run_id == "run2");
    // mapping applied when reading
    CHECK(parse_annotations(line, ScoreMapping::min_max)[0].steering == doctest::Approx(7.0 / 9.0));
    CHECK_THROWS_AS(parse_annotations("{\"run_id\": 1}\n"), FormatError);
  }
}

TEST_SUITE("remote_judge") {
  TEST_CASE("scores come back from the endpoint") {
    testutil::MockJudge mock;
    const auto prompt = render_prompt(angry());
    const auto v = remote_judge(mock.config(), "secret-token", prompt, "AAA BBB", "run1");
    CHECK(v.status == RemoteVerdict::Status::ok);
    REQUIRE(v.judgment.has_value());
    CHECK(*v.judgment == Judgment{4, 8});
    CHECK(mock.last_auth_ == "Bearer secret-token");
    const auto body = nlohmann::json::parse(mock.last_body_);
    CHECK(body["model"] == "mock");
    CHECK(body["messages"][0]["role"] == "system");
    CHECK(body["messages"][0]["content"] == prompt);
    CHECK(body["messages"][1]["content"] == "AAA BBB");
  }

  TEST_CASE("a bare JSON body is accepted too") {
    testutil::MockJudge mock;
    mock.reply_ = R"({"score": 4, "coherence": 8})";
    const auto v = remote_judge(mock.config(), "t", "p", "x");
    REQUIRE(v.judgment.has_value());
    CHECK(*v.judgment == Judgment{4, 8});
  }

  TEST_CASE("malformed reply is marked unparseable without retrying") {
    testutil::MockJudge mock;
    mock.reply_ = "I would rate this highly!";
    const auto v = remote_judge(mock.config(), "t", "p", "x");
    CHECK(v.status == RemoteVerdict::Status::unparseable);
    CHECK_FALSE(v.judgment.has_value());
    CHECK(mock.requests_ == 1);
  }

  TEST_CASE("server errors are retried, then reported") {
    testutil::MockJudge mock;
    mock.failures_left_ = 2;
    const auto ok = remote_judge(mock.config(), "t", "p", "x");
    CHECK(ok.status == RemoteVerdict::Status::ok);
    CHECK(ok.attempts == 3);

    mock.failures_left_ = 100;
    const auto bad = remote_judge(mock.config(), "t", "p", "x");
    CHECK(bad.status == RemoteVerdict::Status::transport_error);
    CHECK(bad.attempts == 3);
  }

  TEST_CASE("unreachable endpoint is a transport error") {
    RemoteJudgeConfig c;
    c.endpoint = "http://127.0.0.1:1/v1/chat";
    c.model = "m";
    c.attempts = 2;
    c.initial_backoff = std::chrono::milliseconds(1);
    c.timeout = std::chrono::milliseconds(500);
    CHECK(remote_judge(c, "t", "p", "x").status == RemoteVerdict::Status::transport_error);
  }

  TEST_CASE("the exchange log never contains the token") {
    testutil::MockJudge mock;
    testutil::TempDir dir("judgelog");
    {
      ExchangeLog log(dir.path() / "log.jsonl");
      remote_judge(mock.config(), "very-secret-token", "p", "x", "run9", &log);
    }
    const auto text = read_file(dir.path() / "log.jsonl");
    CHECK_FALSE(text.empty());
    CHECK(text.find("very-secret-token") == std::string::npos);
    CHECK(text.find("run9") != std::string::npos);
  }

  TEST_CASE("token comes from the environment") {
    ::unsetenv(std::string(kJudgeTokenEnv).c_str());
    CHECK_THROWS_AS(judge_token_from_env(), ConfigError);
    ::setenv(std::string(kJudgeTokenEnv).c_str(), "", 1);
    CHECK_THROWS_AS(judge_token_from_env(), ConfigError);
    ::setenv(std::string(kJudgeTokenEnv).c_str(), "abc", 1);
    CHECK(judge_token_from_env() == "abc");
    ::unsetenv(std::string(kJudgeTokenEnv).c_str());
  }

  TEST_CASE("config validation") {
    RemoteJudgeConfig c;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.endpoint = "ftp://x";
    c.model = "m";
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.endpoint = "http://x/y";
    CHECK_NOTHROW(c.validate());
    testutil::TempDir dir("rjcfg");
    std::ofstream(dir.path() / "c.json") << R"({"remote_judge": {"endpoint": "http://h:1/p", "model": "m", "attempts": 5}})";
    CHECK(load_remote_judge_config(dir.path() / "c.json").attempts == 5);
    std::ofstream(dir.path() / "bad.json") << R"({"model": "m"})";
    CHECK_THROWS_AS(load_remote_judge_config(dir.path() / "bad.json"), ConfigError);
  }
}
