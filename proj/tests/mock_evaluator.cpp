// Scriptable evaluator child for protocol tests.
//
//   mock_evaluator --mode echo --score 0.5
//   mock_evaluator --mode surrogate --cells 12 --downs 3
//   mock_evaluator --mode id-mismatch | range | hang | malformed | bad-version | error-reply
//   mock_evaluator --mode echo --die-after 3
//   mock_evaluator ... --log FILE      (append every received line)

#include <chrono>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "c2fnas/evaluation.hpp"
#include "c2fnas/run_config.hpp"

int main(int argc, char** argv) {
  CLI::App app{"mock evaluator"};
  std::string mode = "echo", log_file;
  double score = 0.5;
  int die_after = -1, cells = 12, downs = 3;
  app.add_option("--mode", mode);
  app.add_option("--score", score);
  app.add_option("--die-after", die_after);
  app.add_option("--cells", cells);
  app.add_option("--downs", downs);
  app.add_option("--log", log_file);
  CLI11_PARSE(app, argc, argv);

  std::ofstream log;
  if (!log_file.empty()) log.open(log_file, std::ios::app);

  const auto space = c2fnas::SpaceSpec::symmetric(cells, downs, downs);
  std::optional<c2fnas::SurrogateEvaluator> surrogate;
  if (mode == "surrogate") surrogate.emplace(c2fnas::default_surrogate(space), space);

  int answered = 0;
  std::string line;
  while (std::getline(std::cin, line)) {
    if (log.is_open()) log << line << '\n' << std::flush;
    const auto req = nlohmann::json::parse(line, nullptr, false);
    if (req.is_discarded()) continue;
    if (req.value("cmd", "") == "hello") {
      std::cout << nlohmann::json{{"cmd", "hello"}, {"version", mode == "bad-version" ? 2 : 1}}.dump() << '\n'
                << std::flush;
      continue;
    }
    if (die_after >= 0 && answered >= die_after) return 7;
    const long long id = req.value("id", -1LL);
    nlohmann::ordered_json reply;
    if (mode == "hang") {
      std::this_thread::sleep_for(std::chrono::hours(1));
    } else if (mode == "malformed") {
      std::cout << "this is not json\n" << std::flush;
      ++answered;
      continue;
    } else if (mode == "error-reply") {
      reply["id"] = id;
      reply["error"] = "cannot build network";
    } else {
      reply["id"] = mode == "id-mismatch" ? id + 1 : id;
      double s = mode == "range" ? 1.7 : score;
      if (surrogate) s = surrogate->evaluate(c2fnas::request_from_wire(req)).score;
      reply["score"] = s;
      reply["metrics"] = {{"dice", s}};
    }
    std::cout << reply.dump() << '\n' << std::flush;
    ++answered;
  }
  return 0;
}
