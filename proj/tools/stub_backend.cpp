// Reference segmenter backend speaking the patch protocol on stdin/stdout.
//
//   dkparc-stub-backend constant --channels 4 --scores 0.1,0.9
//   dkparc-stub-backend decode --channels 5 --source 3 --group 3 [--schema s.json]
//
// `decode` reads fine label ids stored verbatim in one input channel, which lets an oracle
// ground truth travel through the real process boundary. The `fault` modes exist to exercise
// the host's error handling.

#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <sstream>
#include <thread>

#include "dkparc/backend.hpp"

using namespace dkparc;

int main(int argc, char** argv) {
  CLI::App app{"stub segmenter backend"};
  app.require_subcommand(1);
  int channels = 1;
  app.add_option("--channels", channels)->required();

  std::string scores_text;
  auto* constant = app.add_subcommand("constant", "same scores everywhere");
  constant->add_option("--scores", scores_text, "comma-separated class scores")->required();

  int source = 0, group = 0;
  std::string schema_path;
  auto* decode = app.add_subcommand("decode", "one-hot from label ids stored in a channel");
  decode->add_option("--source", source, "input channel holding the ids")->required();
  decode->add_option("--group", group, "0 for the coarse stage, else the fine group id")->required();
  decode->add_option("--schema", schema_path);

  std::string fault;
  int classes = 2;
  auto* faulty = app.add_subcommand("fault", "misbehave on the first request");
  faulty->add_option("--kind", fault, "garbage, nan, exit, hang or shape")->required();
  faulty->add_option("--classes", classes);

  CLI11_PARSE(app, argc, argv);
  std::ios::sync_with_stdio(false);

  try {
    if (*constant) {
      std::vector<float> scores;
      std::stringstream ss(scores_text);
      std::string item;
      while (std::getline(ss, item, ',')) scores.push_back(std::stof(item));
      ConstantBackend backend(channels, scores);
      protocol::serve(backend, std::cin, std::cout);
    } else if (*decode) {
      const LabelSchema schema = schema_path.empty() ? LabelSchema::dk101() : LabelSchema::load(schema_path);
      SchemaDecodeBackend backend(schema, channels, source, group);
      protocol::serve(backend, std::cin, std::cout);
    } else {
      protocol::Header h;
      auto request = protocol::read_message(std::cin, &h);
      if (!request) return 0;
      if (fault == "exit") return 1;
      if (fault == "hang") {
        std::this_thread::sleep_for(std::chrono::hours(1));
        return 0;
      }
      if (fault == "garbage") {
        std::cout << "this is not a tensor message, not even close" << std::flush;
        return 0;
      }
      Eigen::Vector3i shape = request->shape;
      if (fault == "shape") shape[0] += 1;
      Patch out(shape, classes);
      if (fault == "nan") out.values.setConstant(std::numeric_limits<float>::quiet_NaN());
      protocol::write_message(std::cout, out, classes);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "stub backend: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
