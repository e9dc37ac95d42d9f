#pragma once

#include <string>
#include <vector>

#include "cace/config.hpp"

namespace cace::cli {

// Exit-code contract: 0 success, 2 config error, 3 data error, 4 numeric
// failure. run() maps exceptions accordingly.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

void cmd_synth(const RunConfig& cfg, const std::string& out_dir, bool force);
void cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir);
void cmd_eval(const RunConfig& cfg, const std::string& data_dir,
              const std::vector<std::string>& checkpoints, const std::string& out_dir);
void cmd_predict(const RunConfig& cfg, const std::string& checkpoint,
                 const std::string& image_path, const std::string& gt_boundary_path,
                 const std::string& out_dir);
bool cmd_gradcheck(const RunConfig& cfg);  // returns pass/fail

int run(int argc, char** argv);

}  // namespace cace::cli
