// cli.hpp - the `polynet` command line.
//
//   verify --suite NAME [--seed S]
//   count-params --arch NAME|FILE
//   make-dataset (--synth D N SEED | --limit M --in F | --longtail IF --in F) --out F
//   train --arch A --data F [--eval-data F] [--epochs ...] [--repeats R] --out-dir D
//   eval --checkpoint F --data F [--arch A]
//   report --runs D [--out F]
//
// Exit codes: 0 success, 1 failed verification or diverged training,
// 2 usage, input or I/O error. Output is "key: value" lines.

#ifndef POLYNET_CLI_HPP
#define POLYNET_CLI_HPP

#include <ostream>
#include <string>
#include <vector>

namespace polynet {

// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace polynet

#endif  // POLYNET_CLI_HPP
