// SPDX-License-Identifier: Apache-2.0

fn main() {
    std::process::exit(fipgraph::cli::dispatch(std::env::args_os()));
}
