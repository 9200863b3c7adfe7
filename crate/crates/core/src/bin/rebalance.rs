fn main() {
    std::process::exit(rebalance::cli::dispatch(std::env::args_os()));
}
