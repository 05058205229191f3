fn main() {
    std::process::exit(qmc_metrics::cli::run(std::env::args_os()));
}
