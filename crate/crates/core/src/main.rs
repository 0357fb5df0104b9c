fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(amortized_cv::cli::run_command(&args));
}
