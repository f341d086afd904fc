fn main() {
    std::process::exit(hysp_lab::cli::run(std::env::args_os()));
}
