fn main() {
    std::process::exit(entropic_flow_cli::run(std::env::args_os()));
}
