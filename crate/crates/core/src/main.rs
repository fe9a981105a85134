fn main() {
    std::process::exit(topicfuse::cli::main_with(std::env::args_os()));
}
