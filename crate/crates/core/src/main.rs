fn main() -> std::process::ExitCode {
    fsev::tune_allocator();
    fsev::cli::run()
}
