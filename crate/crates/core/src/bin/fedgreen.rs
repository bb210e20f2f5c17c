fn main() -> std::process::ExitCode {
    fedgreen::cli::main()
}
