fn main() -> std::process::ExitCode {
    eagle::cli::main()
}
