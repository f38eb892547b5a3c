fn main() -> std::process::ExitCode {
    scenemap::cli::main()
}
