fn main() -> std::process::ExitCode {
    reseg::cli::main()
}
