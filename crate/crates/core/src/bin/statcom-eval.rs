fn main() -> std::process::ExitCode {
    statcom_eval::cli::main()
}
