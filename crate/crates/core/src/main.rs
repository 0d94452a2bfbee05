fn main() -> std::process::ExitCode {
    qdiscrim::cli::main()
}
