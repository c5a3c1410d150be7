fn main() -> std::process::ExitCode {
    ssa_core::cli::main()
}
