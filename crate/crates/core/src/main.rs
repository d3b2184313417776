fn main() -> std::process::ExitCode {
    domainsift::cli::main()
}
