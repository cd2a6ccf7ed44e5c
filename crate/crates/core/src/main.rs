fn main() -> std::process::ExitCode {
    noise_oracle::cli::main()
}
