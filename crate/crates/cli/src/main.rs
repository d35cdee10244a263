fn main() -> std::process::ExitCode {
    wholebody_cli::main_with(std::env::args_os())
}
