fn main() -> std::process::ExitCode {
    mbtnet_cli::run(std::env::args_os())
}
