use std::process::ExitCode;

fn main() -> ExitCode {
    imagerag::cli::main()
}
