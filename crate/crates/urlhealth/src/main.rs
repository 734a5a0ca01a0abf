use std::process::ExitCode;

fn main() -> ExitCode {
    urlhealth::cli::main()
}
