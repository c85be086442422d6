use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(hydroctrl::run(std::env::args_os()))
}
