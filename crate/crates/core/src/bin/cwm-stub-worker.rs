//! Stand-in execution worker serving native fixture programs over stdio.
//!
//! Usage: cwm-stub-worker [--protocol-version N]

use std::io;
use std::process::ExitCode;
use std::sync::Arc;

use cwm_core::sandbox::protocol::PROTOCOL_VERSION;
use cwm_core::sandbox::stub;

fn main() -> ExitCode {
    let mut version = PROTOCOL_VERSION;
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        match (arg.as_str(), args.next()) {
            ("--protocol-version", Some(v)) => match v.parse() {
                Ok(v) => version = v,
                Err(_) => {
                    eprintln!("invalid protocol version: {v}");
                    return ExitCode::from(2);
                }
            },
            _ => {
                eprintln!("usage: cwm-stub-worker [--protocol-version N]");
                return ExitCode::from(2);
            }
        }
    }
    let registry = Arc::new(stub::stub_registry());
    let stdin = io::stdin().lock();
    let stdout = io::stdout().lock();
    match stub::serve(stdin, stdout, registry, version) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("worker error: {e}");
            ExitCode::FAILURE
        }
    }
}
