use clap::Parser;

use ufse::run::{dispatch, Cli, UsageError};

fn main() {
    // clap itself exits with 2 on unknown flags / malformed invocations.
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err:#}");
        let usage = err.downcast_ref::<UsageError>().is_some()
            || matches!(
                err.downcast_ref::<ufse_core::Error>(),
                Some(ufse_core::Error::Usage(_)) | Some(ufse_core::Error::Config(_))
            );
        std::process::exit(if usage { 2 } else { 1 });
    }
}
