//! Library side of the `tiltroute` command-line tool.

use std::path::Path;

use tiltroute::Error;

pub mod args;
pub mod commands;
pub mod manifest;

pub use args::Cli;
pub use commands::run;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;

/// Exit code class for an error: validation 2, I/O 3, configuration 4.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Validation { .. }
        | Error::EmptyCorpus
        | Error::Format(_)
        | Error::Dimension { .. }
        | Error::Degenerate(_)
        | Error::Consistency(_)
        | Error::Domain(_) => EXIT_VALIDATION,
        Error::Io(_) => EXIT_IO,
        Error::Config(_) => EXIT_CONFIG,
        Error::Internal(_) => EXIT_OTHER,
    }
}

pub(crate) fn io_context(path: &Path, err: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(err.kind(), format!("{}: {err}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tiltroute::ValidationKind;

    #[test]
    fn exit_classes_are_distinct() {
        let v = exit_code(&Error::Validation { line: 1, kind: ValidationKind::MissingHeader });
        let io = exit_code(&Error::Io(std::io::Error::other("x")));
        let cfg = exit_code(&Error::Config("x".into()));
        assert_eq!((v, io, cfg), (EXIT_VALIDATION, EXIT_IO, EXIT_CONFIG));
    }
}
