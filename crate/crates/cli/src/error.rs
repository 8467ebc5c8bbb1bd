use std::fmt;

/// A usage or configuration problem; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

/// Configuration errors from the library count as usage errors; everything
/// else is a runtime data error.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || matches!(cause.downcast_ref::<kvsift::Error>(), Some(kvsift::Error::Config(_))) {
            return EXIT_USAGE;
        }
    }
    EXIT_DATA
}
