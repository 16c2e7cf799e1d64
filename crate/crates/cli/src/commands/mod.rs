pub mod evaluate;
pub mod harmonize;
pub mod loss_check;
pub mod manifest;
pub mod plot;
pub mod train;

/// File-name-safe version of a sample id.
pub fn file_stem(id: &str) -> String {
    id.replace(['/', '\\'], "_")
}

pub fn required<'a, T>(value: &'a Option<T>, flag: &str) -> anyhow::Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| vesselbench::Error::InvalidArgument(format!("--{flag} is required")).into())
}
