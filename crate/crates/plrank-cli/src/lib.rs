//! Library surface of the `plrank` CLI: subcommand implementations and the
//! file formats they read and write.

pub mod bench;
pub mod eval;
pub mod fit;
pub mod io;
pub mod netcmd;
pub mod oracle;
pub mod report;
pub mod sim;

/// Marker for failures that should exit with code 3.
#[derive(Debug, thiserror::Error)]
#[error("numerical failure: {0}")]
pub struct NumericalFailure(pub String);

/// Splitmix64-style derivation of per-trial seeds from one root seed.
pub fn derive_seed(root: u64, counter: u64) -> u64 {
    let mut z = root ^ counter.wrapping_mul(0x9e3779b97f4a7c15);
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
