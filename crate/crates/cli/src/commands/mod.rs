pub mod check;
pub mod cost;
pub mod demo;
pub mod dump;
pub mod erf;

use crate::Usage;

/// `"i,j"` into a pair.
pub fn parse_pair(s: &str) -> Result<[usize; 2], String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `i,j`, got `{s}`"))?;
    let p = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    Ok([p(a)?, p(b)?])
}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}
