//! Query windows, enlarged context windows, and the two ways of padding the
//! map so every query window gets a centered `RP x RP` context.
//!
//! With window `P` and ratio `R` each side is padded by `(R-1)P/2`. Zero
//! padding fills the margin with zeros. Copy-shift padding (CSP) fills the
//! left margin with columns `[(R+1)P/2, RP)` and the right margin with
//! columns `[W-RP, W-(R+1)P/2)`, then repeats the same construction on rows
//! of the width-padded map, so corners are copied from already padded rows.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{maps, Tensor, WindowSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PadMode {
    Zero,
    #[default]
    CopyShift,
}

impl std::str::FromStr for PadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zero" => Ok(PadMode::Zero),
            "csp" | "copyshift" | "copy-shift" => Ok(PadMode::CopyShift),
            _ => Err(Error::Config(format!("unknown padding mode `{s}`"))),
        }
    }
}

/// Padding for a context ratio `R` around `P x P` query windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadSpec {
    pub mode: PadMode,
    pub window: usize,
    pub ratio: usize,
}

impl PadSpec {
    pub fn new(mode: PadMode, window: usize, ratio: usize) -> Self {
        Self { mode, window, ratio }
    }

    /// `(R-1)P/2`, rejected when it is not an integer.
    pub fn margin(&self) -> Result<usize> {
        margin(self.window, self.ratio)
    }
}

pub fn margin(p: usize, r: usize) -> Result<usize> {
    if p == 0 || r == 0 {
        return Err(Error::geometry(
            "window",
            format!("P and R must be >= 1, got P={p} R={r}"),
        ));
    }
    if !((r - 1) * p).is_multiple_of(2) {
        return Err(Error::geometry(
            "window",
            format!("P={p} must be even for R={r}: (R-1)P/2 is not an integer"),
        ));
    }
    Ok((r - 1) * p / 2)
}

/// Non-overlapping `P x P` query windows.
pub fn partition_queries(x: &Tensor, p: usize) -> Result<WindowSet> {
    let [_, h, w] = maps::chw(x.shape())?;
    check_divisible(h, w, p)?;
    x.unfold(p, p, 0)
}

pub fn csp_pad(x: &Tensor, p: usize, r: usize) -> Result<Tensor> {
    eval(x, |g, v| csp_pad_var(g, v, p, r))
}

pub fn zero_pad(x: &Tensor, p: usize, r: usize) -> Result<Tensor> {
    eval(x, |g, v| zero_pad_var(g, v, p, r))
}

pub fn pad(x: &Tensor, spec: PadSpec) -> Result<Tensor> {
    eval(x, |g, v| pad_var(g, v, spec))
}

/// `RP x RP` windows with stride `P` over a map padded for `(P, R)`.
/// Window `(i, j)` is centered on query window `(i, j)`.
pub fn extract_contexts(x_padded: &Tensor, p: usize, r: usize) -> Result<WindowSet> {
    let shape = x_padded.shape();
    context_geometry(shape, p, r)?;
    x_padded.unfold(r * p, p, 0)
}

fn eval(x: &Tensor, f: impl FnOnce(&mut Graph, Var) -> Result<Var>) -> Result<Tensor> {
    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let out = f(&mut g, v)?;
    Ok(g.value(out).clone())
}

fn check_divisible(h: usize, w: usize, p: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::geometry("window", "P must be >= 1"));
    }
    if !h.is_multiple_of(p) {
        return Err(Error::geometry("height", format!("{h} not divisible by window {p}")));
    }
    if !w.is_multiple_of(p) {
        return Err(Error::geometry("width", format!("{w} not divisible by window {p}")));
    }
    Ok(())
}

/// Validates a padded `C x Hp x Wp` map and returns the unpadded `(H, W)`.
pub(crate) fn context_geometry(shape: &[usize], p: usize, r: usize) -> Result<(usize, usize)> {
    let [_, hp, wp] = maps::chw(shape)?;
    let m = margin(p, r)?;
    if hp < 2 * m + p || wp < 2 * m + p {
        return Err(Error::geometry(
            "height",
            format!("padded map {hp}x{wp} too small for P={p} R={r}"),
        ));
    }
    let (h, w) = (hp - 2 * m, wp - 2 * m);
    check_divisible(h, w, p)?;
    Ok((h, w))
}

pub fn pad_var(g: &mut Graph, x: Var, spec: PadSpec) -> Result<Var> {
    match spec.mode {
        PadMode::Zero => zero_pad_var(g, x, spec.window, spec.ratio),
        PadMode::CopyShift => csp_pad_var(g, x, spec.window, spec.ratio),
    }
}

pub fn zero_pad_var(g: &mut Graph, x: Var, p: usize, r: usize) -> Result<Var> {
    maps::chw(g.shape(x))?;
    let m = margin(p, r)?;
    if m == 0 {
        return Ok(x);
    }
    g.pad_zero(x, [m, m, m, m])
}

pub fn csp_pad_var(g: &mut Graph, x: Var, p: usize, r: usize) -> Result<Var> {
    let [_, h, w] = maps::chw(g.shape(x))?;
    let m = margin(p, r)?;
    if r * p > h {
        return Err(Error::geometry("height", format!("RP={} exceeds height {h}", r * p)));
    }
    if r * p > w {
        return Err(Error::geometry("width", format!("RP={} exceeds width {w}", r * p)));
    }
    if m == 0 {
        return Ok(x);
    }
    let x = copy_shift_axis(g, x, 2, p, r)?;
    copy_shift_axis(g, x, 1, p, r)
}

fn copy_shift_axis(g: &mut Graph, x: Var, axis: usize, p: usize, r: usize) -> Result<Var> {
    let n = g.shape(x)[axis];
    let (near, far) = ((r + 1) * p / 2, r * p);
    let head = g.slice(x, axis, near, far)?;
    let tail = g.slice(x, axis, n - far, n - near)?;
    g.concat(&[head, x, tail], axis)
}
