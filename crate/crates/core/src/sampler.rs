//! Single-site Metropolis–Hastings with chain persistence and summaries.
//!
//! Parameters on a bounded interval get a symmetric uniform window. Positive
//! parameters get a window whose half-width grows with the current value and
//! is truncated at zero; the acceptance ratio then carries the Hastings
//! correction `len(win(x)) / len(win(x'))` and the reverse-move indicator.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Support {
    Interval { lo: f64, hi: f64 },
    Positive,
}

impl Support {
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Support::Interval { lo, hi } => x >= lo && x <= hi,
            Support::Positive => x > 0.0 && x.is_finite(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub support: Support,
    /// range for overdispersed starting values
    pub start: (f64, f64),
}

impl ParamSpec {
    pub fn unit(name: impl Into<String>) -> Self {
        Self::interval(name, 0.0, 1.0)
    }

    pub fn interval(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            support: Support::Interval { lo, hi },
            start: (lo, hi),
        }
    }

    pub fn positive(name: impl Into<String>, start_lo: f64, start_hi: f64) -> Self {
        Self {
            name: name.into(),
            support: Support::Positive,
            start: (start_lo, start_hi),
        }
    }

    fn default_width(&self) -> Width {
        match self.support {
            Support::Interval { lo, hi } => Width::Window(0.1 * (hi - lo)),
            Support::Positive => Width::Relative {
                relative: 0.3,
                absolute: 0.0,
            },
        }
    }
}

/// A log density over a fixed parameter vector.
pub trait Target: Sync {
    fn params(&self) -> Vec<ParamSpec>;
    /// `-∞` outside the support.
    fn log_density(&self, x: &[f64]) -> f64;
}

/// Adapter turning a closure into a [`Target`].
pub struct FnTarget<F> {
    pub params: Vec<ParamSpec>,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Target for FnTarget<F> {
    fn params(&self) -> Vec<ParamSpec> {
        self.params.clone()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Width {
    /// full width of a symmetric window
    Window(f64),
    /// half-width `absolute + relative · x`, truncated at 0
    Relative { relative: f64, absolute: f64 },
}

impl Width {
    fn window(&self, x: f64) -> (f64, f64) {
        match *self {
            Width::Window(w) => (x - 0.5 * w, x + 0.5 * w),
            Width::Relative { relative, absolute } => {
                let h = absolute + relative * x;
                ((x - h).max(0.0), x + h)
            }
        }
    }

    fn scaled(&self, a: f64, cap: f64) -> Self {
        match *self {
            Width::Window(w) => Width::Window((w * a).min(cap)),
            Width::Relative { relative, absolute } => Width::Relative {
                relative: (relative * a).min(cap),
                absolute: absolute * a,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    /// per-parameter proposal widths; defaults from each [`ParamSpec`] when `None`
    pub widths: Option<Vec<Width>>,
    pub seed: u64,
    pub n_chains: usize,
    /// adapt widths towards 20–50% acceptance during burn-in only
    pub tune: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_iter: 10_000,
            burn_in: 5_000,
            widths: None,
            seed: 1,
            n_chains: 3,
            tune: true,
        }
    }
}

impl ChainConfig {
    fn validate(&self, n_params: usize) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::invalid(format!(
                "burn-in {} must be below n_iter {}",
                self.burn_in, self.n_iter
            )));
        }
        if self.n_chains == 0 {
            return Err(Error::invalid("need at least one chain"));
        }
        if let Some(w) = &self.widths {
            if w.len() != n_params {
                return Err(Error::Dimension {
                    expected: n_params,
                    found: w.len(),
                    context: "proposal widths",
                });
            }
            let bad = w.iter().any(|w| match *w {
                Width::Window(v) => !(v > 0.0),
                Width::Relative { relative, absolute } => {
                    !(relative >= 0.0 && absolute >= 0.0 && relative + absolute > 0.0)
                }
            });
            if bad {
                return Err(Error::invalid("proposal widths must be positive"));
            }
        }
        Ok(())
    }
}

/// Current point of a chain and its log density.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub log_post: f64,
}

/// One sweep of single-site updates in parameter order. Returns the per-site
/// acceptance flags.
pub fn mh_step<T: Target + ?Sized, R: Rng>(
    state: &mut ChainState,
    target: &T,
    params: &[ParamSpec],
    widths: &[Width],
    rng: &mut R,
) -> Vec<bool> {
    let mut accepted = vec![false; params.len()];
    for (i, (spec, width)) in params.iter().zip(widths).enumerate() {
        let x = state.x[i];
        let (lo, hi) = width.window(x);
        let proposal = lo + (hi - lo) * rng.random::<f64>();
        let mut log_ratio = 0.0;
        if let Width::Relative { .. } = width {
            let (rlo, rhi) = width.window(proposal);
            if !(x >= rlo && x <= rhi) || rhi <= rlo {
                continue;
            }
            log_ratio = ((hi - lo) / (rhi - rlo)).ln();
        }
        if !spec.support.contains(proposal) {
            continue;
        }
        let old = std::mem::replace(&mut state.x[i], proposal);
        let lp = target.log_density(&state.x);
        let delta = lp - state.log_post + log_ratio;
        if lp.is_finite() && (delta >= 0.0 || rng.random::<f64>().ln() < delta) {
            state.log_post = lp;
            accepted[i] = true;
        } else {
            state.x[i] = old;
        }
    }
    accepted
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub names: Vec<String>,
    pub samples: Vec<Vec<f64>>,
    pub log_post: Vec<f64>,
    pub accepted: Vec<Vec<bool>>,
    pub widths: Vec<Width>,
    pub seed: u64,
    /// parameters whose post-burn-in acceptance fell below 1%
    pub low_acceptance: Vec<String>,
}

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn column(&self, p: usize, burn_in: usize) -> Vec<f64> {
        self.samples[burn_in.min(self.len())..].iter().map(|s| s[p]).collect()
    }

    /// Acceptance rate per parameter over iterations `from..`.
    pub fn acceptance(&self, from: usize) -> Vec<f64> {
        let rows = &self.accepted[from.min(self.accepted.len())..];
        (0..self.names.len())
            .map(|p| {
                if rows.is_empty() {
                    0.0
                } else {
                    rows.iter().filter(|a| a[p]).count() as f64 / rows.len() as f64
                }
            })
            .collect()
    }

    fn csv_header(names: &[String]) -> Vec<String> {
        let mut h = vec!["iter".to_string()];
        h.extend(names.iter().cloned());
        h.push("log_posterior".into());
        h.extend(names.iter().map(|n| format!("acc_{n}")));
        h
    }

    fn csv_row(iter: usize, x: &[f64], lp: f64, acc: &[bool]) -> Vec<String> {
        let mut row = vec![iter.to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        row.push(lp.to_string());
        row.extend(acc.iter().map(|&a| u8::from(a).to_string()));
        row
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::csv_header(&self.names))?;
        for (i, ((x, lp), acc)) in self.samples.iter().zip(&self.log_post).zip(&self.accepted).enumerate() {
            w.write_record(Self::csv_row(i, x, *lp, acc))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trace written by [`ChainTrace::write_csv`] or by incremental
    /// persistence in [`run_chains`].
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header = rdr.headers()?.clone();
        let p = (header.len() - 2) / 2;
        let names: Vec<String> = header.iter().skip(1).take(p).map(str::to_string).collect();
        let mut trace = ChainTrace {
            names,
            samples: Vec::new(),
            log_post: Vec::new(),
            accepted: Vec::new(),
            widths: Vec::new(),
            seed: 0,
            low_acceptance: Vec::new(),
        };
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::invalid(format!("bad trace value {s:?}: {e}")))
        };
        for rec in rdr.records() {
            let rec = rec?;
            trace
                .samples
                .push((1..=p).map(|i| parse(&rec[i])).collect::<Result<_>>()?);
            trace.log_post.push(parse(&rec[p + 1])?);
            trace
                .accepted
                .push((p + 2..2 * p + 2).map(|i| &rec[i] == "1").collect());
        }
        Ok(trace)
    }
}

/// Random stream for chain `index`.
pub fn chain_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1000 + index as u64);
    rng
}

fn draw_start<T: Target + ?Sized>(target: &T, params: &[ParamSpec], rng: &mut ChaCha8Rng) -> Result<ChainState> {
    for _ in 0..1000 {
        let x: Vec<f64> = params
            .iter()
            .map(|p| p.start.0 + (p.start.1 - p.start.0) * rng.random::<f64>())
            .collect();
        let lp = target.log_density(&x);
        if lp.is_finite() {
            return Ok(ChainState { x, log_post: lp });
        }
    }
    Err(Error::domain("no starting point with finite log density in 1000 draws"))
}

const TUNE_EVERY: usize = 100;

/// Runs one chain, writing each iteration to `trace_path` when given.
pub fn run_chain<T: Target + ?Sized>(
    target: &T,
    config: &ChainConfig,
    index: usize,
    trace_path: Option<&Path>,
) -> Result<ChainTrace> {
    let params = target.params();
    config.validate(params.len())?;
    let mut rng = chain_rng(config.seed, index);
    let mut widths = config
        .widths
        .clone()
        .unwrap_or_else(|| params.iter().map(ParamSpec::default_width).collect());
    let caps: Vec<f64> = params
        .iter()
        .map(|p| match p.support {
            Support::Interval { lo, hi } => hi - lo,
            Support::Positive => 5.0,
        })
        .collect();
    let mut state = draw_start(target, &params, &mut rng)?;
    let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
    let mut writer = match trace_path {
        Some(path) => {
            let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
            w.write_record(ChainTrace::csv_header(&names))?;
            Some(w)
        }
        None => None,
    };
    let mut trace = ChainTrace {
        names,
        samples: Vec::with_capacity(config.n_iter),
        log_post: Vec::with_capacity(config.n_iter),
        accepted: Vec::with_capacity(config.n_iter),
        widths: Vec::new(),
        seed: config.seed,
        low_acceptance: Vec::new(),
    };
    let mut window_acc = vec![0usize; params.len()];
    for iter in 0..config.n_iter {
        let acc = mh_step(&mut state, target, &params, &widths, &mut rng);
        if config.tune && iter < config.burn_in {
            for (c, &a) in window_acc.iter_mut().zip(&acc) {
                *c += usize::from(a);
            }
            if (iter + 1) % TUNE_EVERY == 0 {
                for (p, c) in window_acc.iter_mut().enumerate() {
                    let rate = *c as f64 / TUNE_EVERY as f64;
                    if !(0.2..=0.5).contains(&rate) {
                        widths[p] = widths[p].scaled((rate / 0.3).clamp(0.2, 3.0), caps[p]);
                    }
                    *c = 0;
                }
            }
        }
        if let Some(w) = writer.as_mut() {
            w.write_record(ChainTrace::csv_row(iter, &state.x, state.log_post, &acc))?;
        }
        trace.samples.push(state.x.clone());
        trace.log_post.push(state.log_post);
        trace.accepted.push(acc);
    }
    if let Some(mut w) = writer {
        w.flush()?;
    }
    for (name, rate) in trace.names.iter().zip(trace.acceptance(config.burn_in)) {
        if rate < 0.01 {
            log::warn!("chain {index}: acceptance for {name} is {:.4} after burn-in", rate);
            trace.low_acceptance.push(name.clone());
        }
    }
    trace.widths = widths;
    Ok(trace)
}

/// Runs `config.n_chains` independent chains in parallel. With `trace_dir`,
/// chain `i` is persisted to `trace_dir/chain_{i}.csv` as it runs.
pub fn run_chains<T: Target + ?Sized>(
    target: &T,
    config: &ChainConfig,
    trace_dir: Option<&Path>,
) -> Result<Vec<ChainTrace>> {
    if let Some(dir) = trace_dir {
        std::fs::create_dir_all(dir)?;
    }
    (0..config.n_chains)
        .into_par_iter()
        .map(|i| {
            let path: Option<PathBuf> = trace_dir.map(|d| d.join(format!("chain_{i}.csv")));
            run_chain(target, config, i, path.as_deref())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub mode: f64,
    /// value at the recorded log-posterior maximum
    pub argmax: f64,
    pub acceptance: f64,
    pub rhat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub params: Vec<ParamSummary>,
    pub n_samples: usize,
    pub burn_in: usize,
    pub max_log_posterior: f64,
}

impl PosteriorSummary {
    pub fn get(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn means(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.mean).collect()
    }

    pub fn sds(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.sd).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    // shifted by the first sample so constant traces are reproduced exactly
    let mean = v[0] + v.iter().map(|x| x - v[0]).sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Mean of the samples falling in the fullest of 50 equal bins spanning
/// `range`.
pub fn histogram_mode(v: &[f64], range: (f64, f64)) -> f64 {
    const BINS: usize = 50;
    let (lo, hi) = range;
    if !(hi > lo) {
        return mean_sd(v).0;
    }
    let bin = |x: f64| (((x - lo) / (hi - lo) * BINS as f64).floor() as isize).clamp(0, BINS as isize - 1) as usize;
    let mut counts = [0usize; BINS];
    for &x in v {
        counts[bin(x)] += 1;
    }
    let best = (0..BINS).max_by_key(|&b| (counts[b], std::cmp::Reverse(b))).unwrap();
    let in_bin: Vec<f64> = v.iter().copied().filter(|&x| bin(x) == best).collect();
    mean_sd(&in_bin).0
}

/// Pooled post-burn-in summaries across chains.
pub fn summarize(traces: &[ChainTrace], burn_in: usize) -> Result<PosteriorSummary> {
    let first = traces
        .first()
        .ok_or_else(|| Error::invalid("no traces to summarize"))?;
    let n_samples: usize = traces.iter().map(|t| t.len().saturating_sub(burn_in)).sum();
    if n_samples == 0 {
        return Err(Error::invalid("no samples after burn-in"));
    }
    let mut best = (f64::NEG_INFINITY, &first.samples[0]);
    for t in traces {
        for (lp, x) in t.log_post.iter().zip(&t.samples).skip(burn_in) {
            if *lp > best.0 {
                best = (*lp, x);
            }
        }
    }
    let rhat = if traces.len() >= 2 {
        Some(gelman_rubin(traces, burn_in)?)
    } else {
        None
    };
    let params = first
        .names
        .iter()
        .enumerate()
        .map(|(p, name)| {
            let pooled: Vec<f64> = traces.iter().flat_map(|t| t.column(p, burn_in)).collect();
            let (mean, sd) = mean_sd(&pooled);
            let range = pooled
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            let acc: f64 = traces.iter().map(|t| t.acceptance(burn_in)[p]).sum::<f64>() / traces.len() as f64;
            ParamSummary {
                name: name.clone(),
                mean,
                sd,
                mode: histogram_mode(&pooled, range),
                argmax: best.1[p],
                acceptance: acc,
                rhat: rhat.as_ref().map(|r| r[p]),
            }
        })
        .collect();
    Ok(PosteriorSummary {
        params,
        n_samples,
        burn_in,
        max_log_posterior: best.0,
    })
}

/// Potential scale reduction `sqrt((W + B/n) / W)` per parameter.
pub fn gelman_rubin(traces: &[ChainTrace], burn_in: usize) -> Result<Vec<f64>> {
    if traces.len() < 2 {
        return Err(Error::invalid("Gelman–Rubin needs at least two chains"));
    }
    let n = traces.iter().map(|t| t.len().saturating_sub(burn_in)).min().unwrap_or(0);
    if n < 2 {
        return Err(Error::invalid("Gelman–Rubin needs two or more samples per chain"));
    }
    let m = traces.len() as f64;
    Ok((0..traces[0].names.len())
        .map(|p| {
            let stats: Vec<(f64, f64)> = traces
                .iter()
                .map(|t| {
                    let col = t.column(p, burn_in);
                    let (mu, sd) = mean_sd(&col[..n]);
                    (mu, sd * sd)
                })
                .collect();
            let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
            let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
            let b_over_n = stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>() / (m - 1.0);
            if w == 0.0 {
                return if b_over_n == 0.0 { 1.0 } else { f64::INFINITY };
            }
            ((w + b_over_n) / w).sqrt()
        })
        .collect())
}
