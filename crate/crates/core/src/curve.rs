use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Averaged coherence `⟨Mx(2τ)⟩` on a grid of total echo times (μs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub times: Vec<f64>,
    pub mx: Vec<f64>,
    /// Variance of the mean per point (squared standard error); zeros when
    /// no sample spread is available.
    pub variance: Vec<f64>,
    pub n_disorder: usize,
    pub n_internal: usize,
    pub n_normal: usize,
}

impl DecayCurve {
    pub fn new(times: Vec<f64>, mx: Vec<f64>) -> Self {
        let variance = vec![0.0; mx.len()];
        Self {
            times,
            mx,
            variance,
            n_disorder: 1,
            n_internal: 1,
            n_normal: 1,
        }
    }

    /// A model curve `exp[−(t/T2)^p]`.
    pub fn stretched_exponential(times: &[f64], t2: f64, p: f64) -> Self {
        let mx = times.iter().map(|&t| (-(t / t2).powf(p)).exp()).collect();
        Self::new(times.to_vec(), mx)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn stderr(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    /// Pointwise mean of curves on a common grid, with the variance of the mean.
    pub fn mean_of(curves: &[Vec<f64>], times: &[f64]) -> Result<Self> {
        let n = curves.len();
        if n == 0 {
            return Err(Error::InsufficientData(0));
        }
        if curves.iter().any(|c| c.len() != times.len()) {
            return Err(Error::InvalidInput(
                "curves do not share the time grid".into(),
            ));
        }
        let mut mx = vec![0.0; times.len()];
        let mut variance = vec![0.0; times.len()];
        for t in 0..times.len() {
            let m = curves.iter().map(|c| c[t]).sum::<f64>() / n as f64;
            mx[t] = m;
            if n > 1 {
                let s2 = curves.iter().map(|c| (c[t] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                variance[t] = s2 / n as f64;
            }
        }
        Ok(Self {
            times: times.to_vec(),
            mx,
            variance,
            n_disorder: 1,
            n_internal: 1,
            n_normal: 1,
        })
    }

    /// Largest pointwise |Δ Mx| against another curve on the same grid.
    pub fn max_deviation(&self, other: &DecayCurve) -> f64 {
        self.mx
            .iter()
            .zip(&other.mx)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Time at which the curve first falls to `level`, by linear interpolation.
    pub fn crossing_time(&self, level: f64) -> Option<f64> {
        for i in 1..self.len() {
            let (a, b) = (self.mx[i - 1], self.mx[i]);
            if a >= level && b < level {
                let f = (a - level) / (a - b);
                return Some(self.times[i - 1] + f * (self.times[i] - self.times[i - 1]));
            }
        }
        None
    }

    /// CSV with header `time_us,mx,stderr`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time_us,mx,stderr")?;
        for ((t, m), s) in self.times.iter().zip(&self.mx).zip(self.stderr()) {
            writeln!(w, "{t:e},{m:e},{s:e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "time_us,mx,stderr" {
            return Err(Error::InvalidInput(format!(
                "unexpected curve header `{header}`"
            )));
        }
        let (mut times, mut mx, mut variance) = (vec![], vec![], vec![]);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidInput(format!("curve line {}: {e}", i + 2)))?;
            if cols.len() != 3 {
                return Err(Error::InvalidInput(format!(
                    "curve line {}: expected 3 columns",
                    i + 2
                )));
            }
            times.push(cols[0]);
            mx.push(cols[1]);
            variance.push(cols[2] * cols[2]);
        }
        Ok(Self {
            times,
            mx,
            variance,
            n_disorder: 1,
            n_internal: 1,
            n_normal: 1,
        })
    }
}

/// `[0, t_lo, …, t_hi]` with `n` geometrically spaced points after zero.
pub fn geometric_grid(t_lo: f64, t_hi: f64, n: usize) -> Vec<f64> {
    let mut g = vec![0.0];
    if n == 1 {
        g.push(t_lo);
    } else {
        let r = (t_hi / t_lo).ln() / (n - 1) as f64;
        g.extend((0..n).map(|i| t_lo * (r * i as f64).exp()));
    }
    g
}

/// Checks that a grid starts at 0 and increases strictly.
pub fn validate_grid(times: &[f64]) -> Result<()> {
    if times.first() != Some(&0.0) {
        return Err(Error::InvalidInput("time grid must start at 0".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput(
            "time grid must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}
