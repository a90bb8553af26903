//! Forecast verification: point errors, CRPS, spectra, normalisation and
//! extreme-event sample selection.

use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::series::ForecastSeries;

fn check_aligned(pred: &[Tensor], truth: &[Tensor]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::dim(format!(
            "{} predicted states vs {} true states",
            pred.len(),
            truth.len()
        )));
    }
    for (t, (p, y)) in pred.iter().zip(truth).enumerate() {
        if p.shape() != y.shape() {
            return Err(Error::dim(format!(
                "state {t}: shape {:?} vs {:?}",
                p.shape(),
                y.shape()
            )));
        }
    }
    if pred.iter().all(|p| p.is_empty()) {
        return Err(Error::dim("no values to compare"));
    }
    Ok(())
}

/// Root mean squared residual over every state, cell and channel.
pub fn rmse(pred: &[Tensor], truth: &[Tensor]) -> Result<f64> {
    check_aligned(pred, truth)?;
    let (mut s, mut n) = (0.0, 0usize);
    for (p, y) in pred.iter().zip(truth) {
        for (a, b) in p.data().iter().zip(y.data()) {
            s += (a - b) * (a - b);
        }
        n += p.len();
    }
    Ok((s / n as f64).sqrt())
}

/// Mean absolute residual over every state, cell and channel.
pub fn mae(pred: &[Tensor], truth: &[Tensor]) -> Result<f64> {
    check_aligned(pred, truth)?;
    let (mut s, mut n) = (0.0, 0usize);
    for (p, y) in pred.iter().zip(truth) {
        for (a, b) in p.data().iter().zip(y.data()) {
            s += (a - b).abs();
        }
        n += p.len();
    }
    Ok(s / n as f64)
}

/// Exact CRPS of the empirical step CDF of `members` at observation `y`:
/// `mean|X - y| - 0.5 * mean_{i,j} |X_i - X_j|`.
pub fn crps_empirical(members: &[f64], y: f64) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::contract("CRPS needs at least one member"));
    }
    if !y.is_finite() || members.iter().any(|m| !m.is_finite()) {
        return Err(Error::contract("CRPS inputs must be finite"));
    }
    let n = members.len() as f64;
    let skill = members.iter().map(|m| (m - y).abs()).sum::<f64>() / n;
    if members.len() == 1 {
        return Ok(skill);
    }
    // sum over ordered pairs via sorted order: 2 * sum_i (2i - n + 1) x_(i)
    let mut sorted = members.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pairs: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - n + 1.0) * x)
        .sum::<f64>()
        * 2.0;
    Ok(skill - 0.5 * pairs / (n * n))
}

/// `P(w_k) = |sum_t y_t exp(-i w_k t)|^2 / T` at `w_k = 2 pi k / T`.
pub fn psd(series: &[f64]) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::dim("power spectrum of an empty series"));
    }
    let t = series.len();
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(t).process(&mut buf);
    Ok(buf.iter().map(|c| c.norm_sqr() / t as f64).collect())
}

/// Spectrum along longitude of one channel, averaged over latitude rows and
/// over every state in `states` (each `[n_lat, n_lon, C]`).
pub fn gridded_psd(states: &[Tensor], channel: usize) -> Result<Vec<f64>> {
    let first = states
        .first()
        .ok_or_else(|| Error::dim("power spectrum of an empty series"))?;
    let &[n_lat, n_lon, c] = first.shape() else {
        return Err(Error::dim(format!(
            "state shape {:?} is not [lat, lon, C]",
            first.shape()
        )));
    };
    if channel >= c {
        return Err(Error::dim(format!(
            "channel {channel} out of range for C = {c}"
        )));
    }
    let mut acc = vec![0.0; n_lon];
    let mut row = vec![0.0; n_lon];
    for s in states {
        if s.shape() != first.shape() {
            return Err(Error::dim("states differ in shape"));
        }
        for r in 0..n_lat {
            for (col, v) in row.iter_mut().enumerate() {
                *v = s.data()[(r * n_lon + col) * c + channel];
            }
            for (a, p) in acc.iter_mut().zip(psd(&row)?) {
                *a += p;
            }
        }
    }
    let count = (states.len() * n_lat) as f64;
    Ok(acc.into_iter().map(|a| a / count).collect())
}

/// Two-column `wavenumber,power` text.
pub fn psd_table(power: &[f64]) -> String {
    let mut s = String::from("wavenumber,power\n");
    for (k, p) in power.iter().enumerate() {
        let _ = writeln!(s, "{k},{p:?}");
    }
    s
}

/// Per-channel standardisation statistics (population std).
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: &Tensor) -> Result<usize> {
        let c = *x.shape().last().unwrap_or(&0);
        if c != self.channels() {
            return Err(Error::dim(format!(
                "tensor has {c} channels, statistics have {}",
                self.channels()
            )));
        }
        Ok(c)
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.check(x)?;
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[i % c]) / self.std[i % c];
        }
        Ok(out)
    }

    pub fn invert(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.check(x)?;
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * self.std[i % c] + self.mean[i % c];
        }
        Ok(out)
    }
}

/// Standardise each channel (last axis) with statistics of `train`.
/// Apply the returned stats to evaluation splits.
pub fn znormalize(train: &[Tensor]) -> Result<(Vec<Tensor>, NormStats)> {
    let first = train
        .first()
        .ok_or_else(|| Error::dim("cannot normalise an empty dataset"))?;
    let c = *first
        .shape()
        .last()
        .ok_or_else(|| Error::dim("scalar tensor"))?;
    let mut sum = vec![0.0; c];
    let mut count = 0usize;
    for x in train {
        if x.shape() != first.shape() {
            return Err(Error::dim("dataset states differ in shape"));
        }
        for (i, v) in x.data().iter().enumerate() {
            sum[i % c] += v;
        }
        count += x.len() / c;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; c];
    for x in train {
        for (i, v) in x.data().iter().enumerate() {
            let d = v - mean[i % c];
            sq[i % c] += d * d;
        }
    }
    let mut std = Vec::with_capacity(c);
    for (ch, s) in sq.iter().enumerate() {
        let sd = (s / count as f64).sqrt();
        if !(sd > 0.0) {
            return Err(Error::DegenerateChannel { channel: ch });
        }
        std.push(sd);
    }
    let stats = NormStats { mean, std };
    let out = train
        .iter()
        .map(|x| stats.apply(x))
        .collect::<Result<_>>()?;
    Ok((out, stats))
}

/// Width of the rank window around the quantile, as a fraction of samples.
pub const EXTREME_RANK_TOL: f64 = 0.01;

fn lower_tail_window(series: &[f64], q: f64, tol: f64) -> Result<Vec<usize>> {
    let n = series.len();
    let width = (tol * n as f64).floor() as usize;
    if width == 0 {
        return Err(Error::Selection(format!(
            "{n} samples cannot hold a {:.1}% rank window",
            tol * 100.0
        )));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    // 1-based nearest rank; the guard absorbs rounding in 1 - q
    let rank = ((q * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut start = rank.saturating_sub((width - 1) / 2).max(1);
    if start + width - 1 > n {
        start = n + 1 - width;
    }
    let (lo, hi) = (sorted[start - 1], sorted[start + width - 2]);
    Ok((0..n)
        .filter(|&i| series[i] >= lo && series[i] <= hi)
        .collect())
}

/// Indices of `series` within the nearest-rank window around quantile `q`.
/// Ranks are counted from the nearer tail, so selecting `q` on `s` equals
/// selecting `1 - q` on `-s`. Values tied with the window edges are included.
pub fn quantile_window(series: &[f64], q: f64, tol: f64) -> Result<Vec<usize>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::config(format!("quantile {q} must lie in (0, 1)")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Selection("series contains non-finite values".into()));
    }
    if q <= 0.5 {
        lower_tail_window(series, q, tol)
    } else {
        let neg: Vec<f64> = series.iter().map(|v| -v).collect();
        lower_tail_window(&neg, 1.0 - q, tol)
    }
}

/// Spatial mean of one channel for every state.
pub fn spatial_mean_series(states: &[Tensor], channel: usize) -> Result<Vec<f64>> {
    states
        .iter()
        .map(|s| {
            let c = *s.shape().last().unwrap_or(&0);
            if channel >= c {
                return Err(Error::dim(format!(
                    "channel {channel} out of range for C = {c}"
                )));
            }
            let vals = s.data().iter().skip(channel).step_by(c);
            Ok(vals.sum::<f64>() / (s.len() / c) as f64)
        })
        .collect()
}

/// Per-channel index sets of states whose spatial mean sits at quantile `q`.
pub fn select_quantile_extremes(states: &[Tensor], q: f64) -> Result<Vec<Vec<usize>>> {
    let c = states
        .first()
        .and_then(|s| s.shape().last().copied())
        .ok_or_else(|| Error::Selection("empty dataset".into()))?;
    (0..c)
        .map(|ch| quantile_window(&spatial_mean_series(states, ch)?, q, EXTREME_RANK_TOL))
        .collect()
}

/// One initialisation's forecast: the point trajectory (the ensemble mean
/// when members exist) and optional member trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct InitForecast {
    pub series: ForecastSeries,
    pub members: Vec<ForecastSeries>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub lead: usize,
    pub lead_hours: f64,
    pub channel: usize,
    pub rmse: f64,
    pub mae: f64,
    pub crps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub n_inits: usize,
    pub norm: Option<NormStats>,
}

impl EvalReport {
    /// Comma-separated, one line per lead x variable x metric.
    pub fn to_table(&self) -> String {
        let mut s = String::from("lead,lead_hours,variable,metric,value\n");
        for r in &self.rows {
            for (name, v) in [("rmse", r.rmse), ("mae", r.mae), ("crps", r.crps)] {
                let _ = writeln!(
                    s,
                    "{},{:?},{},{},{:?}",
                    r.lead, r.lead_hours, r.channel, name, v
                );
            }
        }
        let _ = writeln!(s, "# initialisations = {}", self.n_inits);
        if let Some(n) = &self.norm {
            for (c, (m, sd)) in n.mean.iter().zip(&n.std).enumerate() {
                let _ = writeln!(s, "# channel {c}: mean = {m:?}, std = {sd:?}");
            }
        }
        s
    }
}

/// Average per-initialisation scores at each lead. `truth[i]` is the state at
/// global time `truth_start + i`.
pub fn evaluate(
    forecasts: &[InitForecast],
    truth: &[Tensor],
    truth_start: usize,
    leads: &[usize],
) -> Result<EvalReport> {
    if forecasts.is_empty() {
        return Err(Error::contract("no forecasts to evaluate"));
    }
    let channels = *truth
        .first()
        .and_then(|t| t.shape().last())
        .ok_or_else(|| Error::contract("no truth states"))?;
    let mut rows = Vec::new();
    for &lead in leads {
        let mut acc = vec![[0.0f64; 3]; channels];
        for fc in forecasts {
            let missing = || {
                Error::contract(format!(
                    "lead {lead} exceeds the forecast from init {}",
                    fc.series.start_index
                ))
            };
            let pred = fc.series.at_lead(lead).ok_or_else(missing)?;
            let members = fc
                .members
                .iter()
                .map(|m| m.at_lead(lead).ok_or_else(missing))
                .collect::<Result<Vec<_>>>()?;
            let t = (fc.series.start_index + lead)
                .checked_sub(truth_start)
                .and_then(|i| truth.get(i))
                .ok_or_else(|| {
                    Error::contract(format!(
                        "no truth for time {}",
                        fc.series.start_index + lead
                    ))
                })?;
            if pred.shape() != t.shape() || members.iter().any(|m| m.shape() != t.shape()) {
                return Err(Error::dim("forecast and truth shapes differ"));
            }
            let cells = t.len() / channels;
            let mut buf = vec![0.0; members.len().max(1)];
            for (ch, a) in acc.iter_mut().enumerate() {
                let (mut sq, mut ab, mut cr) = (0.0, 0.0, 0.0);
                for cell in 0..cells {
                    let i = cell * channels + ch;
                    let (p, y) = (pred.data()[i], t.data()[i]);
                    sq += (p - y) * (p - y);
                    ab += (p - y).abs();
                    if members.is_empty() {
                        buf[0] = p;
                    } else {
                        for (b, m) in buf.iter_mut().zip(&members) {
                            *b = m.data()[i];
                        }
                    }
                    cr += crps_empirical(&buf, y)?;
                }
                let n = cells as f64;
                a[0] += (sq / n).sqrt();
                a[1] += ab / n;
                a[2] += cr / n;
            }
        }
        let n = forecasts.len() as f64;
        let step_hours = forecasts[0].series.step_hours;
        for (ch, a) in acc.iter().enumerate() {
            rows.push(EvalRow {
                lead,
                lead_hours: lead as f64 * step_hours,
                channel: ch,
                rmse: a[0] / n,
                mae: a[1] / n,
                crps: a[2] / n,
            });
        }
    }
    Ok(EvalReport {
        rows,
        n_inits: forecasts.len(),
        norm: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Oracles

    fn naive_dft_power(y: &[f64]) -> Vec<f64> {
        let t = y.len();
        (0..t)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, v) in y.iter().enumerate() {
                    let w = -2.0 * std::f64::consts::PI * (k * n) as f64 / t as f64;
                    re += v * w.cos();
                    im += v * w.sin();
                }
                (re * re + im * im) / t as f64
            })
            .collect()
    }

    fn crps_pairwise(members: &[f64], y: f64) -> f64 {
        let n = members.len() as f64;
        let a: f64 = members.iter().map(|m| (m - y).abs()).sum::<f64>() / n;
        let mut b = 0.0;
        for x in members {
            for z in members {
                b += (x - z).abs();
            }
        }
        a - 0.5 * b / (n * n)
    }

    fn crps_integral(members: &[f64], y: f64) -> f64 {
        // piecewise-constant integrand between sorted breakpoints
        let mut pts: Vec<f64> = members.to_vec();
        pts.push(y);
        pts.sort_by(f64::total_cmp);
        let n = members.len() as f64;
        let mut total = 0.0;
        for w in pts.windows(2) {
            let x = 0.5 * (w[0] + w[1]);
            let f = members.iter().filter(|&&m| m <= x).count() as f64 / n;
            let h = if y <= x { 1.0 } else { 0.0 };
            total += (f - h) * (f - h) * (w[1] - w[0]);
        }
        total
    }

    fn sorted_oracle(series: &[f64], q: f64) -> Vec<usize> {
        // rank from the nearer tail, window of floor(n / 100) ranks
        let n = series.len();
        let mut idx: Vec<usize> = (0..n).collect();
        let w = n / 100;
        let lower = q <= 0.5;
        idx.sort_by(|&a, &b| {
            let o = series[a].total_cmp(&series[b]);
            if lower {
                o
            } else {
                o.reverse()
            }
        });
        let qq = if lower { q } else { 1.0 - q };
        let r = ((qq * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
        let mut s = r.saturating_sub((w - 1) / 2).max(1);
        if s + w - 1 > n {
            s = n + 1 - w;
        }
        let edge = [series[idx[s - 1]], series[idx[s + w - 2]]];
        let (lo, hi) = (edge[0].min(edge[1]), edge[0].max(edge[1]));
        let mut out: Vec<usize> = (0..n)
            .filter(|&i| series[i] >= lo && series[i] <= hi)
            .collect();
        out.sort();
        out
    }

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn rmse_mae_examples() {
        let (p, y) = ([t(&[1.0, 2.0])], [t(&[0.0, 0.0])]);
        assert!((rmse(&p, &y).unwrap() - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mae(&p, &y).unwrap(), 1.5);
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        let shift = |x: &Tensor| x.map(|v| v + 7.0);
        let a = rmse(&p, &y).unwrap();
        let b = rmse(&[shift(&p[0])], &[shift(&y[0])]).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(matches!(rmse(&p, &[t(&[0.0])]), Err(Error::Dimension(_))));
        assert!(matches!(mae(&p, &[]), Err(Error::Dimension(_))));
    }

    #[test]
    fn crps_examples_and_oracles() {
        assert!((crps_empirical(&[-1.0, 1.0], 0.0).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(crps_empirical(&[2.5], -1.0).unwrap(), 3.5);
        assert_eq!(crps_empirical(&[3.0, 3.0, 3.0], 3.0).unwrap(), 0.0);
        assert!(matches!(crps_empirical(&[], 0.0), Err(Error::Contract(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(1..9);
            let m: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = rng.random_range(-2.0..2.0);
            let c = crps_empirical(&m, y).unwrap();
            assert!((c - crps_pairwise(&m, y)).abs() < 1e-12);
            assert!((c - crps_integral(&m, y)).abs() < 1e-12);
            let worst = m.iter().map(|v| (v - y).abs()).fold(0.0, f64::max);
            assert!(c >= -1e-15 && c <= worst + 1e-15);
        }
    }

    #[test]
    fn psd_examples_and_parseval() {
        assert_eq!(psd(&[1.0; 4]).unwrap(), vec![4.0, 0.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for len in [1usize, 2, 7, 16, 33] {
            let y: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = psd(&y).unwrap();
            for (a, b) in p.iter().zip(naive_dft_power(&y)) {
                assert!((a - b).abs() < 1e-10);
            }
            let e: f64 = y.iter().map(|v| v * v).sum();
            assert!((p.iter().sum::<f64>() - e).abs() <= 1e-10 * e);
        }
        let k0 = 3;
        let y: Vec<f64> = (0..16)
            .map(|n| (2.0 * std::f64::consts::PI * (k0 * n) as f64 / 16.0).cos())
            .collect();
        let p = psd(&y).unwrap();
        for (k, v) in p.iter().enumerate() {
            if k == k0 || k == 16 - k0 {
                assert!((v - 4.0).abs() < 1e-10);
            } else {
                assert!(v.abs() < 1e-10);
            }
        }
        assert!(psd(&[]).is_err());
    }

    #[test]
    fn gridded_psd_averages_rows_and_time() {
        let row = [1.0, -1.0, 1.0, -1.0];
        let a = Tensor::new(vec![2, 4, 1], row.iter().chain(&row).copied().collect()).unwrap();
        let b = Tensor::zeros(&[2, 4, 1]);
        let p = gridded_psd(&[a, b], 0).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 2.0, 0.0]);
        assert!(gridded_psd(&[Tensor::zeros(&[2, 4, 1])], 1).is_err());
    }

    #[test]
    fn znormalize_examples() {
        let x = [t(&[2.0]), t(&[4.0])];
        let (n, s) = znormalize(&x).unwrap();
        assert_eq!((s.mean[0], s.std[0]), (3.0, 1.0));
        assert_eq!((n[0].data()[0], n[1].data()[0]), (-1.0, 1.0));
        let (again, s2) = znormalize(&n).unwrap();
        assert_eq!(again, n);
        assert_eq!((s2.mean[0], s2.std[0]), (0.0, 1.0));
        let two = Tensor::new(vec![1, 2], vec![1.0, 5.0]).unwrap();
        let err = znormalize(&[two.clone(), two]).unwrap_err();
        assert!(matches!(err, Error::DegenerateChannel { channel: 0 }));
        assert!(err.to_string().contains("channel 0"));
        assert_eq!(s.invert(&n[1]).unwrap().data()[0], 4.0);
    }

    #[test]
    fn quantile_examples() {
        let s: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(
            quantile_window(&s, 0.01, EXTREME_RANK_TOL).unwrap(),
            vec![0]
        );
        assert_eq!(
            quantile_window(&s, 0.99, EXTREME_RANK_TOL).unwrap(),
            vec![99]
        );
        let sym: Vec<f64> = (-50..=50).map(f64::from).collect();
        assert_eq!(
            quantile_window(&sym, 0.5, EXTREME_RANK_TOL).unwrap(),
            vec![50]
        );
        assert!(matches!(
            quantile_window(&s[..50], 0.01, EXTREME_RANK_TOL),
            Err(Error::Selection(_))
        ));
        assert!(quantile_window(&s, 1.0, EXTREME_RANK_TOL).is_err());
    }

    #[test]
    fn quantile_matches_sort_oracle_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [100usize, 150, 300, 1000] {
            let s: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(-3.0..3.0f64) * 4.0).round())
                .collect();
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            for q in [0.01, 0.1, 0.5, 0.9, 0.99] {
                let got = quantile_window(&s, q, EXTREME_RANK_TOL).unwrap();
                assert_eq!(got, sorted_oracle(&s, q), "n={n} q={q}");
                if q != 0.5 {
                    // at the median, even n has distinct lower and upper picks
                    assert_eq!(
                        got,
                        quantile_window(&neg, 1.0 - q, EXTREME_RANK_TOL).unwrap()
                    );
                }
            }
        }
    }

    fn series(states: Vec<Tensor>, start: usize) -> ForecastSeries {
        ForecastSeries::new(states, start, 6.0).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::new(
            vec![2, 4, 2],
            (0..16).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn evaluate_perfect_and_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth: Vec<Tensor> = (0..8).map(|_| random_state(&mut rng)).collect();
        let perfect: Vec<InitForecast> = (0..3)
            .map(|i| InitForecast {
                series: series(truth[i + 1..i + 4].to_vec(), i),
                members: vec![],
            })
            .collect();
        let r = evaluate(&perfect, &truth, 0, &[1, 3]).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert!(r
            .rows
            .iter()
            .all(|row| row.rmse == 0.0 && row.mae == 0.0 && row.crps == 0.0));

        let noisy: Vec<InitForecast> = (0..3)
            .map(|i| InitForecast {
                series: series((0..3).map(|_| random_state(&mut rng)).collect(), i),
                members: vec![],
            })
            .collect();
        let r = evaluate(&noisy, &truth, 0, &[1, 2, 3]).unwrap();
        for row in &r.rows {
            assert!(row.rmse >= row.mae && row.mae > 0.0);
            assert_eq!(row.crps, row.mae);
        }
        assert!(evaluate(&noisy, &truth, 0, &[4]).is_err());
        assert_eq!(
            r.to_table().lines().filter(|l| !l.starts_with('#')).count(),
            1 + 9 * 2
        );
    }

    #[test]
    fn evaluate_uses_members_for_crps() {
        let y = Tensor::zeros(&[1, 2, 1]);
        let m = |v: f64| series(vec![Tensor::full(&[1, 2, 1], v)], 0);
        let fc = InitForecast {
            series: m(0.0),
            members: vec![m(-1.0), m(1.0)],
        };
        let r = evaluate(&[fc], &[y.clone(), y], 0, &[1]).unwrap();
        assert!((r.rows[0].crps - 0.5).abs() < 1e-12);
        assert_eq!(r.rows[0].mae, 0.0);
    }
}
