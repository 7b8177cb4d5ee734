//! SI-SDR and permutation-resolved evaluation reports.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::signal::dot;

/// Value reported for an error-free estimate.
pub const SI_SDR_CLAMP_DB: f64 = 100.0;

/// Largest source count handled by the exhaustive permutation search.
pub const MAX_SOURCES: usize = 4;

/// Scale-invariant SDR in dB, clamped at [`SI_SDR_CLAMP_DB`].
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check_len("si_sdr", reference.len(), est.len())?;
    let rr = dot(reference, reference);
    if !(rr > 0.0) {
        return Err(Error::MetricUndefined("SI-SDR against a silent reference"));
    }
    let a = dot(est, reference) / rr;
    let mut target = 0.0;
    let mut noise = 0.0;
    for (e, r) in est.iter().zip(reference) {
        let s = a * r;
        target += s * s;
        noise += (e - s) * (e - s);
    }
    if noise == 0.0 {
        return Ok(SI_SDR_CLAMP_DB);
    }
    Ok((10.0 * (target / noise).log10()).min(SI_SDR_CLAMP_DB))
}

/// One evaluated mixture. `si_sdr[k]` scores the estimate assigned to
/// reference `k`, which is `permutation[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub id: String,
    pub si_sdr: Vec<f64>,
    pub permutation: Vec<usize>,
    pub mean: f64,
    pub failure: bool,
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    fn rec(i: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for j in i..cur.len() {
            cur.swap(i, j);
            rec(i + 1, cur, out);
            cur.swap(i, j);
        }
    }
    rec(0, &mut cur, &mut out);
    out.sort();
    out
}

/// Scores `ests` against `refs` under the assignment maximizing mean SI-SDR.
pub fn evaluate(id: impl Into<String>, ests: &[Vec<f64>], refs: &[Vec<f64>]) -> Result<EvalEntry> {
    let k = refs.len();
    check_len("estimates vs references", k, ests.len())?;
    if k == 0 || k > MAX_SOURCES {
        return Err(Error::Config(format!("evaluation supports 1..={MAX_SOURCES} sources, got {k}")));
    }
    // table[r][e] = si_sdr(ests[e], refs[r])
    let mut table = vec![vec![0.0; k]; k];
    for (r, reference) in refs.iter().enumerate() {
        for (e, est) in ests.iter().enumerate() {
            table[r][e] = si_sdr(est, reference)?;
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(k) {
        let mean = perm.iter().enumerate().map(|(r, &e)| table[r][e]).sum::<f64>() / k as f64;
        if best.as_ref().is_none_or(|(m, _)| mean > *m) {
            best = Some((mean, perm));
        }
    }
    let (mean, permutation) = best.expect("at least one permutation");
    let si = permutation.iter().enumerate().map(|(r, &e)| table[r][e]).collect();
    Ok(EvalEntry {
        id: id.into(),
        si_sdr: si,
        permutation,
        mean,
        failure: mean < 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub entries: Vec<EvalEntry>,
    pub mean_si_sdr: f64,
    pub failure_rate: f64,
}

impl EvalReport {
    pub fn from_entries(entries: Vec<EvalEntry>) -> Self {
        let n = entries.len().max(1) as f64;
        let mean_si_sdr = entries.iter().map(|e| e.mean).sum::<f64>() / n;
        let failure_rate = entries.iter().filter(|e| e.failure).count() as f64 / n;
        Self {
            entries,
            mean_si_sdr,
            failure_rate,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// One row per mixture and reference source.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Schema(format!("eval csv: {e}"));
        wr.write_record(["mixture", "source", "estimate", "si_sdr", "mixture_mean", "failure"])
            .map_err(err)?;
        for e in &self.entries {
            for (k, (v, p)) in e.si_sdr.iter().zip(&e.permutation).enumerate() {
                wr.write_record([
                    e.id.clone(),
                    k.to_string(),
                    p.to_string(),
                    v.to_string(),
                    e.mean.to_string(),
                    e.failure.to_string(),
                ])
                .map_err(err)?;
            }
        }
        wr.flush().map_err(|e| Error::Schema(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn clamp_and_scale_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = rand_vec(256, &mut rng);
        assert_eq!(si_sdr(&r, &r).unwrap(), 100.0);
        let scaled: Vec<f64> = r.iter().map(|v| 3.7 * v).collect();
        assert_eq!(si_sdr(&scaled, &r).unwrap(), 100.0);
        assert!(matches!(si_sdr(&r, &[0.0; 256]), Err(Error::MetricUndefined(_))));
    }

    #[test]
    fn orthogonal_noise_of_equal_energy_is_zero_db() {
        let r = [1.0, 0.0, 1.0, 0.0];
        let est = [1.0, 1.0, 1.0, -1.0];
        assert!(si_sdr(&est, &r).unwrap().abs() < 1e-12);
    }

    #[test]
    fn scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = rand_vec(500, &mut rng);
        let e = rand_vec(500, &mut rng);
        let base = si_sdr(&e, &r).unwrap();
        for alpha in [0.25, 2.0, 1024.0] {
            let s: Vec<f64> = e.iter().map(|v| alpha * v).collect();
            assert_eq!(si_sdr(&s, &r).unwrap(), base);
        }
        for alpha in [0.3, 7.1, 1e-3] {
            let s: Vec<f64> = e.iter().map(|v| alpha * v).collect();
            assert!((si_sdr(&s, &r).unwrap() - base).abs() < 1e-10);
        }
    }

    #[test]
    fn swapped_estimates_resolve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let refs = vec![rand_vec(100, &mut rng), rand_vec(100, &mut rng)];
        let ests = vec![refs[1].clone(), refs[0].clone()];
        let e = evaluate("m", &ests, &refs).unwrap();
        assert_eq!(e.permutation, vec![1, 0]);
        assert_eq!(e.mean, 100.0);
        assert!(!e.failure);
    }

    #[test]
    fn permutation_invariance_for_three_sources() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let refs: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(64, &mut rng)).collect();
        let ests: Vec<Vec<f64>> = refs
            .iter()
            .map(|r| r.iter().map(|v| v + 0.3 * rng.random_range(-1.0..1.0)).collect())
            .collect();
        let base = evaluate("m", &ests, &refs).unwrap();
        for perm in permutations(3) {
            let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| ests[i].clone()).collect();
            let e = evaluate("m", &shuffled, &refs).unwrap();
            assert_eq!(e.si_sdr, base.si_sdr);
            assert_eq!(e.mean, base.mean);
            assert_eq!(e.failure, base.failure);
            let mapped: Vec<usize> = e.permutation.iter().map(|&p| perm[p]).collect();
            assert_eq!(mapped, base.permutation);
        }
    }

    #[test]
    fn noise_estimates_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let refs: Vec<Vec<f64>> = (0..2).map(|_| rand_vec(4000, &mut rng)).collect();
        let ests: Vec<Vec<f64>> = (0..2).map(|_| rand_vec(4000, &mut rng)).collect();
        let e = evaluate("noise", &ests, &refs).unwrap();
        assert!(e.mean < 0.0 && e.failure);
    }

    #[test]
    fn report_aggregates_and_serializes() {
        let mk = |id: &str, m: f64| EvalEntry {
            id: id.into(),
            si_sdr: vec![m, m],
            permutation: vec![0, 1],
            mean: m,
            failure: m < 0.0,
        };
        let r = EvalReport::from_entries(vec![mk("a", 4.0), mk("b", -1.0), mk("c", 0.0), mk("d", -0.5)]);
        assert_eq!(r.failure_rate, 0.5);
        assert_eq!(r.mean_si_sdr, 0.625);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 8);
        let back: EvalReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn too_many_sources_rejected() {
        let v = vec![vec![1.0; 4]; 5];
        assert!(evaluate("x", &v, &v).is_err());
    }
}
