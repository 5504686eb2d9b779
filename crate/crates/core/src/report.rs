//! Summary CSV and the human-readable digest.
//!
//! `summary.csv` has one row per run with the columns
//! `dol, sok, p_err, seed, topic, final_gs10, final_gs20, final_gs30,
//! mean_gs30, mean_ap_final, n_skips, paired_baseline_gs30`.
//! `mean_gs30` averages the group score over every event of the session.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::experiment::{PolicyKey, RunFailure};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dol: String,
    pub sok: String,
    pub p_err: String,
    pub seed: u64,
    pub topic: String,
    pub final_gs10: usize,
    pub final_gs20: usize,
    pub final_gs30: usize,
    pub mean_gs30: f64,
    pub mean_ap_final: f64,
    pub n_skips: usize,
    pub paired_baseline_gs30: Option<usize>,
}

impl SummaryRow {
    pub fn key(&self) -> Option<PolicyKey> {
        Some(PolicyKey::new(self.dol.parse().ok()?, self.sok.parse().ok()?, self.p_err.clone()))
    }

    fn matches(&self, key: &PolicyKey) -> bool {
        self.dol == key.dol.as_str() && self.sok == key.sok.as_str() && self.p_err == key.p_err
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<RunFailure>,
}

impl Summary {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        if self.rows.is_empty() {
            out.write_record(HEADER)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<SummaryRow>, _>>()?;
        Ok(Self { rows, failures: Vec::new() })
    }

    pub fn write_failures<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for f in &self.failures {
            out.serialize(f)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Distinct grid points in order of first appearance.
    pub fn policies(&self) -> Vec<PolicyKey> {
        let mut out: Vec<PolicyKey> = Vec::new();
        for key in self.rows.iter().filter_map(SummaryRow::key) {
            if !out.contains(&key) {
                out.push(key);
            }
        }
        out
    }

    pub fn rows_for<'a>(&'a self, key: &'a PolicyKey) -> impl Iterator<Item = &'a SummaryRow> + 'a {
        self.rows.iter().filter(move |r| r.matches(key))
    }
}

pub const HEADER: [&str; 12] = [
    "dol",
    "sok",
    "p_err",
    "seed",
    "topic",
    "final_gs10",
    "final_gs20",
    "final_gs30",
    "mean_gs30",
    "mean_ap_final",
    "n_skips",
    "paired_baseline_gs30",
];

/// Paired comparison of final group score@30 on matching (seed, topic).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Paired {
    pub n: usize,
    pub mean_diff: f64,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

impl Paired {
    pub fn win_rate(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.wins as f64 / self.n as f64
        }
    }
}

/// Compares `a` against `b` over every (seed, topic) both ran.
pub fn paired(summary: &Summary, a: &PolicyKey, b: &PolicyKey) -> Paired {
    let other: BTreeMap<(u64, &str), usize> =
        summary.rows_for(b).map(|r| ((r.seed, r.topic.as_str()), r.final_gs30)).collect();
    let mut p = Paired::default();
    let mut total = 0i64;
    for r in summary.rows_for(a) {
        let Some(&base) = other.get(&(r.seed, r.topic.as_str())) else { continue };
        let d = r.final_gs30 as i64 - base as i64;
        total += d;
        p.n += 1;
        match d.signum() {
            1 => p.wins += 1,
            0 => p.ties += 1,
            _ => p.losses += 1,
        }
    }
    if p.n > 0 {
        p.mean_diff = total as f64 / p.n as f64;
    }
    p
}

/// Mean and sample standard deviation of final group score@30.
pub fn mean_sd(summary: &Summary, key: &PolicyKey) -> (f64, f64, usize) {
    let xs: Vec<f64> = summary.rows_for(key).map(|r| r.final_gs30 as f64).collect();
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    (mean, var.sqrt(), n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub const MIN_WIN_RATE: f64 = 0.65;

/// Checks, per error rate, that division of labour and division of labour
/// plus collaborative feedback beat independent search, and that division
/// of labour alone gains more than collaborative feedback alone. Only checks
/// whose grid points are present are emitted.
pub fn directional_checks(summary: &Summary) -> Vec<OrderingCheck> {
    use crate::engine::DolPolicy::{JudgedFilter, None as NoDol};
    use crate::feedback::FeedbackMode::{Collaborative, Single};

    let mut out = Vec::new();
    let mut rates: Vec<String> = summary.policies().into_iter().map(|k| k.p_err).collect();
    rates.dedup();
    for rate in rates {
        let base = PolicyKey::new(NoDol, Single, rate.clone());
        let dol = PolicyKey::new(JudgedFilter, Single, rate.clone());
        let both = PolicyKey::new(JudgedFilter, Collaborative, rate.clone());
        let sok = PolicyKey::new(NoDol, Collaborative, rate.clone());
        let present = |k: &PolicyKey| summary.rows_for(k).next().is_some();
        if !present(&base) {
            continue;
        }
        for (label, key) in
            [("judged_filter beats baseline", &dol), ("judged_filter+collaborative beats baseline", &both)]
        {
            if !present(key) {
                continue;
            }
            let p = paired(summary, key, &base);
            out.push(OrderingCheck {
                name: format!("{label} (p_err={rate})"),
                passed: p.mean_diff > 0.0 && p.win_rate() >= MIN_WIN_RATE,
                detail: format!(
                    "mean improvement {:+.3}, win-rate {:.1}% ({}W/{}T/{}L, n={})",
                    p.mean_diff,
                    100.0 * p.win_rate(),
                    p.wins,
                    p.ties,
                    p.losses,
                    p.n
                ),
            });
        }
        if present(&dol) && present(&sok) {
            let d = paired(summary, &dol, &base);
            let s = paired(summary, &sok, &base);
            out.push(OrderingCheck {
                name: format!("division of labour gains more than sharing of knowledge (p_err={rate})"),
                passed: d.mean_diff > s.mean_diff,
                detail: format!("dol-only {:+.3} vs sok-only {:+.3}", d.mean_diff, s.mean_diff),
            });
        }
    }
    out
}

pub fn write_digest<W: Write>(summary: &Summary, mut w: W) -> Result<()> {
    writeln!(w, "runs: {}   failed runs: {}", summary.rows.len(), summary.failures.len())?;
    writeln!(w)?;
    writeln!(w, "{:<58} {:>4} {:>16} {:>10} {:>16}", "policy", "n", "final gs@30", "vs base", "W/T/L")?;
    for key in summary.policies() {
        let (mean, sd, n) = mean_sd(summary, &key);
        let p = paired(summary, &key, &key.baseline());
        writeln!(
            w,
            "{:<58} {:>4} {:>9.2} ± {:<5.2} {:>+10.3} {:>6}/{}/{} ({:.0}% wins)",
            key.to_string(),
            n,
            mean,
            sd,
            p.mean_diff,
            p.wins,
            p.ties,
            p.losses,
            100.0 * p.win_rate()
        )?;
    }
    let checks = directional_checks(summary);
    if !checks.is_empty() {
        writeln!(w)?;
        writeln!(w, "directional orderings:")?;
        for c in checks {
            let tag = if c.passed { "PASS" } else { "FLAG" };
            writeln!(w, "  [{tag}] {}: {}", c.name, c.detail)?;
        }
    }
    if !summary.failures.is_empty() {
        writeln!(w)?;
        writeln!(w, "failures:")?;
        for f in &summary.failures {
            writeln!(
                w,
                "  dol={} sok={} p_err={} seed={} topic={}: {}",
                f.dol, f.sok, f.p_err, f.seed, f.topic, f.error
            )?;
        }
    }
    writeln!(w)?;
    writeln!(w, "note: authority weights are estimated from the qrels (oracle precision).")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(dol: &str, sok: &str, seed: u64, gs30: usize, base: usize) -> SummaryRow {
        SummaryRow {
            dol: dol.into(),
            sok: sok.into(),
            p_err: "0".into(),
            seed,
            topic: "1".into(),
            final_gs10: gs30 / 3,
            final_gs20: gs30 / 2,
            final_gs30: gs30,
            mean_gs30: gs30 as f64 * 0.5,
            mean_ap_final: 0.25,
            n_skips: 0,
            paired_baseline_gs30: Some(base),
        }
    }

    #[test]
    fn csv_has_fixed_header_and_parses_back() {
        let mut s = Summary::default();
        s.rows.push(row("none", "single", 1, 10, 10));
        let mut odd = row("judged_filter", "single", 1, 12, 10);
        odd.p_err = "u1=0;u2=0.5".into();
        odd.topic = "303, \"hubble\"".into();
        odd.paired_baseline_gs30 = None;
        s.rows.push(odd);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), HEADER.join(","));
        assert_eq!(text.lines().count(), 3);

        let mut generic = csv::Reader::from_reader(buf.as_slice());
        let records: Vec<csv::StringRecord> = generic.records().map(|r| r.unwrap()).collect();
        assert_eq!(records[1].get(4), Some("303, \"hubble\""));
        assert_eq!(records[1].get(11), Some(""));
        assert_eq!(Summary::read_csv(buf.as_slice()).unwrap().rows, s.rows);
    }

    #[test]
    fn baseline_against_itself_is_all_ties() {
        let mut s = Summary::default();
        for seed in 0..4 {
            s.rows.push(row("none", "single", seed, 10 + seed as usize, 10 + seed as usize));
        }
        let key = s.policies()[0].clone();
        let p = paired(&s, &key, &key.baseline());
        assert_eq!((p.n, p.wins, p.ties, p.losses), (4, 0, 4, 0));
        let mut out = Vec::new();
        write_digest(&s, &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().contains("0/4/0"));
    }

    #[test]
    fn orderings_are_flagged() {
        let mut s = Summary::default();
        for seed in 0..4 {
            s.rows.push(row("none", "single", seed, 10, 10));
            s.rows.push(row("judged_filter", "single", seed, 11, 10));
            s.rows.push(row("none", "collaborative", seed, 12, 10));
        }
        let checks = directional_checks(&s);
        assert_eq!(checks.len(), 2);
        assert!(checks[0].passed);
        assert!(!checks[1].passed);
        let mut out = Vec::new();
        write_digest(&s, &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().contains("[FLAG] division of labour gains more"));
    }
}
