//! Share of decisions attributed to each pipeline stage.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corridor::CorridorConfig;
use crate::guard::{Attribution, Decision};

/// Percentages per stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Shares {
    pub policy: f64,
    pub sm: f64,
    pub mslc: f64,
    pub db: f64,
}

impl Shares {
    pub fn total(&self) -> f64 {
        self.policy + self.sm + self.mslc + self.db
    }

    fn map2(a: &Shares, b: &Shares, f: impl Fn(f64, f64) -> f64) -> Shares {
        Shares { policy: f(a.policy, b.policy), sm: f(a.sm, b.sm), mslc: f(a.mslc, b.mslc), db: f(a.db, b.db) }
    }
}

/// Percentage shares of a set of decisions and their count.
pub fn shares<'a>(decisions: impl IntoIterator<Item = &'a Decision>) -> (Shares, u64) {
    let mut counts = [0u64; 4];
    for d in decisions {
        counts[match d.attribution {
            Attribution::Policy => 0,
            Attribution::Sm => 1,
            Attribution::Mslc => 2,
            Attribution::Db => 3,
        }] += 1;
    }
    let n: u64 = counts.iter().sum();
    let pct = |c: u64| {
        if n == 0 {
            0.0
        } else {
            100.0 * c as f64 / n as f64
        }
    };
    (Shares { policy: pct(counts[0]), sm: pct(counts[1]), mslc: pct(counts[2]), db: pct(counts[3]) }, n)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Keep gantries whose configured maximum is below the default.
    pub include_reduced_max: bool,
    /// Keep only decisions with `t_s` in this window.
    pub peak_hours: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRow {
    pub mean: Shares,
    pub std: Shares,
    pub days: usize,
    pub decisions: u64,
}

/// Mean and standard deviation across days of the per-day shares.
pub fn attribution_report(days: &[Vec<Decision>], corridor: &CorridorConfig, opts: &ReportOptions) -> AttributionRow {
    let reduced: HashSet<&str> =
        corridor.gantries.iter().filter(|g| g.max_limit < corridor.max_limit_default).map(|g| g.id.as_str()).collect();
    let keep = |d: &&Decision| {
        (opts.include_reduced_max || !reduced.contains(d.gantry_id.as_str()))
            && opts.peak_hours.is_none_or(|(a, b)| d.t_s >= a && d.t_s < b)
    };
    let per_day: Vec<(Shares, u64)> =
        days.iter().map(|day| shares(day.iter().filter(keep))).filter(|(_, n)| *n > 0).collect();
    let k = per_day.len().max(1) as f64;
    let mean = per_day.iter().fold(Shares::default(), |acc, (s, _)| Shares::map2(&acc, s, |a, b| a + b / k));
    let var = per_day.iter().fold(Shares::default(), |acc, (s, _)| {
        Shares::map2(&acc, &Shares::map2(s, &mean, |x, m| (x - m).powi(2)), |a, b| a + b / k)
    });
    AttributionRow {
        mean,
        std: Shares::map2(&var, &var, |v, _| v.sqrt()),
        days: per_day.len(),
        decisions: per_day.iter().map(|(_, n)| n).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guard::degraded_decisions;
    use crate::sim::i24_westbound;

    #[test]
    fn reduced_max_share_counts_gantries() {
        let c = i24_westbound();
        let mut day = degraded_decisions(&c, &c.max_limits(), 0, 30.0);
        for d in &mut day {
            d.attribution = if d.final_limit < c.max_limit_default { Attribution::Mslc } else { Attribution::Policy };
        }
        let all =
            attribution_report(&[day.clone()], &c, &ReportOptions { include_reduced_max: true, peak_hours: None });
        assert!((all.mean.mslc - 100.0 * 6.0 / 34.0).abs() < 1e-9);
        assert!((all.mean.total() - 100.0).abs() < 1e-9);
        let excl = attribution_report(&[day], &c, &ReportOptions::default());
        assert_eq!(excl.mean.policy, 100.0);
        assert_eq!(excl.decisions, 28);
    }

    #[test]
    fn per_day_mean_and_std() {
        let c = i24_westbound();
        let mut a = degraded_decisions(&c, &c.max_limits(), 0, 30.0);
        a.iter_mut().for_each(|d| d.attribution = Attribution::Policy);
        let mut b = a.clone();
        b.iter_mut().for_each(|d| d.attribution = Attribution::Sm);
        let row = attribution_report(
            &[a, b],
            &c,
            &ReportOptions { include_reduced_max: true, peak_hours: Some((0.0, 60.0)) },
        );
        assert_eq!(row.days, 2);
        assert_eq!(row.mean.policy, 50.0);
        assert_eq!(row.std.policy, 50.0);
    }
}
