use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::eval::EvalReport;
use crate::{Error, Result};

/// Policy-evaluation table: one row per policy, {success, reward, time}
/// column groups per scenario, best entries marked with `*`.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub policies: Vec<String>,
    pub scenarios: Vec<String>,
    /// `cells[row][scenario]`.
    pub cells: Vec<Vec<EvalReport>>,
}

fn scenario_rank(s: &str) -> (usize, &str) {
    match s {
        "seen" => (0, s),
        "unseen" => (1, s),
        _ => (2, s),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Metric {
    Success,
    Reward,
    Time,
}

impl Comparison {
    fn best(&self, col: usize, metric: Metric) -> f64 {
        let vals = self.cells.iter().map(|r| match metric {
            Metric::Success => r[col].success_rate,
            Metric::Reward => r[col].mean_reward,
            Metric::Time => -r[col].mean_time_s,
        });
        vals.fold(f64::NEG_INFINITY, f64::max)
    }

    fn is_best(&self, row: usize, col: usize, metric: Metric) -> bool {
        let r = &self.cells[row][col];
        let v = match metric {
            Metric::Success => r.success_rate,
            Metric::Reward => r.mean_reward,
            Metric::Time => -r.mean_time_s,
        };
        v == self.best(col, metric)
    }

    fn entries(&self, row: usize, col: usize) -> [(String, bool); 3] {
        let r = &self.cells[row][col];
        [
            (format!("{:.1}", r.success_rate), self.is_best(row, col, Metric::Success)),
            (format!("{:.2} ± {:.2}", r.mean_reward, r.std_reward), self.is_best(row, col, Metric::Reward)),
            (format!("{:.2} ± {:.2}", r.mean_time_s, r.std_time_s), self.is_best(row, col, Metric::Time)),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut header = vec!["policy".to_string()];
        for s in &self.scenarios {
            for m in ["success %", "reward", "time s"] {
                header.push(format!("{s} {m}"));
            }
        }
        let mut rows = vec![header];
        for (i, p) in self.policies.iter().enumerate() {
            let mut row = vec![p.clone()];
            for c in 0..self.scenarios.len() {
                for (text, best) in self.entries(i, c) {
                    row.push(if best { format!("{text} *") } else { text });
                }
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, w))| {
                    let pad = w - s.chars().count();
                    if c == 0 {
                        format!("{s}{}", " ".repeat(pad))
                    } else {
                        format!("{}{s}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        out
    }

    /// Numeric CSV; the trailing `best` column lists the metrics in which the
    /// row is best, separated by `;`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy");
        for s in &self.scenarios {
            let _ = write!(out, ",{s}_success,{s}_reward,{s}_reward_std,{s}_time,{s}_time_std");
        }
        out.push_str(",best\n");
        for (i, p) in self.policies.iter().enumerate() {
            out.push_str(p);
            let mut best = Vec::new();
            for (c, s) in self.scenarios.iter().enumerate() {
                let r = &self.cells[i][c];
                let _ = write!(
                    out,
                    ",{},{},{},{},{}",
                    r.success_rate, r.mean_reward, r.std_reward, r.mean_time_s, r.std_time_s
                );
                for (m, name) in [(Metric::Success, "success"), (Metric::Reward, "reward"), (Metric::Time, "time")] {
                    if self.is_best(i, c, m) {
                        best.push(format!("{s}_{name}"));
                    }
                }
            }
            let _ = writeln!(out, ",{}", best.join(";"));
        }
        out
    }
}

/// Every policy must be evaluated on the same scenarios with the same
/// trial seeds; anything else is a mismatch.
pub fn compare(reports: &[EvalReport]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::Config("compare needs at least two reports".into()));
    }
    let mut policies: Vec<String> = Vec::new();
    for r in reports {
        if !policies.contains(&r.policy_id) {
            policies.push(r.policy_id.clone());
        }
    }
    let mut scenarios: Vec<String> = reports
        .iter()
        .map(|r| r.scenario.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    scenarios.sort_by(|a, b| scenario_rank(a).cmp(&scenario_rank(b)));

    let mut cells = Vec::with_capacity(policies.len());
    for p in &policies {
        let mut row = Vec::with_capacity(scenarios.len());
        for s in &scenarios {
            let found: Vec<&EvalReport> = reports.iter().filter(|r| &r.policy_id == p && &r.scenario == s).collect();
            match found.as_slice() {
                [r] => row.push((*r).clone()),
                [] => return Err(Error::MismatchedScenarios(format!("policy {p} has no report for scenario {s}"))),
                _ => return Err(Error::MismatchedScenarios(format!("policy {p} has several reports for scenario {s}"))),
            }
        }
        cells.push(row);
    }
    for (c, s) in scenarios.iter().enumerate() {
        let first = &cells[0][c];
        for row in &cells[1..] {
            let r = &row[c];
            if r.n_trials != first.n_trials || r.base_seed != first.base_seed {
                return Err(Error::MismatchedScenarios(format!(
                    "scenario {s}: {} used {} trials from seed {}, {} used {} from seed {}",
                    first.policy_id, first.n_trials, first.base_seed, r.policy_id, r.n_trials, r.base_seed
                )));
            }
        }
    }
    Ok(Comparison {
        policies,
        scenarios,
        cells,
    })
}
