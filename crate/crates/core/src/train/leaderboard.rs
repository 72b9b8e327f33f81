use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub model_name: String,
    pub report: MetricReport,
    pub parameter_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    AucJudd,
    Sim,
    Cc,
    Nss,
    Kld,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::AucJudd, Metric::Sim, Metric::Cc, Metric::Nss, Metric::Kld];

    pub fn key(self) -> &'static str {
        match self {
            Metric::AucJudd => "auc_judd",
            Metric::Sim => "sim",
            Metric::Cc => "cc",
            Metric::Nss => "nss",
            Metric::Kld => "kld",
        }
    }

    fn header(self) -> &'static str {
        match self {
            Metric::AucJudd => "AUC-J ^",
            Metric::Sim => "SIM ^",
            Metric::Cc => "CC ^",
            Metric::Nss => "NSS ^",
            Metric::Kld => "KLD v",
        }
    }

    pub fn lower_is_better(self) -> bool {
        self == Metric::Kld
    }

    pub fn value(self, r: &MetricReport) -> Option<f64> {
        match self {
            Metric::AucJudd => r.auc_judd,
            Metric::Sim => r.sim,
            Metric::Cc => r.cc,
            Metric::Nss => r.nss,
            Metric::Kld => r.kld,
        }
    }
}

/// Rows sorted by NSS (descending, missing last, ties by name) with the
/// best value of each metric marked.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaderboard {
    rows: Vec<LeaderboardRow>,
    best: Vec<Vec<Metric>>,
}

impl Leaderboard {
    pub fn new(mut rows: Vec<LeaderboardRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("leaderboard needs at least one row"));
        }
        for r in &rows {
            r.report.check_bounds()?;
        }
        rows.sort_by(|a, b| {
            let by_nss = match (a.report.nss, b.report.nss) {
                (Some(x), Some(y)) => y.total_cmp(&x),
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => Ordering::Equal,
            };
            by_nss.then_with(|| a.model_name.cmp(&b.model_name))
        });
        let mut best = vec![Vec::new(); rows.len()];
        for m in Metric::ALL {
            let values: Vec<Option<f64>> = rows.iter().map(|r| m.value(&r.report)).collect();
            let target = values.iter().flatten().copied().reduce(|a, b| {
                if m.lower_is_better() {
                    a.min(b)
                } else {
                    a.max(b)
                }
            });
            if let Some(t) = target {
                for (i, v) in values.iter().enumerate() {
                    if *v == Some(t) {
                        best[i].push(m);
                    }
                }
            }
        }
        Ok(Self { rows, best })
    }

    pub fn rows(&self) -> &[LeaderboardRow] {
        &self.rows
    }

    /// Metrics on which row `i` is best (ties all marked).
    pub fn best_metrics(&self, i: usize) -> &[Metric] {
        &self.best[i]
    }

    pub fn is_best(&self, i: usize, m: Metric) -> bool {
        self.best[i].contains(&m)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
        let mut header = vec!["model".to_string()];
        header.extend(Metric::ALL.iter().map(|m| m.key().to_string()));
        header.extend(["frames", "parameters", "best"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec = vec![r.model_name.clone()];
            rec.extend(
                Metric::ALL
                    .iter()
                    .map(|m| m.value(&r.report).map_or(String::new(), |v| format!("{v:.6}"))),
            );
            rec.push(r.report.frames.to_string());
            rec.push(r.parameter_count.to_string());
            rec.push(self.best[i].iter().map(|m| m.key()).collect::<Vec<_>>().join(";"));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Plain-text table; `*` marks the best value in each column.
    pub fn to_text(&self) -> String {
        let mut cells: Vec<Vec<String>> = vec![{
            let mut h = vec!["Model".to_string()];
            h.extend(Metric::ALL.iter().map(|m| m.header().to_string()));
            h.push("# Params".into());
            h
        }];
        for (i, r) in self.rows.iter().enumerate() {
            let mut row = vec![r.model_name.clone()];
            for m in Metric::ALL {
                let mark = if self.is_best(i, m) { "*" } else { " " };
                row.push(match m.value(&r.report) {
                    Some(v) => format!("{v:.3}{mark}"),
                    None => "-".into(),
                });
            }
            row.push(format_params(r.parameter_count));
            cells.push(row);
        }
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (k, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if k == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        out
    }
}

fn format_params(n: usize) -> String {
    if n >= 100_000 {
        format!("{:.1}M", n as f64 / 1e6)
    } else {
        n.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, nss: Option<f64>, kld: f64) -> LeaderboardRow {
        LeaderboardRow {
            model_name: name.into(),
            report: MetricReport {
                auc_judd: Some(0.8),
                cc: Some(0.3),
                kld: Some(kld),
                sim: Some(0.2),
                nss,
                frames: 4,
                ..Default::default()
            },
            parameter_count: 10,
        }
    }

    #[test]
    fn single_row_is_best_everywhere() {
        let lb = Leaderboard::new(vec![row("a", Some(1.0), 2.0)]).unwrap();
        assert_eq!(lb.best_metrics(0), &Metric::ALL);
    }

    #[test]
    fn sorted_by_nss_then_name() {
        let lb = Leaderboard::new(vec![
            row("zeta", Some(1.0), 2.0),
            row("alpha", Some(1.0), 3.0),
            row("mid", Some(2.0), 1.0),
            row("none", None, 1.0),
        ])
        .unwrap();
        let names: Vec<_> = lb.rows().iter().map(|r| r.model_name.as_str()).collect();
        assert_eq!(names, ["mid", "alpha", "zeta", "none"]);
    }

    #[test]
    fn kld_best_is_minimum() {
        let lb = Leaderboard::new(vec![row("a", Some(2.0), 5.0), row("b", Some(1.0), 0.5)]).unwrap();
        assert!(lb.is_best(1, Metric::Kld));
        assert!(!lb.is_best(0, Metric::Kld));
        assert!(lb.is_best(0, Metric::Nss));
        let csv = lb.to_csv().unwrap();
        assert!(csv.starts_with("model,auc_judd,sim,cc,nss,kld,frames,parameters,best\n"));
        assert!(lb.to_text().contains("0.500*"));
    }

    #[test]
    fn empty_is_an_error() {
        assert!(Leaderboard::new(vec![]).is_err());
    }
}
