//! Benchmark report: aggregated statistics plus text-table and CSV renders.

use serde::Serialize;

use crate::bench::EvalRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cb,
    Bayes,
    Split,
}

impl Method {
    pub fn parse(s: &str) -> Option<Method> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cb" => Some(Method::Cb),
            "bayes" => Some(Method::Bayes),
            "split" => Some(Method::Split),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Cb => "cb",
            Method::Bayes => "bayes",
            Method::Split => "split",
        }
    }
}

/// Mean with the standard error of the mean over repeats.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub se: f64,
}

impl Stat {
    pub fn from_samples(xs: &[f64]) -> Stat {
        let n = xs.len();
        if n == 0 {
            return Stat { mean: f64::NAN, se: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Stat { mean, se: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        Stat { mean, se: (var / n as f64).sqrt() }
    }
}

/// Per-method (and per-group, when grouped) aggregate row.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub method: Method,
    /// None = overall.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
    pub coverage: Stat,
    pub length: Stat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_secs: Option<Stat>,
    /// Coverage farther than 3 se from the target.
    pub miss: bool,
}

/// One repeat-level record, for the machine-readable long format. The time
/// is the method's interval-construction wall time for that repeat (shared
/// across its group rows).
#[derive(Debug, Clone, Serialize)]
pub struct RepeatRecord {
    pub repeat: usize,
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
    pub coverage: f64,
    pub length: f64,
    pub time_secs: f64,
}

/// Mean/se rates of uninformative and misclassified classification sets.
#[derive(Debug, Clone, Serialize)]
pub struct DecompositionStats {
    pub bayes_empty: Stat,
    pub bayes_both: Stat,
    pub bayes_misclassification: Stat,
    pub cb_empty: Stat,
    pub cb_both: Stat,
    pub cb_misclassification: Stat,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub scenario: String,
    pub alpha: f64,
    pub target: f64,
    pub repeats: usize,
    pub eval: EvalRule,
    pub t: usize,
    pub tune: usize,
    pub n_grid: usize,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    /// MCMC wall time per repeat, reported separately from the
    /// interval-construction timings in `rows`.
    pub sampling_secs: Stat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cb_coverage_grid: Option<Stat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cb_coverage_exact: Option<Stat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<DecompositionStats>,
    pub raw: Vec<RepeatRecord>,
}

impl CoverageReport {
    /// Aligned text table mirroring the paper-style layout: one block per
    /// statistic, groups as rows, methods as columns.
    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "scenario: {}   alpha = {}   target = {}   repeats = {}   eval = {:?}\n",
            self.scenario, self.alpha, self.target, self.repeats, self.eval
        ));
        out.push_str(&format!(
            "sampling: {:.3}s ({:.3}) per repeat, excluded from method run-times\n\n",
            self.sampling_secs.mean, self.sampling_secs.se
        ));
        out.push_str(&format!(
            "{:<10} {:>7} {:>20} {:>20} {:>18} {:>6}\n",
            "method", "group", "coverage (se)", "length (se)", "time_s (se)", "flag"
        ));
        for row in &self.rows {
            let group = row.group.map_or("overall".to_string(), |g| g.to_string());
            let time = row
                .time_secs
                .map_or(String::new(), |t| format!("{:.4} ({:.4})", t.mean, t.se));
            out.push_str(&format!(
                "{:<10} {:>7} {:>20} {:>20} {:>18} {:>6}\n",
                row.method.name(),
                group,
                format!("{:.3} ({:.3})", row.coverage.mean, row.coverage.se),
                format!("{:.3} ({:.3})", row.length.mean, row.length.se),
                time,
                if row.miss { "MISS" } else { "" },
            ));
        }
        if let Some(d) = &self.decomposition {
            out.push_str("\nuninformative decomposition (mean (se) over repeats):\n");
            out.push_str(&format!(
                "{:<22} {:>16} {:>16}\n",
                "rate", "bayes", "cb"
            ));
            let line = |label: &str, b: Stat, c: Stat| {
                format!(
                    "{:<22} {:>16} {:>16}\n",
                    label,
                    format!("{:.3} ({:.3})", b.mean, b.se),
                    format!("{:.3} ({:.3})", c.mean, c.se)
                )
            };
            out.push_str(&line("empty set", d.bayes_empty, d.cb_empty));
            out.push_str(&line("both labels", d.bayes_both, d.cb_both));
            out.push_str(&line(
                "misclassification",
                d.bayes_misclassification,
                d.cb_misclassification,
            ));
        }
        out
    }

    /// Machine-readable long format: repeat, method, group, coverage,
    /// length, time.
    pub fn to_csv_long(&self) -> String {
        let mut out = String::from("repeat,method,group,coverage,length,time_secs\n");
        for rec in &self.raw {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                rec.repeat,
                rec.method.name(),
                rec.group.map_or(String::from("overall"), |g| g.to_string()),
                rec.coverage,
                rec.length,
                rec.time_secs
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_mean_and_se() {
        let s = Stat::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert!((s.mean - 2.5).abs() < 1e-12);
        // sample sd = √(5/3), se = sd/2
        assert!((s.se - (5.0_f64 / 3.0).sqrt() / 2.0).abs() < 1e-12);
        let one = Stat::from_samples(&[7.0]);
        assert_eq!(one.mean, 7.0);
        assert_eq!(one.se, 0.0);
    }

    #[test]
    fn table_and_csv_render() {
        let report = CoverageReport {
            scenario: "LinearWellspec".into(),
            alpha: 0.2,
            target: 0.8,
            repeats: 2,
            eval: EvalRule::Grid,
            t: 100,
            tune: 100,
            n_grid: 50,
            seed: 1,
            rows: vec![ReportRow {
                method: Method::Cb,
                group: None,
                coverage: Stat { mean: 0.81, se: 0.01 },
                length: Stat { mean: 1.9, se: 0.05 },
                time_secs: Some(Stat { mean: 0.2, se: 0.01 }),
                miss: false,
            }],
            sampling_secs: Stat { mean: 1.0, se: 0.1 },
            cb_coverage_grid: None,
            cb_coverage_exact: None,
            decomposition: None,
            raw: vec![RepeatRecord {
                repeat: 0,
                method: Method::Cb,
                group: None,
                coverage: 0.8,
                length: 1.85,
                time_secs: 0.21,
            }],
        };
        let table = report.to_text_table();
        assert!(table.contains("overall"));
        assert!(table.contains("0.810"));
        let csv = report.to_csv_long();
        assert!(csv.starts_with("repeat,method,group,coverage,length,time_secs"));
        assert!(csv.contains("0,cb,overall,0.8,1.85,0.21"));
        // JSON serializes end to end
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"scenario\""));
    }
}
