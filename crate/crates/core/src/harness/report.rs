//! Cross-run comparison: per-method, per-task medians with min–max bands,
//! rendered as CSV and aligned plain text.

use crate::harness::config::RunConfig;
use crate::harness::run::EvalReport;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

/// Median and spread of one metric over seeds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Band {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

fn band(mut values: Vec<f64>) -> Band {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    };
    Band {
        median,
        min: values[0],
        max: values[n - 1],
    }
}

/// One comparison row: a (method, task) pair aggregated over seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub task_id: u32,
    pub seeds: usize,
    pub success: Band,
    pub cosine: Band,
    pub coverage: Option<Band>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

fn load_reports(dir: &Path) -> crate::Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("eval-") && n.ends_with(".json"))
                .unwrap_or(false)
        })
        .collect();
    entries.sort();
    for path in entries {
        let body = fs::read_to_string(&path)?;
        let report: EvalReport = serde_json::from_str(&body)
            .map_err(|e| crate::Error::input(format!("bad eval report {path:?}: {e}")))?;
        reports.push(report);
    }
    if reports.is_empty() {
        return Err(crate::Error::input(format!("no eval reports under {dir:?}")));
    }
    Ok(reports)
}

fn environment_fingerprint(config: &RunConfig) -> crate::Result<String> {
    let suite = config.environment.resolve()?;
    let targets = serde_json::to_string(&suite.targets)?;
    Ok(format!(
        "{:?}|{}|{}|{}|{}",
        suite.vocab.tokens(),
        suite.horizon,
        targets,
        config.evaluation.variants_per_task,
        config.evaluation.episodes,
    ))
}

/// Merges completed run directories into one table. All runs must share the
/// environment spec and evaluation parameters. Rows are sorted by method
/// name then task id, so reruns render identically.
pub fn compare(run_dirs: &[&Path]) -> crate::Result<ComparisonTable> {
    if run_dirs.is_empty() {
        return Err(crate::Error::input("compare needs at least one run directory"));
    }
    let mut fingerprint: Option<String> = None;
    // (method, task) → per-seed metric vectors
    let mut buckets: BTreeMap<(String, u32), (Vec<f64>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for dir in run_dirs {
        let config_body = fs::read_to_string(dir.join("config.toml"))?;
        let config = RunConfig::from_toml(&config_body)?;
        let fp = environment_fingerprint(&config)?;
        match &fingerprint {
            None => fingerprint = Some(fp),
            Some(existing) if *existing != fp => {
                return Err(crate::Error::Validation(vec![format!(
                    "run {dir:?} uses a different environment or evaluation protocol"
                )]))
            }
            _ => {}
        }
        for report in load_reports(dir)? {
            for task in &report.tasks {
                let entry = buckets
                    .entry((report.optimizer.clone(), task.task_id))
                    .or_default();
                entry.0.push(task.mean_success);
                entry.1.push(task.mean_pairwise_cos);
                if let Some(c) = task.mode_coverage {
                    entry.2.push(c);
                }
            }
        }
    }
    let rows = buckets
        .into_iter()
        .map(|((method, task_id), (succ, cos, cov))| ComparisonRow {
            method,
            task_id,
            seeds: succ.len(),
            success: band(succ),
            cosine: band(cos),
            coverage: if cov.is_empty() { None } else { Some(band(cov)) },
        })
        .collect();
    Ok(ComparisonTable { rows })
}

pub fn render_comparison_csv(table: &ComparisonTable) -> String {
    let mut out = String::from(
        "method,task_id,seeds,succ_median,succ_min,succ_max,cos_median,cos_min,cos_max,coverage_median,coverage_min,coverage_max\n",
    );
    for r in &table.rows {
        let cov = match &r.coverage {
            Some(b) => format!("{:?},{:?},{:?}", b.median, b.min, b.max),
            None => ",,".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{}\n",
            r.method,
            r.task_id,
            r.seeds,
            r.success.median,
            r.success.min,
            r.success.max,
            r.cosine.median,
            r.cosine.min,
            r.cosine.max,
            cov
        ));
    }
    out
}

pub fn render_comparison_text(table: &ComparisonTable) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>4} {:>5} {:>22} {:>22} {:>22}\n",
        "method", "task", "seeds", "succ med [min,max]", "cos med [min,max]", "cover med [min,max]"
    ));
    for r in &table.rows {
        let fmt = |b: &Band| format!("{:.3} [{:.3},{:.3}]", b.median, b.min, b.max);
        // cosine shown both raw and ×100 for visual comparison with scaled reports
        let cov = r.coverage.as_ref().map(|b| fmt(b)).unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<12} {:>4} {:>5} {:>22} {:>22} {:>22}\n",
            r.method,
            r.task_id,
            r.seeds,
            fmt(&r.success),
            format!("{} (x100 {:.1})", fmt(&r.cosine), 100.0 * r.cosine.median),
            cov
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run::train_run;

    fn tiny_config_body(optimizer: &str) -> String {
        format!(
            r#"
optimizer = "{optimizer}"
seeds = [1, 2]

[environment]
benchmark = "single-mode"

[daert]
rho = 1.0
group_size = 3
batch_size = 1
learning_rate = 0.5
total_steps = 2
reference_refresh = 1
centering = true
episodes_per_rollout = 1

[grpo]
group_size = 3
batch_size = 1
learning_rate = 0.5
clip_ratio = 0.2
kl_coefficient = 0.01
entropy_coefficient = 0.001
kl_enabled = true
total_steps = 2
episodes_per_rollout = 1

[evaluation]
variants_per_task = 4
episodes = 2
retry_cap = 100
"#
        )
    }

    #[test]
    fn compare_run_with_itself_is_reflexive() {
        let dir = tempfile::tempdir().unwrap();
        let body = tiny_config_body("daert");
        let cfg = RunConfig::from_toml(&body).unwrap();
        train_run(&cfg, body.as_bytes(), dir.path()).unwrap();
        let t1 = compare(&[dir.path()]).unwrap();
        let t2 = compare(&[dir.path(), dir.path()]).unwrap();
        assert_eq!(t1.rows.len(), t2.rows.len());
        for (a, b) in t1.rows.iter().zip(&t2.rows) {
            assert_eq!(a.success.median, b.success.median);
            assert_eq!(a.cosine.median, b.cosine.median);
        }
    }

    #[test]
    fn compare_three_methods_yields_three_rows() {
        let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
        for (opt, dir) in ["daert", "grpo", "grpo-nokl"].iter().zip(&dirs) {
            let body = tiny_config_body(opt);
            let cfg = RunConfig::from_toml(&body).unwrap();
            train_run(&cfg, body.as_bytes(), dir.path()).unwrap();
        }
        let paths: Vec<&Path> = dirs.iter().map(|d| d.path()).collect();
        let table = compare(&paths).unwrap();
        assert_eq!(table.rows.len(), 3);
        // sorted by method name
        let methods: Vec<&str> = table.rows.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(methods, vec!["daert", "grpo", "grpo-nokl"]);
        let csv = render_comparison_csv(&table);
        assert!(csv.lines().count() == 4);
        let text = render_comparison_text(&table);
        assert!(text.contains("daert"));
    }

    #[test]
    fn mismatched_environments_rejected() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let b1 = tiny_config_body("daert");
        let cfg1 = RunConfig::from_toml(&b1).unwrap();
        train_run(&cfg1, b1.as_bytes(), d1.path()).unwrap();
        let b2 = tiny_config_body("grpo").replace("single-mode", "4-mode-equal");
        let cfg2 = RunConfig::from_toml(&b2).unwrap();
        train_run(&cfg2, b2.as_bytes(), d2.path()).unwrap();
        assert!(matches!(
            compare(&[d1.path(), d2.path()]),
            Err(crate::Error::Validation(_))
        ));
    }

    #[test]
    fn band_median_even_and_odd() {
        let b = band(vec![3.0, 1.0, 2.0]);
        assert_eq!(b.median, 2.0);
        assert_eq!((b.min, b.max), (1.0, 3.0));
        let b = band(vec![4.0, 1.0, 2.0, 3.0]);
        assert_eq!(b.median, 2.5);
    }
}
