//! Per-run accuracy table in the layout of the ablation and noise tables: one
//! row per run, one column per client model, and the client average.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hetfed::fedproto::{AblationFlags, RoundLog};
use hetfed::rhflcore::Reweight;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::runner::{is_complete, read_config, read_logs, CONFIG_FILE};
use crate::sweep::INDEX_FILE;

pub const SUMMARY_FILE: &str = "summary.csv";

/// Which round a row reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Last round.
    Final,
    /// Round with the highest client-average accuracy (earliest on ties).
    Best,
    /// Both rows.
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub config: ExperimentConfig,
    pub selection: &'static str,
    pub round: usize,
    pub per_client: Vec<f64>,
    pub avg: f64,
}

fn round_accuracies(logs: &[RoundLog], round: usize) -> Vec<f64> {
    let mut rows: Vec<&RoundLog> = logs.iter().filter(|l| l.round == round).collect();
    rows.sort_by_key(|l| l.client_id);
    rows.iter().map(|l| l.accuracy).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn rows_for(config: ExperimentConfig, logs: &[RoundLog], selection: Selection) -> Vec<SummaryRow> {
    let last = logs.iter().map(|l| l.round).max().unwrap_or(0);
    let mut out = Vec::new();
    let mut push = |label: &'static str, round: usize| {
        let per_client = round_accuracies(logs, round);
        out.push(SummaryRow {
            config: config.clone(),
            selection: label,
            round,
            avg: mean(&per_client),
            per_client,
        });
    };
    if matches!(selection, Selection::Final | Selection::Both) {
        push("final", last);
    }
    if matches!(selection, Selection::Best | Selection::Both) {
        let first = usize::from(last > 0);
        let best = (first..=last)
            .map(|r| (r, mean(&round_accuracies(logs, r))))
            .fold((first, f64::NEG_INFINITY), |acc, (r, a)| if a > acc.1 { (r, a) } else { acc });
        push("best", best.0);
    }
    out
}

/// Run directories under `runs`, sorted by name. Directories listed in a sweep
/// index or holding a config but no finished logs are reported as missing.
pub fn collect_rows(runs: &Path, selection: Selection) -> Result<Vec<SummaryRow>> {
    let entries = fs::read_dir(runs).map_err(CliError::io(runs))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(CONFIG_FILE).is_file())
        .collect();
    dirs.sort();

    let mut missing: Vec<String> = Vec::new();
    let index = runs.join(INDEX_FILE);
    if index.is_file() {
        let text = fs::read_to_string(&index).map_err(CliError::io(&index))?;
        for line in text.lines() {
            let v: serde_json::Value =
                serde_json::from_str(line).map_err(|e| CliError::Run(format!("{}: {e}", index.display())))?;
            let run = v["run"].as_str().unwrap_or_default();
            if !is_complete(&runs.join(run)) {
                missing.push(format!("{run} {}", v["cell"]));
            }
        }
    }
    for d in &dirs {
        if !is_complete(d) {
            let name = d.file_name().unwrap_or_default().to_string_lossy().into_owned();
            if !missing.iter().any(|m| m.starts_with(&name)) {
                missing.push(name);
            }
        }
    }
    if !missing.is_empty() {
        return Err(CliError::MissingLogs(missing));
    }

    let mut rows = Vec::new();
    for d in &dirs {
        rows.extend(rows_for(read_config(d)?, &read_logs(d)?, selection));
    }
    if rows.is_empty() {
        return Err(CliError::Run(format!("no runs under {}", runs.display())));
    }
    Ok(rows)
}

fn mu_label(cfg: &ExperimentConfig) -> String {
    match (cfg.data.noise.rate, cfg.data.noise.random_range) {
        (Some(r), _) => r.to_string(),
        (None, Some([lo, hi])) => format!("U[{lo};{hi}]"),
        (None, None) => "0".into(),
    }
}

fn reweight_name(r: Reweight) -> &'static str {
    match r {
        Reweight::None => "none",
        Reweight::Ccr => "ccr",
        Reweight::Eccr => "eccr",
    }
}

/// CSV text; `theta_k` is the accuracy of client `k`'s model.
pub fn to_csv(rows: &[SummaryRow]) -> String {
    let k = rows.iter().map(|r| r.per_client.len()).max().unwrap_or(0);
    let mut out = String::from("strategy,hfl,sl,dlr,reweight,noise_type,mu,seed,selection,round");
    for i in 1..=k {
        write!(out, ",theta_{i}").unwrap();
    }
    out.push_str(",avg\n");
    for r in rows {
        let c = &r.config;
        let flags = c.strategy_config().effective_flags();
        let flag = |f: fn(&AblationFlags) -> String| flags.as_ref().map(f).unwrap_or_default();
        write!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            c.strategy,
            flag(|f| f.hfl.to_string()),
            flag(|f| f.sl.to_string()),
            flag(|f| f.dlr.to_string()),
            flag(|f| reweight_name(f.reweight).to_string()),
            c.data.noise.kind,
            mu_label(c),
            c.seed,
            r.selection,
            r.round,
        )
        .unwrap();
        for i in 0..k {
            out.push(',');
            if let Some(a) = r.per_client.get(i) {
                write!(out, "{a}").unwrap();
            }
        }
        writeln!(out, ",{}", r.avg).unwrap();
    }
    out
}

/// Writes the summary of every run under `runs` to `dest` (default
/// `runs/summary.csv`). Nothing is written on error.
pub fn summarize(runs: &Path, selection: Selection, dest: Option<&Path>) -> Result<PathBuf> {
    let rows = collect_rows(runs, selection)?;
    let dest = dest.map(Path::to_path_buf).unwrap_or_else(|| runs.join(SUMMARY_FILE));
    fs::write(&dest, to_csv(&rows)).map_err(CliError::io(&dest))?;
    Ok(dest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigStack;
    use serde_json::json;

    fn log(round: usize, client_id: usize, accuracy: f64) -> RoundLog {
        RoundLog {
            round,
            client_id,
            accuracy,
            roc_auc: None,
            pr_auc: None,
            mean_sl_loss: 1.0,
            q: None,
            p: None,
            f: None,
            w: None,
            collab_loss: None,
            noise_rate: 0.1,
            clamp_events: 0,
            wall_clock_ms: None,
        }
    }

    fn cfg() -> ExperimentConfig {
        let mut s = ConfigStack::new();
        s.push("t", json!({"strategy": "rhfl_plus_eccr", "data": {"noise": {"kind": "pairflip", "rate": 0.1}}}))
            .unwrap();
        s.resolve().unwrap()
    }

    #[test]
    fn single_client_average() {
        let rows = rows_for(cfg(), &[log(0, 0, 0.3), log(1, 0, 0.8)], Selection::Final);
        assert_eq!(rows[0].avg, 0.8);
    }

    #[test]
    fn four_client_average() {
        let logs: Vec<_> = [0.80, 0.82, 0.74, 0.80].iter().enumerate().map(|(k, &a)| log(2, k, a)).collect();
        let rows = rows_for(cfg(), &logs, Selection::Final);
        assert!((rows[0].avg - 0.79).abs() < 1e-12);
        let csv = to_csv(&rows);
        let header = csv.lines().next().unwrap();
        assert_eq!(
            header,
            "strategy,hfl,sl,dlr,reweight,noise_type,mu,seed,selection,round,theta_1,theta_2,theta_3,theta_4,avg"
        );
        assert!(csv.lines().nth(1).unwrap().starts_with("rhfl_plus_eccr,true,true,true,eccr,pairflip,0.1,0,final,2,0.8,"));
    }

    #[test]
    fn best_round_selection() {
        let logs = vec![log(0, 0, 0.9), log(1, 0, 0.5), log(2, 0, 0.7), log(3, 0, 0.6)];
        let rows = rows_for(cfg(), &logs, Selection::Both);
        assert_eq!((rows[0].selection, rows[0].round), ("final", 3));
        // round 0 is the untrained model and never counts as best
        assert_eq!((rows[1].selection, rows[1].round), ("best", 2));
    }

    #[test]
    fn empty_run_set_writes_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let err = summarize(tmp.path(), Selection::Final, None).unwrap_err();
        assert!(err.to_string().contains("no runs"));
        assert!(!tmp.path().join(SUMMARY_FILE).exists());
    }

    #[test]
    fn unfinished_run_is_listed() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path().join("abc");
        fs::create_dir(&d).unwrap();
        fs::write(d.join(CONFIG_FILE), "{}").unwrap();
        match summarize(tmp.path(), Selection::Final, None) {
            Err(CliError::MissingLogs(m)) => assert_eq!(m, vec!["abc".to_string()]),
            other => panic!("{other:?}"),
        }
        assert!(!tmp.path().join(SUMMARY_FILE).exists());
    }
}
