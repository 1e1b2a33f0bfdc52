//! The twelve-row module ablation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::distill::Distilled;
use crate::error::Result;
use crate::metrics::MetricReport;
use crate::raster::{write_raster, SyntheticScene};

use super::config::{Modules, RunConfig};
use super::{run_experiment, write_loss_csv, write_metrics_csv};

const fn row(mask: bool, vgg: bool, kd_vgg: bool, attention_mlp: bool) -> Modules {
    Modules { mask, vgg, kd_vgg, attention_mlp }
}

/// Rows 1–12 in order: `(mask, vgg, kd_vgg, attention_mlp)`.
pub const ABLATION_GRID: [Modules; 12] = [
    row(false, false, false, false),
    row(false, true, false, false),
    row(false, true, false, true),
    row(false, false, true, false),
    row(false, false, true, true),
    row(false, false, false, true),
    row(true, false, false, false),
    row(true, true, false, false),
    row(true, true, false, true),
    row(true, false, true, false),
    row(true, false, true, true),
    row(true, false, false, true),
];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    /// 1-based row number.
    pub no: usize,
    pub modules: Modules,
    /// The error message of a failed run.
    pub result: std::result::Result<MetricReport, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub const CSV_HEADER: &'static str = "no,mask,vgg,kd_vgg,attention_mlp,mae,rmse,ssim,psnr";

    /// One line per row; metric cells of a failed row read `failed`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{}", Self::CSV_HEADER).unwrap();
        for r in &self.rows {
            let [a, b, c, d] = r.modules.to_bits().map(|v| v as u8);
            write!(s, "{},{a},{b},{c},{d},", r.no).unwrap();
            match &r.result {
                Ok(m) => writeln!(s, "{},{},{},{}", m.mae, m.rmse, m.ssim, m.psnr).unwrap(),
                Err(_) => writeln!(s, "failed,failed,failed,failed").unwrap(),
            }
        }
        s
    }

    pub fn row(&self, modules: Modules) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.modules == modules)
    }
}

/// Row parallelism: `IIDM_THREADS` if set and positive, else the available cores.
pub fn thread_cap() -> usize {
    let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var("IIDM_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n > 0 => n,
        _ => avail,
    }
}

fn run_row(base: &RunConfig, modules: Modules, scenes: &[SyntheticScene], distilled: Option<&Distilled>, dir: Option<&Path>) -> Result<MetricReport> {
    let cfg = RunConfig { modules, ..base.clone() };
    let out = run_experiment(&cfg, scenes, distilled)?;
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        write_raster(&out.pred, dir.join("pred.ras"))?;
        write_loss_csv(&dir.join("loss.csv"), &out.curve)?;
        write_metrics_csv(&dir.join("metrics.csv"), &[("heldout", &out.report)])?;
    }
    Ok(out.report)
}

/// Trains and scores every grid row with `base`'s settings. Every row uses the same
/// scenes, distillation and seeds, so rows differ only in their modules. A failing
/// row is recorded and the rest still run. With `out`, row `k` writes its
/// prediction, loss curve and metrics under `out/row_k`.
pub fn run_ablation(
    base: &RunConfig,
    scenes: &[SyntheticScene],
    distilled: Option<&Distilled>,
    threads: usize,
    out: Option<&Path>,
) -> AblationTable {
    let results: Vec<Mutex<Option<std::result::Result<MetricReport, String>>>> =
        ABLATION_GRID.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= ABLATION_GRID.len() {
            break;
        }
        let dir = out.map(|o| o.join(format!("row_{}", i + 1)));
        let r = run_row(base, ABLATION_GRID[i], scenes, distilled, dir.as_deref()).map_err(|e| e.to_string());
        *results[i].lock().unwrap() = Some(r);
    };
    let threads = threads.clamp(1, ABLATION_GRID.len());
    if threads == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(work);
            }
        });
    }
    let rows = results
        .into_iter()
        .enumerate()
        .map(|(i, r)| AblationRow { no: i + 1, modules: ABLATION_GRID[i], result: r.into_inner().unwrap().expect("every row ran") })
        .collect();
    AblationTable { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_distinct_and_exclusive() {
        for (i, a) in ABLATION_GRID.iter().enumerate() {
            a.validate().unwrap();
            assert!(ABLATION_GRID[i + 1..].iter().all(|b| b != a));
        }
        assert_eq!(ABLATION_GRID.iter().filter(|m| m.mask).count(), 6);
    }

    #[test]
    fn failed_rows_are_marked() {
        let table = AblationTable {
            rows: vec![AblationRow { no: 1, modules: ABLATION_GRID[0], result: Err("boom".into()) }],
        };
        assert_eq!(table.to_csv(), format!("{}\n1,0,0,0,0,failed,failed,failed,failed\n", AblationTable::CSV_HEADER));
    }
}
