//! Regeneration benchmark over config variants.

use std::fs;
use std::path::Path;

use nca_core::data::{load_checkpoint, RunConfig, Variant};
use nca_core::metrics::{ablation_table, AblationRow, Table};
use nca_core::nca::NcaModel;

use crate::error::{io_err, CliError};
use crate::evaluate::regen_reports;
use crate::run::{self, MODEL_FILE};

/// Worker threads: `NCA_THREADS` if set, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("NCA_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn variants(cfg: &RunConfig) -> Vec<Variant> {
    match &cfg.bench {
        Some(b) if !b.variants.is_empty() => b.variants.clone(),
        _ => vec![Variant {
            name: "base".into(),
            set: Default::default(),
        }],
    }
}

fn bench_variant(base: &RunConfig, v: &Variant, out: &Path, load_only: bool) -> Result<AblationRow, CliError> {
    let cfg = base.with_overrides(&v.set)?;
    let dir = out.join(&v.name);
    let ck_path = dir.join(MODEL_FILE);
    let (model, data, test): (NcaModel<f32>, _, _) = if load_only {
        if !ck_path.exists() {
            return Err(CliError::Usage(format!(
                "variant {}: missing checkpoint {}",
                v.name,
                ck_path.display()
            )));
        }
        let ck = load_checkpoint(&ck_path)?;
        let (data, test) = cfg.build_dataset()?;
        let spec = cfg.model_spec(cfg.layout(&data));
        if ck.model.spec != spec {
            return Err(CliError::Usage(format!(
                "variant {}: checkpoint does not match the configured model",
                v.name
            )));
        }
        (ck.model, data, test)
    } else {
        let o = run::train(&cfg, &dir, None, |_| {})?;
        (o.model, o.data, o.test)
    };
    let (damage, mutation) = regen_reports(&cfg, &v.name, &model, &data, test.as_ref())?;
    Ok(AblationRow {
        name: v.name.clone(),
        params: model.parameter_count(),
        damage,
        mutation,
    })
}

/// Trains (or loads) every variant, evaluates damage and mutation recovery
/// and writes `table.tsv` and `table.md` into `out`.
pub fn regen_bench(cfg: &RunConfig, out: &Path, load_only: bool) -> Result<Table, CliError> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let vs = variants(cfg);
    let workers = worker_count().min(vs.len()).max(1);
    let mut results: Vec<Option<Result<AblationRow, CliError>>> = (0..vs.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunks: Vec<Vec<usize>> = (0..workers)
            .map(|w| (w..vs.len()).step_by(workers).collect())
            .collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|idx| {
                let vs = &vs;
                s.spawn(move || {
                    idx.into_iter()
                        .map(|i| (i, bench_variant(cfg, &vs[i], out, load_only)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("bench worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    let rows = results
        .into_iter()
        .map(|r| r.expect("every variant evaluated"))
        .collect::<Result<Vec<_>, _>>()?;
    let table = ablation_table(&rows);
    let tsv = out.join("table.tsv");
    fs::write(&tsv, table.to_tsv()).map_err(|e| io_err(&tsv, e))?;
    let md = out.join("table.md");
    fs::write(&md, table.to_markdown()).map_err(|e| io_err(&md, e))?;
    let json = out.join("reports.json");
    let reports: Vec<_> = rows
        .iter()
        .map(|r| serde_json::json!({ "name": r.name, "params": r.params, "damage": r.damage, "mutation": r.mutation }))
        .collect();
    fs::write(&json, serde_json::to_string_pretty(&reports).expect("json")).map_err(|e| io_err(&json, e))?;
    Ok(table)
}
