use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use l2relax::simulation::{
    run_mpse_experiment, run_size_power_experiment, Design, DgpSpec, McConfig, SimReport,
    TreatmentSetting,
};
use serde::Serialize;

use crate::io;
use crate::{Format, GlobalOpts};

#[derive(Debug, Subcommand)]
pub enum SimulateCommand {
    /// Average out-of-sample MPSE net of the target noise variance.
    Table1(SimArgs),
    /// Size and power with one treated unit.
    Table2a(SimArgs),
    /// Size and power with many treated units and one post-treatment period.
    Table2b(SimArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimArgs {
    /// Replications (default 200 for table1, 500 for the testing tables).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma separated designs such as strong-homo,weak-severe, or `all`.
    #[arg(long, default_value = "all")]
    pub dgp: String,
    /// Sample sizes: T values (T1 = T2 = T) for table1 and table2a, N:M pairs
    /// (N = T1) for table2b.
    #[arg(long)]
    pub sizes: Option<String>,
    /// Number of controls for table1 and table2a.
    #[arg(long)]
    pub n: Option<usize>,
    /// TOML file with further experiment settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// One statistic per row instead of the table layout.
    #[arg(long)]
    pub long: bool,
}

const ALL_DGPS: [&str; 6] = [
    "strong-homo",
    "strong-mild",
    "strong-severe",
    "weak-homo",
    "weak-mild",
    "weak-severe",
];

fn dgps(selector: &str, testing: bool) -> Result<Vec<DgpSpec>> {
    if selector == "all" {
        let n = if testing { 3 } else { ALL_DGPS.len() };
        return Ok(ALL_DGPS[..n]
            .iter()
            .map(|s| s.parse().expect("valid"))
            .collect());
    }
    selector
        .split(',')
        .map(|s| s.trim().parse::<DgpSpec>().map_err(Into::into))
        .collect()
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| v.trim().parse().with_context(|| format!("bad size `{v}`")))
        .collect()
}

fn parse_pairs(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|v| {
            let (n, m) = v
                .trim()
                .split_once(':')
                .with_context(|| format!("bad N:M pair `{v}`"))?;
            Ok((n.parse()?, m.parse()?))
        })
        .collect()
}

fn base_config(global: &GlobalOpts, args: &SimArgs, default_reps: usize) -> Result<McConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read {}", p.display()))?;
            McConfig::from_toml_str(&text)?
        }
        None => McConfig {
            reps: default_reps,
            ..Default::default()
        },
    };
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if cfg.reps == 1 {
        eprintln!("warning: a single replication is statistically meaningless");
    }
    Ok(cfg)
}

pub fn run(global: &GlobalOpts, cmd: SimulateCommand) -> Result<()> {
    let (table, args) = match &cmd {
        SimulateCommand::Table1(a) => ("table1", a),
        SimulateCommand::Table2a(a) => ("table2a", a),
        SimulateCommand::Table2b(a) => ("table2b", a),
    };
    let testing = table != "table1";
    let base = base_config(global, args, if testing { 500 } else { 200 })?;
    let mut reports = Vec::new();
    for dgp in dgps(&args.dgp, testing)? {
        match table {
            "table2b" => {
                let pairs = parse_pairs(args.sizes.as_deref().unwrap_or("50:30,100:40,200:50"))?;
                for (n, m) in pairs {
                    let cfg = McConfig {
                        dgp,
                        n,
                        t1: n,
                        t2: 1,
                        m,
                        ..base.clone()
                    };
                    eprintln!("{table}: {} N={n} M={m}", dgp.label());
                    reports.push(run_size_power_experiment(&cfg, TreatmentSetting::Multi)?);
                }
            }
            _ => {
                for t in parse_list(args.sizes.as_deref().unwrap_or("50,100,200"))? {
                    let cfg = McConfig {
                        dgp,
                        t1: t,
                        t2: t,
                        ..base.clone()
                    };
                    eprintln!("{table}: {} T={t}", dgp.label());
                    reports.push(if testing {
                        run_size_power_experiment(&cfg, TreatmentSetting::Single)?
                    } else {
                        run_mpse_experiment(&cfg)?
                    });
                }
            }
        }
    }
    if reports.is_empty() {
        bail!("nothing to simulate");
    }
    match io::format_or(global, Format::Csv) {
        Format::Json => io::write_json(
            global,
            &serde_json::json!({ "table": table, "config": base, "args": args, "reports": reports }),
        ),
        Format::Csv => {
            let mut w = io::sink(global)?;
            writeln!(
                w,
                "# {table} reps={} seed={} n={}",
                base.reps, base.seed, base.n
            )?;
            writeln!(w, "# config: {}", compact_config(&base)?)?;
            if args.long {
                write_long(w, &reports)
            } else {
                match table {
                    "table1" => write_table1(w, &reports),
                    _ => write_table2(w, &reports, &base.designs, table == "table2b"),
                }
            }
        }
    }
}

/// The shared config as one JSON line, with each grid shortened to its range
/// and the per-row fields (design, sizes) left to the table itself.
fn compact_config(cfg: &McConfig) -> Result<String> {
    let mut v = serde_json::to_value(cfg)?;
    if let Some(obj) = v.as_object_mut() {
        for key in ["dgp", "t1", "t2", "m"] {
            obj.remove(key);
        }
    }
    for key in ["tau_grid", "ridge_grid", "lasso_grid", "test_grid"] {
        if let Some(serde_json::Value::Array(g)) = v.get(key) {
            let (lo, hi) = (g.first().cloned(), g.last().cloned());
            v[key] = serde_json::json!({ "from": lo, "to": hi, "points": g.len() });
        }
    }
    Ok(v.to_string())
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"))
}

fn write_long(w: Box<dyn Write>, reports: &[SimReport]) -> Result<()> {
    let mut c = csv::Writer::from_writer(w);
    for r in reports {
        for row in &r.rows {
            c.serialize(row)?;
        }
    }
    c.flush()?;
    Ok(())
}

fn write_table1(w: Box<dyn Write>, reports: &[SimReport]) -> Result<()> {
    let mut c = csv::Writer::from_writer(w);
    c.write_record([
        "dgp",
        "t1",
        "t2",
        "l2relax_best_tau",
        "l2relax_infeasible",
        "l2relax_validated",
        "ridge_infeasible",
        "ridge_validated",
        "lasso_infeasible",
        "lasso_validated",
        "pca_q4",
        "pca_pcp1",
    ])?;
    for r in reports {
        let Some(first) = r.rows.first() else {
            continue;
        };
        let mut rec = vec![
            first.dgp.clone(),
            first.t1.to_string(),
            first.t2.to_string(),
        ];
        rec.push(cell(r.value("l2relax", "", "best_hyper")));
        for m in ["l2relax", "ridge", "lasso"] {
            rec.push(cell(r.value(m, "", "infeasible_mpse")));
            rec.push(cell(r.value(m, "", "validated_mpse")));
        }
        rec.push(cell(r.value("pca_fixed", "", "mpse")));
        rec.push(cell(r.value("pca_pcp1", "", "mpse")));
        c.write_record(&rec)?;
    }
    c.flush()?;
    Ok(())
}

fn write_table2(
    w: Box<dyn Write>,
    reports: &[SimReport],
    designs: &[Design],
    multi: bool,
) -> Result<()> {
    let mut c = csv::Writer::from_writer(w);
    let mut header: Vec<String> = if multi {
        vec!["dgp".into(), "n".into(), "t1".into(), "m".into()]
    } else {
        vec!["dgp".into(), "t1".into(), "t2".into()]
    };
    header.extend(designs.iter().map(Design::label));
    c.write_record(&header)?;
    for r in reports {
        let Some(first) = r.rows.first() else {
            continue;
        };
        let mut rec: Vec<String> = if multi {
            vec![
                first.dgp.clone(),
                first.n.to_string(),
                first.t1.to_string(),
                first.m.to_string(),
            ]
        } else {
            vec![
                first.dgp.clone(),
                first.t1.to_string(),
                first.t2.to_string(),
            ]
        };
        for d in designs {
            rec.push(cell(r.value("l2relax", &d.label(), "rejection_rate")));
        }
        c.write_record(&rec)?;
    }
    c.flush()?;
    Ok(())
}
