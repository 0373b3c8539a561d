//! Experiment orchestration behind the subcommands: uniform sweeps,
//! adaptive runs, bound audits, reference extrapolation, and all artifact
//! emission. Every file a run writes is registered and hashed into the
//! manifest; numeric formatting is pinned so identical configurations
//! reproduce identical bytes (the wall-clock column of the adaptive
//! history is the sole documented exception).

use crate::aitken::{aitken_extrapolate, ReferenceEstimate};
use crate::config::{DomainSpec, RunConfig, RING_REFERENCE};
use crate::manifest::write_manifest;
use creig::adapt::{adaptive_loop, AdaptError, AdaptRecord, IterationView};
use creig::eigensolve::{fix_signs, smallest_eigenpairs, EigOptions, SpectralSet};
use creig::mesh::TriMesh;
use creig::spaces::{assemble_mass, assemble_stiffness, CrSpace, FeSpace, P1Space, SpaceKind};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum RunError {
    /// Bad configuration or unusable input files → exit status 1.
    Config(String),
    /// Failures of the numerics (solver breakdown, non-convergence,
    /// impossible requests on valid configs) → exit status 2.
    Numerical(String),
    /// Filesystem trouble while writing artifacts → exit status 1.
    Io(std::io::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "configuration error: {m}"),
            RunError::Numerical(m) => write!(f, "numerical failure: {m}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io(_) => 1,
            RunError::Numerical(_) => 2,
        }
    }
}

fn adapt_err(e: AdaptError) -> RunError {
    match e {
        AdaptError::BadConfig(m) => RunError::Config(m),
        other => RunError::Numerical(other.to_string()),
    }
}

/// Collects written artifact paths (relative to the output directory) so
/// the manifest can hash them all.
struct OutDir {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl OutDir {
    fn create(dir: &Path) -> Result<Self, RunError> {
        std::fs::create_dir_all(dir)?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<(), RunError> {
        std::fs::write(self.dir.join(name), content)?;
        self.files.push(PathBuf::from(name));
        Ok(())
    }

    fn write_mesh(&mut self, name: &str, mesh: &TriMesh) -> Result<(), RunError> {
        std::fs::write(self.dir.join(name), mesh.to_text())?;
        self.files.push(PathBuf::from(name));
        Ok(())
    }

    fn finish(self, command: &str, echo: &[String]) -> Result<(), RunError> {
        write_manifest(&self.dir, command, echo, &self.files)?;
        Ok(())
    }
}

fn f(x: f64) -> String {
    format!("{x:.12e}")
}

/// The ring ships a documented reference for its double second/third
/// eigenvalue; other domains need an explicit value.
fn resolved_reference(cfg: &RunConfig) -> Option<f64> {
    cfg.reference.or(match cfg.domain {
        DomainSpec::Ring => Some(RING_REFERENCE),
        _ => None,
    })
}

// ---------------------------------------------------------------- solve ----

pub fn solve(cfg: &RunConfig) -> Result<(), RunError> {
    let mesh = cfg.domain.build().map_err(RunError::Config)?;
    let cr = CrSpace::new(&mesh);
    let p1 = P1Space::new(&mesh);
    let nev = cfg.adapt.nev;
    if nev == 0 || nev > cr.ndof() || nev > p1.ndof() {
        return Err(RunError::Config(format!(
            "nev = {nev} out of range for this mesh (CR dimension {}, conforming {})",
            cr.ndof(),
            p1.ndof()
        )));
    }
    let opts = EigOptions {
        nev,
        seed: cfg.adapt.seed,
        ..Default::default()
    };
    let cr_set = solve_space(&cr, SpaceKind::CrouzeixRaviart, &opts)?;
    let p1_set = solve_space(&p1, SpaceKind::ConformingP1, &opts)?;

    println!(
        "domain {}  triangles {}  CR dof {}  conforming dof {}",
        cfg.domain.describe(),
        mesh.triangles().len(),
        cr.ndof(),
        p1.ndof()
    );
    println!(
        "{:>3}  {:>22}  {:>10}  {:>22}  {:>10}",
        "k", "lambda_cr", "res_cr", "lambda_conf", "res_conf"
    );
    for k in 0..nev {
        println!(
            "{:>3}  {:>22.12e}  {:>10.2e}  {:>22.12e}  {:>10.2e}",
            k + 1,
            cr_set.pairs[k].value,
            cr_set.pairs[k].residual,
            p1_set.pairs[k].value,
            p1_set.pairs[k].residual
        );
    }

    if let Some(dir) = &cfg.out {
        let mut out = OutDir::create(dir)?;
        let mut csv = String::from("k,lambda_cr,residual_cr,lambda_conf,residual_conf\n");
        for k in 0..nev {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                k + 1,
                f(cr_set.pairs[k].value),
                f(cr_set.pairs[k].residual),
                f(p1_set.pairs[k].value),
                f(p1_set.pairs[k].residual)
            );
        }
        out.write("spectrum.csv", &csv)?;
        out.finish("solve", &crate::config::echo_lines(cfg))?;
    }
    Ok(())
}

fn solve_space<S: FeSpace>(
    space: &S,
    kind: SpaceKind,
    opts: &EigOptions,
) -> Result<SpectralSet, RunError> {
    let a = assemble_stiffness(space).map_err(|e| RunError::Numerical(e.to_string()))?;
    let m = assemble_mass(space).map_err(|e| RunError::Numerical(e.to_string()))?;
    Ok(fix_signs(
        smallest_eigenpairs(&a, &m, kind, opts).map_err(|e| RunError::Numerical(e.to_string()))?,
    ))
}

// ---------------------------------------------------------------- adapt ----

/// Pinned adaptive-history CSV: one row per iteration.
pub fn records_csv(records: &[AdaptRecord], nev: usize) -> String {
    let mut head = String::from("iter,ndof");
    for k in 1..=nev {
        let _ = write!(head, ",lambda_{k}");
    }
    head.push_str(",mu2_cluster,eta2_cluster,marked,gap_vc,seconds\n");
    let mut csv = head;
    for r in records {
        let _ = write!(csv, "{},{}", r.iter, r.ndof);
        for l in &r.lambdas {
            let _ = write!(csv, ",{}", f(*l));
        }
        let _ = writeln!(
            csv,
            ",{},{},{},{},{:.6e}",
            f(r.mu2_cluster),
            f(r.eta2_cluster),
            r.marked,
            f(r.gap_vc),
            r.seconds
        );
    }
    csv
}

fn indicator_csv(view: &IterationView, member_offset: usize) -> String {
    let field = &view.fields[member_offset];
    let mut csv = String::from("elem_id,mu2,eta2\n");
    for e in 0..field.mu2.len() {
        let _ = writeln!(csv, "{e},{},{}", f(field.mu2[e]), f(field.eta2[e]));
    }
    csv
}

fn effectivity_csv(records: &[AdaptRecord], reference: f64) -> String {
    let mut csv = String::from("iter,ndof,error,indicator_total,effectivity\n");
    for r in records {
        let rec = creig::estimators::effectivity_record(
            r.cluster.clone(),
            &r.lambdas[r.cluster.clone()],
            &r.mu2_members,
            reference,
        );
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.iter,
            r.ndof,
            f(rec.error),
            f(rec.indicator_total),
            f(rec.effectivity)
        );
    }
    csv
}

/// Two-column gnuplot-ready plot data derived from the records.
fn emit_plot_data(
    out: &mut OutDir,
    records: &[AdaptRecord],
    reference: Option<f64>,
) -> Result<(), RunError> {
    if records.is_empty() {
        return Ok(());
    }
    let nev = records[0].lambdas.len();
    for k in 0..nev {
        let mut dat = String::new();
        for r in records {
            let _ = writeln!(dat, "{} {}", r.iter, f(r.lambdas[k]));
        }
        out.write(&format!("eigenvalue_k{:02}.dat", k + 1), &dat)?;
    }
    {
        let mut dat = String::new();
        for r in records {
            let _ = writeln!(dat, "{} {}", r.ndof, f(r.gap_vc));
        }
        out.write("gap_vs_ndof.dat", &dat)?;
    }
    {
        let mut dat = String::new();
        for r in records {
            let _ = writeln!(dat, "{} {}", r.ndof, f(r.mu2_cluster + r.eta2_cluster));
        }
        out.write("estimator_vs_ndof.dat", &dat)?;
    }
    if let Some(reference) = reference {
        let mut abs = String::new();
        let mut signed = String::new();
        let mut eff = String::new();
        for r in records {
            let j = r.cluster.len() as f64;
            let err_abs: f64 = r.lambdas[r.cluster.clone()]
                .iter()
                .map(|&l| (reference - l).abs())
                .sum::<f64>()
                / j;
            let err_signed: f64 = r.lambdas[r.cluster.clone()]
                .iter()
                .map(|&l| reference - l)
                .sum::<f64>()
                / j;
            let _ = writeln!(abs, "{} {}", r.ndof, f(err_abs));
            let _ = writeln!(signed, "{} {}", r.ndof, f(err_signed));
            let e = if r.mu2_cluster > 0.0 {
                err_abs * j / r.mu2_cluster
            } else {
                f64::INFINITY
            };
            let _ = writeln!(eff, "{} {}", r.iter, f(e));
        }
        out.write("error_abs_vs_ndof.dat", &abs)?;
        out.write("error_signed_vs_ndof.dat", &signed)?;
        out.write("effectivity_vs_iter.dat", &eff)?;
    }
    Ok(())
}

pub fn adapt(cfg: &RunConfig) -> Result<(), RunError> {
    let mesh = cfg.domain.build().map_err(RunError::Config)?;
    let reference = resolved_reference(cfg);
    let mut out = match &cfg.out {
        Some(dir) => Some(OutDir::create(dir)?),
        None => None,
    };
    let mut io_failure: Option<RunError> = None;

    let outcome = adaptive_loop(&mesh, &cfg.adapt, |view| {
        let iter = view.record.iter;
        print_progress(view);
        if let (Some(out), None) = (out.as_mut(), io_failure.as_ref()) {
            let res = (|| -> Result<(), RunError> {
                out.write_mesh(&format!("mesh_i{iter:03}.txt"), view.mesh)?;
                for off in 0..view.fields.len() {
                    let member = view.cluster.members.start + off + 1;
                    out.write(
                        &format!("indicators_i{iter:03}_k{member:02}.csv"),
                        &indicator_csv(view, off),
                    )?;
                }
                Ok(())
            })();
            if let Err(e) = res {
                io_failure = Some(e);
            }
        }
    })
    .map_err(adapt_err)?;
    if let Some(e) = io_failure {
        return Err(e);
    }

    println!(
        "finished after {} iterations at {} degrees of freedom",
        outcome.records.len(),
        outcome.records.last().map(|r| r.ndof).unwrap_or(0)
    );
    if let Some(r) = outcome.records.last() {
        let vals: Vec<String> = r.cluster.clone().map(|k| f(r.lambdas[k])).collect();
        println!(
            "cluster {{{}}}: {}",
            r.cluster
                .clone()
                .map(|k| (k + 1).to_string())
                .collect::<Vec<_>>()
                .join(","),
            vals.join("  ")
        );
    }

    if let Some(mut out) = out.take() {
        out.write("adapt.csv", &records_csv(&outcome.records, cfg.adapt.nev))?;
        if let Some(reference) = reference {
            out.write(
                "effectivity.csv",
                &effectivity_csv(&outcome.records, reference),
            )?;
        }
        emit_plot_data(&mut out, &outcome.records, reference)?;
        out.write_mesh("mesh_final.txt", &outcome.final_mesh)?;
        out.finish("adapt", &crate::config::echo_lines(cfg))?;
    }
    Ok(())
}

fn print_progress(view: &IterationView) {
    let r = view.record;
    let cluster_vals: Vec<String> = r
        .cluster
        .clone()
        .map(|k| format!("{:.6}", r.lambdas[k]))
        .collect();
    println!(
        "iter {:3}  ndof {:7}  cluster [{}]  mu2 {:.3e}  eta2 {:.3e}  gap {:.3e}  marked {}",
        r.iter,
        r.ndof,
        cluster_vals.join(", "),
        r.mu2_cluster,
        r.eta2_cluster,
        r.gap_vc,
        r.marked
    );
}

// ---------------------------------------------------------------- audit ----

pub fn audit(cfg: &RunConfig) -> Result<(), RunError> {
    let reference = resolved_reference(cfg).ok_or_else(|| {
        RunError::Config(
            "audit needs a reference value: pass --reference, set [audit] reference, \
             or use the ring domain (built-in reference)"
                .to_string(),
        )
    })?;
    let mesh = cfg.domain.build().map_err(RunError::Config)?;
    let mut out = match &cfg.out {
        Some(dir) => Some(OutDir::create(dir)?),
        None => None,
    };

    let mut audit_csv = String::from("iter,case,j,lhs,rhs,ratio\n");
    let mut sep_csv = String::from("iter,beta,opnorm,lhs,rhs\n");
    let mut notes: Vec<String> = Vec::new();
    let mut audit_failure: Option<String> = None;

    let outcome = adaptive_loop(&mesh, &cfg.adapt, |view| {
        if audit_failure.is_some() {
            return;
        }
        let report = match view.ctx.audit_bounds(
            view.cr_set,
            view.conf_set,
            view.cluster.members.clone(),
            reference,
            cfg.adapt.rule,
        ) {
            Ok(r) => r,
            Err(e) => {
                audit_failure = Some(e.to_string());
                return;
            }
        };
        let iter = view.record.iter;
        println!(
            "iter {:3}  ndof {:7}  case {}  rows {}",
            iter,
            view.record.ndof,
            report.case,
            report.rows.len()
        );
        for row in &report.rows {
            let _ = writeln!(
                audit_csv,
                "{iter},{},{},{},{},{}",
                row.label,
                row.j,
                f(row.lhs),
                f(row.rhs),
                f(row.ratio())
            );
        }
        if let Some(sep) = &report.separation {
            let _ = writeln!(
                sep_csv,
                "{iter},{},{},{},{}",
                f(sep.beta),
                f(sep.opnorm),
                f(sep.lhs),
                f(sep.rhs)
            );
        }
        for n in report.notes {
            if !notes.contains(&n) {
                notes.push(n);
            }
        }
    })
    .map_err(adapt_err)?;
    if let Some(e) = audit_failure {
        return Err(RunError::Numerical(e));
    }

    for n in &notes {
        println!("note: {n}");
    }

    if let Some(mut out) = out.take() {
        out.write("audit.csv", &audit_csv)?;
        out.write("audit_separation.csv", &sep_csv)?;
        out.write("adapt.csv", &records_csv(&outcome.records, cfg.adapt.nev))?;
        let mut echo = crate::config::echo_lines(cfg);
        echo.push(format!("resolved_reference = {reference}"));
        out.finish("audit", &echo)?;
    }
    Ok(())
}

// ------------------------------------------------------------ reference ----

pub struct ReferenceRow {
    pub k: usize,
    pub estimate: Result<ReferenceEstimate, String>,
}

pub fn reference(cfg: &RunConfig) -> Result<(), RunError> {
    let nev = cfg.adapt.nev;
    let mut mesh = cfg.domain.build().map_err(RunError::Config)?;
    let mut per_level: Vec<(usize, Vec<f64>)> = Vec::new();
    for level in 0..cfg.levels {
        let p1 = P1Space::new(&mesh);
        if p1.ndof() < nev {
            return Err(RunError::Config(format!(
                "level {level}: conforming space has {} degrees of freedom but nev = {nev}",
                p1.ndof()
            )));
        }
        let opts = EigOptions {
            nev,
            seed: cfg.adapt.seed,
            ..Default::default()
        };
        let set = solve_space(&p1, SpaceKind::ConformingP1, &opts)?;
        let values: Vec<f64> = set.pairs.iter().map(|p| p.value).collect();
        println!(
            "level {level}  ndof {:7}  {}",
            p1.ndof(),
            values
                .iter()
                .map(|v| format!("{v:.8}"))
                .collect::<Vec<_>>()
                .join("  ")
        );
        per_level.push((p1.ndof(), values));
        if level + 1 < cfg.levels {
            mesh = mesh.refine_all();
        }
    }

    let mut rows: Vec<ReferenceRow> = Vec::new();
    for k in 0..nev {
        let seq: Vec<f64> = per_level.iter().map(|(_, v)| v[k]).collect();
        rows.push(ReferenceRow {
            k: k + 1,
            estimate: aitken_extrapolate(&seq).map_err(|e| e.to_string()),
        });
    }
    let mut any_ok = false;
    for row in &rows {
        match &row.estimate {
            Ok(est) => {
                any_ok = true;
                println!(
                    "k {:2}: extrapolated {:.10}  residual {:.3e}",
                    row.k, est.value, est.residual
                );
            }
            Err(e) => println!("k {:2}: extrapolation failed: {e}", row.k),
        }
    }
    if !any_ok {
        return Err(RunError::Numerical(
            "no eigenvalue sequence admitted Aitken extrapolation".to_string(),
        ));
    }

    if let Some(dir) = &cfg.out {
        let mut out = OutDir::create(dir)?;
        let mut levels_csv = String::from("level,ndof");
        for k in 1..=nev {
            let _ = write!(levels_csv, ",lambda_{k}");
        }
        levels_csv.push('\n');
        for (level, (ndof, values)) in per_level.iter().enumerate() {
            let _ = write!(levels_csv, "{level},{ndof}");
            for v in values {
                let _ = write!(levels_csv, ",{}", f(*v));
            }
            levels_csv.push('\n');
        }
        out.write("reference_levels.csv", &levels_csv)?;
        let mut ref_csv = String::from("k,value,residual\n");
        for row in &rows {
            if let Ok(est) = &row.estimate {
                let _ = writeln!(ref_csv, "{},{},{}", row.k, f(est.value), f(est.residual));
            }
        }
        out.write("reference.csv", &ref_csv)?;
        out.finish("reference", &crate::config::echo_lines(cfg))?;
    }
    Ok(())
}

// ------------------------------------------------------------ mesh-info ----

pub fn mesh_info(cfg: &RunConfig) -> Result<(), RunError> {
    let mesh = cfg.domain.build().map_err(RunError::Config)?;
    let cr = CrSpace::new(&mesh);
    let p1 = P1Space::new(&mesh);
    let boundary_edges = mesh.edges().iter().filter(|e| e.on_boundary).count();
    let min_angle = mesh.min_angle();
    println!("domain            {}", cfg.domain.describe());
    println!("vertices          {}", mesh.vertices().len());
    println!("triangles         {}", mesh.triangles().len());
    println!(
        "edges             {} ({} boundary)",
        mesh.edges().len(),
        boundary_edges
    );
    println!("CR dof            {}", cr.ndof());
    println!("conforming dof    {}", p1.ndof());
    println!("total area        {:.12}", mesh.total_area());
    println!("min angle (deg)   {:.6}", min_angle.to_degrees());
    println!("euler char        {}", mesh.euler_characteristic());
    println!("holes             {}", mesh.holes());
    if let Some(dir) = &cfg.out {
        let mut out = OutDir::create(dir)?;
        out.write_mesh("mesh.txt", &mesh)?;
        out.finish("mesh-info", &crate::config::echo_lines(cfg))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use creig::eigensolve::EigError;

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(RunError::Config("x".into()).exit_code(), 1);
        assert_eq!(RunError::Io(std::io::Error::other("x")).exit_code(), 1);
        assert_eq!(RunError::Numerical("x".into()).exit_code(), 2);
    }

    #[test]
    fn solver_failures_map_to_the_numerical_exit() {
        let e = adapt_err(AdaptError::Eigen(EigError::NotConverged {
            iters: 7,
            worst: 1.0,
        }));
        assert_eq!(e.exit_code(), 2);
        let e = adapt_err(AdaptError::BadConfig("bad".into()));
        assert_eq!(e.exit_code(), 1);
    }
}
