//! Batch driver for bifurcation-entropy experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod heatmap;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bifent::entropy::{least_squares, report_on_table};
use bifent::{
    bowen_profile_refined, brin_katok, build_measure_grid, estimate_h_metric, graph_volume_growth,
    orbit_table, pointwise_dimension, BallMethod, Error, Family, MarkedFamily, MeasureGrid64,
    Parameter64, Region, SampleCloud64,
};
use serde::Serialize;

use crate::config::{CloudConfig, ExperimentConfig};
use crate::heatmap::{render_heatmap, Field, HeatmapError, Scale};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Measure,
    Entropy,
    MetricEntropy,
    BrinKatok,
    Dimension,
    Volume,
    Heatmap,
    All,
}

/// Failure classes, each with its own exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Io(_) => 4,
        }
    }

    /// Machine-readable form printed on stderr.
    pub fn to_json(&self) -> String {
        let (kind, message) = match self {
            RunError::Config(m) => ("config", m),
            RunError::Numerical(m) => ("numerical", m),
            RunError::Io(m) => ("io", m),
        };
        serde_json::json!({ "error": { "kind": kind, "message": message, "exit_code": self.exit_code() } })
            .to_string()
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::ZeroMass
            | Error::UndefinedDimension
            | Error::IndexOutOfRange { .. }
            | Error::DepthExceeded { .. } => RunError::Numerical(e.to_string()),
            _ => RunError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<HeatmapError> for RunError {
    fn from(e: HeatmapError) -> Self {
        match e {
            HeatmapError::EmptyField | HeatmapError::Shape { .. } => {
                RunError::Numerical(e.to_string())
            }
            _ => RunError::Io(e.to_string()),
        }
    }
}

/// Stamped into every output.
#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub version: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub family: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub meta: Meta,
    pub stages: Vec<String>,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extrapolated_h: Option<f64>,
}

struct Runner<'a> {
    config: &'a ExperimentConfig,
    out: PathBuf,
    family: Family,
    meta: Meta,
    quiet: bool,
    grid: Option<MeasureGrid64>,
    cloud: Option<SampleCloud64>,
    summary: Summary,
}

/// Validates `config` and runs `stage`, writing artifacts under the
/// configured output directory.
pub fn run(config: &ExperimentConfig, stage: Stage, quiet: bool) -> Result<Summary, RunError> {
    config.validate().map_err(RunError::Config)?;
    let family = config.family().map_err(RunError::Config)?;
    fs::create_dir_all(&config.output_dir)?;
    let meta = Meta {
        version: env!("CARGO_PKG_VERSION"),
        config_hash: config.hash(),
        seed: config.seed,
        family: family.id(),
    };
    let mut runner = Runner {
        config,
        out: config.output_dir.clone(),
        family,
        summary: Summary {
            meta: meta.clone(),
            stages: Vec::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
            extrapolated_h: None,
        },
        meta,
        quiet,
        grid: None,
        cloud: None,
    };
    let stages = match stage {
        Stage::All => vec![
            Stage::Measure,
            Stage::Entropy,
            Stage::MetricEntropy,
            Stage::BrinKatok,
            Stage::Dimension,
            Stage::Volume,
            Stage::Heatmap,
        ],
        s => vec![s],
    };
    for s in stages {
        runner.log(&format!("stage {s:?}"));
        match s {
            Stage::Measure => runner.measure()?,
            Stage::Entropy => runner.entropy()?,
            Stage::MetricEntropy => runner.metric_entropy()?,
            Stage::BrinKatok => runner.brin_katok()?,
            Stage::Dimension => runner.dimension()?,
            Stage::Volume => runner.volume()?,
            Stage::Heatmap => runner.heatmap()?,
            Stage::All => unreachable!(),
        }
        runner.summary.stages.push(format!("{s:?}"));
    }
    let path = runner.path("summary.json");
    let summary = runner.summary.clone();
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &summary).map_err(|e| RunError::Io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(summary)
}

fn csv_preamble(meta: &Meta) -> Vec<String> {
    vec![
        format!("bifent {}", meta.version),
        format!("config_hash {}", meta.config_hash),
        format!("seed {}", meta.seed),
        format!("family {}", meta.family),
    ]
}

#[derive(Serialize)]
struct Stamped<'a, R: Serialize> {
    meta: &'a Meta,
    #[serde(flatten)]
    report: R,
}

impl Runner<'_> {
    fn log(&self, msg: &str) {
        if !self.quiet {
            eprintln!("bifent: {msg}");
        }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.summary.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, RunError> {
        let path = self.path(name);
        Ok(BufWriter::new(File::create(path)?))
    }

    fn write_json<R: Serialize>(&mut self, name: &str, report: R) -> Result<(), RunError> {
        let meta = self.meta.clone();
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(
            &mut w,
            &Stamped {
                meta: &meta,
                report,
            },
        )
        .map_err(|e| RunError::Io(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn write_csv(&mut self, name: &str, header: &str, rows: &[String]) -> Result<(), RunError> {
        let preamble = csv_preamble(&self.meta);
        let mut w = self.create(name)?;
        for line in preamble {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush()?;
        Ok(())
    }

    fn grid(&mut self) -> Result<&MeasureGrid64, RunError> {
        if self.grid.is_none() {
            let c = &self.config.grid;
            let spec = self.config.grid_spec().map_err(RunError::Config)?;
            self.log(&format!("building {}×{} measure grid", c.nx, c.ny));
            let grid = build_measure_grid(&self.family, spec, c.tol, c.stencil)?;
            if grid.clamped_fraction > self.config.thresholds.max_clamped_fraction {
                return Err(RunError::Numerical(format!(
                    "clamped negative mass fraction {} exceeds {}",
                    grid.clamped_fraction, self.config.thresholds.max_clamped_fraction
                )));
            }
            self.summary.warnings.extend(grid.warnings.iter().cloned());
            self.grid = Some(grid);
        }
        Ok(self.grid.as_ref().unwrap())
    }

    fn cloud(&mut self) -> Result<SampleCloud64, RunError> {
        if self.cloud.is_none() {
            let region = self.config.entropy.region;
            let cloud = match self.config.entropy.cloud {
                CloudConfig::Grid { nx, ny } => region.grid_cloud(nx, ny)?,
                CloudConfig::Measure { count, levels } => {
                    let seed = self.config.seed;
                    region.measure_cloud(self.grid()?, count, seed, levels)?
                }
            };
            if cloud.is_empty() {
                return Err(RunError::Config(
                    "entropy region contains no cloud points".into(),
                ));
            }
            self.log(&format!("cloud of {} points", cloud.len()));
            self.cloud = Some(cloud);
        }
        Ok(self.cloud.clone().unwrap())
    }

    fn measure(&mut self) -> Result<(), RunError> {
        self.grid()?;
        let preamble = csv_preamble(&self.meta);
        let mut w = self.create("measure_grid.csv")?;
        self.grid.as_ref().unwrap().write_csv(&mut w, &preamble)?;
        w.flush()?;
        let header = self.grid.as_ref().unwrap().header();
        self.write_json("measure_grid.json", header)
    }

    fn entropy(&mut self) -> Result<(), RunError> {
        let cloud = self.cloud()?;
        let e = &self.config.entropy;
        let table = orbit_table(&self.family, cloud.params(), *e.n_list.last().unwrap())?;
        let report = report_on_table(&table, &cloud, &e.n_list, &e.epsilon_list, e.distance)?;
        let saturated = report.saturated.iter().flatten().filter(|&&s| s).count();
        if saturated > 0 {
            self.summary
                .warnings
                .push(format!("entropy: {saturated} saturated (n, ε) cells"));
        }
        if report.discordant {
            self.summary
                .warnings
                .push("entropy: fits A and B disagree by more than 0.1".into());
        }
        if report.inconclusive {
            self.summary
                .warnings
                .push("entropy: no fit window, result inconclusive".into());
        }
        self.summary.extrapolated_h = report.extrapolated_h;
        let preamble = csv_preamble(&self.meta);
        let mut w = self.create("entropy.csv")?;
        report.write_csv(&mut w, &preamble)?;
        w.flush()?;
        self.write_json("entropy.json", &report)
    }

    fn metric_entropy(&mut self) -> Result<(), RunError> {
        let cloud = self.cloud()?;
        let region: Region = self.config.entropy.region;
        let e = self.config.entropy.clone();
        let kappas = self.config.metric_entropy.kappa_list.clone();
        let table = orbit_table(&self.family, cloud.params(), *e.n_list.last().unwrap())?;
        let grid = self.grid()?;
        let mask: Vec<bool> = grid
            .spec
            .centers()
            .iter()
            .map(|c| region.contains(*c))
            .collect();
        let report = estimate_h_metric(
            grid,
            &table,
            &cloud,
            &mask,
            &kappas,
            &e.n_list,
            &e.epsilon_list,
            e.distance,
        )?;
        let preamble = csv_preamble(&self.meta);
        for k in &report.per_kappa {
            let mut w = self.create(&format!("metric_entropy_kappa_{}.csv", k.kappa))?;
            k.report.write_csv(&mut w, &preamble)?;
            w.flush()?;
        }
        self.write_json("metric_entropy.json", &report)
    }

    fn brin_katok(&mut self) -> Result<(), RunError> {
        let c = self.config.brin_katok.clone();
        let seed = self.config.seed;
        let method = if c.window == 0 {
            BallMethod::CellRepresentative
        } else {
            BallMethod::Refined { window: c.window }
        };
        let report = brin_katok(
            self.grid()?,
            c.samples,
            seed,
            c.levels,
            &c.n_list,
            c.epsilon,
            method,
        )?;
        if report.skipped > 0 {
            self.summary
                .warnings
                .push(format!("brin-katok: {} samples skipped", report.skipped));
        }
        let rows: Vec<String> = report
            .samples
            .iter()
            .zip(&report.slopes)
            .map(|(p, s)| {
                format!(
                    "{},{},{}",
                    p[0],
                    p[1],
                    s.map_or("nan".to_string(), |s| s.to_string())
                )
            })
            .collect();
        self.write_csv("brin_katok.csv", "re,im,slope", &rows)?;
        self.write_json("brin_katok.json", &report)
    }

    fn dimension(&mut self) -> Result<(), RunError> {
        let c = self.config.dimension.clone();
        let grid = self.grid()?;
        let reports = c
            .centers
            .iter()
            .map(|p| pointwise_dimension(grid, &Parameter64::from_re_im(p[0], p[1]), &c.r_list))
            .collect::<Result<Vec<_>, _>>()?;
        let rows: Vec<String> = reports
            .iter()
            .flat_map(|d| {
                d.radii
                    .iter()
                    .zip(&d.masses)
                    .map(move |(r, m)| format!("{},{},{r},{m}", d.center[0], d.center[1]))
            })
            .collect();
        self.write_csv("dimension.csv", "re,im,r,mass", &rows)?;
        self.write_json("dimension.json", serde_json::json!({ "reports": reports }))
    }

    fn volume(&mut self) -> Result<(), RunError> {
        let v = &self.config.volume;
        let report = graph_volume_growth(&self.family, &v.region, v.n_max, v.resolution)?;
        if report.overflow_nodes > 0 {
            self.summary.warnings.push(format!(
                "volume: {} quadrature nodes overflowed",
                report.overflow_nodes
            ));
        }
        let rows: Vec<String> = (0..report.volumes.len())
            .map(|i| {
                format!(
                    "{},{},{},{}",
                    i + 1,
                    report.terms[i],
                    report.volumes[i],
                    report.rates[i]
                )
            })
            .collect();
        self.write_csv("volume.csv", "n,term,volume,rate", &rows)?;
        self.write_json("volume.json", &report)
    }

    fn heatmap(&mut self) -> Result<(), RunError> {
        let hm = self.config.heatmap.clone();
        let text = vec![
            ("bifent-version".to_string(), self.meta.version.to_string()),
            ("config-hash".to_string(), self.meta.config_hash.clone()),
            ("seed".to_string(), self.meta.seed.to_string()),
        ];
        let grid = self.grid()?.clone();
        let spec = grid.spec;
        let potential: Vec<f64> = grid.potential.values.clone();
        // Sub-threshold cells hold rounding noise that dominates a log scale.
        let mass: Vec<f64> = match hm.mass_scale {
            Scale::Log => grid
                .cell_mass
                .iter()
                .map(|&m| {
                    if m > grid.support_threshold {
                        m
                    } else {
                        f64::NAN
                    }
                })
                .collect(),
            Scale::Linear => grid.cell_mass.clone(),
        };
        let field = |values| Field {
            values,
            nx: spec.nx,
            ny: spec.ny,
            region: spec.region,
        };
        let path = self.path("potential.png");
        render_heatmap(&field(&potential), hm.potential_scale, &path, &text)?;
        let path = self.path("cell_mass.png");
        render_heatmap(&field(&mass), hm.mass_scale, &path, &text)?;

        let (bx, by, slopes) = local_entropy_field(
            &grid,
            hm.local_entropy_stride,
            &hm.local_entropy_n_list,
            hm.local_entropy_epsilon,
        );
        let path = self.path("local_entropy.png");
        render_heatmap(
            &Field {
                values: &slopes,
                nx: bx,
                ny: by,
                region: spec.region,
            },
            Scale::Linear,
            &path,
            &text,
        )?;
        Ok(())
    }
}

/// Brin–Katok slope on blocks of `stride × stride` cells: evaluated at the
/// heaviest cell of each block that clears the support threshold, NaN
/// elsewhere.
pub fn local_entropy_field(
    grid: &MeasureGrid64,
    stride: usize,
    n_list: &[usize],
    eps: f64,
) -> (usize, usize, Vec<f64>) {
    use rayon::prelude::*;
    let spec = grid.spec;
    let (bx, by) = (spec.nx.div_ceil(stride), spec.ny.div_ceil(stride));
    let n_max = *n_list.last().unwrap();
    let xs: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
    let values = (0..bx * by)
        .into_par_iter()
        .map(|b| {
            let (i, j) = (b % bx, b / bx);
            let mut best: Option<(usize, f64)> = None;
            for row in j * stride..((j + 1) * stride).min(spec.ny) {
                for col in i * stride..((i + 1) * stride).min(spec.nx) {
                    let k = spec.index(col, row);
                    let m = grid.cell_mass[k];
                    if m > grid.support_threshold && best.is_none_or(|(_, bm)| m > bm) {
                        best = Some((k, m));
                    }
                }
            }
            let Some((k, _)) = best else { return f64::NAN };
            let (col, row) = spec.col_row(k);
            let c = spec.center(col as isize, row as isize);
            let Ok(masses) = bowen_profile_refined(grid, &Parameter64::one(c), n_max, eps, 24)
            else {
                return f64::NAN;
            };
            let ys: Vec<f64> = n_list.iter().map(|&n| -masses[n - 1].ln()).collect();
            if ys.iter().any(|y| !y.is_finite()) {
                return f64::NAN;
            }
            least_squares(&xs, &ys).map_or(f64::NAN, |f| f.0)
        })
        .collect();
    (bx, by, values)
}

/// Reads a configuration file; a missing path yields the defaults.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, RunError> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| RunError::Io(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| RunError::Config(format!("{}: {e}", p.display())))
        }
    }
}
