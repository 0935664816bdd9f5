//! Experiment configuration: parsing, presets, validation and hashing.

use std::path::PathBuf;

use bifent::measure::{DEFAULT_SAMPLE_LEVELS, DEFAULT_WINDOW_CELLS, MIN_RESOLUTION};
use bifent::{DistanceKind, Family, GridSpec, MarkedFamily, Rect, Region, Stencil};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::heatmap::Scale;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Family identifier, e.g. `unicritical:2` or `cubic2c`.
    pub family: String,
    pub grid: GridConfig,
    pub entropy: EntropyConfig,
    pub metric_entropy: MetricEntropyConfig,
    pub brin_katok: BrinKatokConfig,
    pub dimension: DimensionConfig,
    pub volume: VolumeConfig,
    pub heatmap: HeatmapConfig,
    pub thresholds: Thresholds,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            family: "unicritical:2".into(),
            grid: GridConfig::default(),
            entropy: EntropyConfig::default(),
            metric_entropy: MetricEntropyConfig::default(),
            brin_katok: BrinKatokConfig::default(),
            dimension: DimensionConfig::default(),
            volume: VolumeConfig::default(),
            heatmap: HeatmapConfig::default(),
            thresholds: Thresholds::default(),
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub region: Rect,
    pub nx: usize,
    pub ny: usize,
    pub stencil: Stencil,
    pub tol: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            region: Rect {
                re_min: -2.5,
                re_max: 1.5,
                im_min: -1.5,
                im_max: 1.5,
            },
            nx: 400,
            ny: 300,
            stencil: Stencil::NinePoint,
            tol: 1e-10,
        }
    }
}

/// How the sample cloud for separated-set counts is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CloudConfig {
    /// Cell centres of an `nx × ny` lattice over the region's bounding box.
    Grid { nx: usize, ny: usize },
    /// Draws from `μ_bif` restricted to the region.
    Measure { count: usize, levels: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyConfig {
    pub region: Region,
    pub cloud: CloudConfig,
    pub n_list: Vec<usize>,
    pub epsilon_list: Vec<f64>,
    pub distance: DistanceKind,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig {
            region: Region::Annulus {
                center: [-0.25, 0.0],
                inner: 0.45,
                outer: 1.8,
            },
            cloud: CloudConfig::Measure {
                count: 40_000,
                levels: 20,
            },
            n_list: (1..=14).collect(),
            epsilon_list: vec![0.4, 0.2, 0.1, 0.05],
            distance: DistanceKind::Plain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricEntropyConfig {
    pub kappa_list: Vec<f64>,
}

impl Default for MetricEntropyConfig {
    fn default() -> Self {
        MetricEntropyConfig {
            kappa_list: vec![0.1, 0.01, 0.001],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrinKatokConfig {
    pub samples: usize,
    pub levels: usize,
    pub n_list: Vec<usize>,
    pub epsilon: f64,
    /// Zoom-window cells per side; 0 selects cell-representative balls.
    pub window: usize,
}

impl Default for BrinKatokConfig {
    fn default() -> Self {
        BrinKatokConfig {
            samples: 100,
            levels: DEFAULT_SAMPLE_LEVELS,
            n_list: (4..=14).collect(),
            epsilon: 0.05,
            window: DEFAULT_WINDOW_CELLS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimensionConfig {
    pub centers: Vec<[f64; 2]>,
    pub r_list: Vec<f64>,
}

impl Default for DimensionConfig {
    fn default() -> Self {
        DimensionConfig {
            centers: vec![[-2.0, 0.0]],
            r_list: vec![0.4, 0.2, 0.1, 0.05],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeConfig {
    pub region: Region,
    pub n_max: usize,
    pub resolution: usize,
}

impl Default for VolumeConfig {
    fn default() -> Self {
        VolumeConfig {
            region: Region::Rect {
                rect: Rect {
                    re_min: -2.5,
                    re_max: 1.5,
                    im_min: -2.0,
                    im_max: 2.0,
                },
            },
            n_max: 14,
            resolution: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    pub potential_scale: Scale,
    pub mass_scale: Scale,
    /// The local-entropy field is evaluated on blocks of `stride × stride`
    /// grid cells.
    pub local_entropy_stride: usize,
    pub local_entropy_n_list: Vec<usize>,
    pub local_entropy_epsilon: f64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        HeatmapConfig {
            potential_scale: Scale::Linear,
            mass_scale: Scale::Log,
            local_entropy_stride: 8,
            local_entropy_n_list: (4..=10).collect(),
            local_entropy_epsilon: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Runs fail numerically when the clamped negative mass exceeds this
    /// fraction.
    pub max_clamped_fraction: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            max_clamped_fraction: 0.01,
        }
    }
}

/// Named entropy regions selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RegionPreset {
    /// Disk of radius 0.05 at 0, inside the main cardioid, on a uniform cloud.
    CardioidDisk,
    /// Annulus 0.45 ≤ |λ + 1/4| ≤ 1.8 covering the boundary, `μ_bif` cloud.
    Annulus,
}

impl ExperimentConfig {
    pub fn apply_preset(&mut self, preset: RegionPreset) {
        match preset {
            RegionPreset::CardioidDisk => {
                self.entropy.region = Region::Disk {
                    center: [0.0, 0.0],
                    radius: 0.05,
                };
                self.entropy.cloud = CloudConfig::Grid { nx: 60, ny: 60 };
                self.entropy.epsilon_list = vec![0.013, 0.007];
            }
            RegionPreset::Annulus => {
                let d = EntropyConfig::default();
                self.entropy.region = d.region;
                self.entropy.cloud = d.cloud;
                self.entropy.epsilon_list = d.epsilon_list;
            }
        }
    }

    pub fn family(&self) -> Result<Family, String> {
        self.family.parse::<Family>().map_err(|e| e.to_string())
    }

    pub fn grid_spec(&self) -> Result<GridSpec, String> {
        GridSpec::new(self.grid.region, self.grid.nx, self.grid.ny).map_err(|e| e.to_string())
    }

    /// Checks every range and guard before any computation.
    pub fn validate(&self) -> Result<(), String> {
        let fam = self.family()?;
        if fam.dim_lambda() != 1 {
            return Err(format!(
                "family `{}` has a 2-dimensional parameter space; grids need dim 1",
                self.family
            ));
        }
        let spec = self.grid_spec()?;
        if spec.nx < MIN_RESOLUTION || spec.ny < MIN_RESOLUTION {
            return Err(format!(
                "grid resolution must be at least {MIN_RESOLUTION} per side"
            ));
        }
        if self.grid.stencil == Stencil::NinePoint && !spec.is_square() {
            return Err("the nine-point stencil needs square cells".into());
        }
        if !(self.grid.tol > 0.0) {
            return Err("grid.tol must be > 0".into());
        }
        let h = spec.cell_size();

        self.entropy.region.validate().map_err(|e| e.to_string())?;
        check_n_list("entropy.n_list", &self.entropy.n_list)?;
        check_positive("entropy.epsilon_list", &self.entropy.epsilon_list)?;
        match self.entropy.cloud {
            CloudConfig::Grid { nx, ny } if nx == 0 || ny == 0 => {
                return Err("entropy.cloud grid resolution must be positive".into())
            }
            CloudConfig::Measure { count: 0, .. } => {
                return Err("entropy.cloud.count must be positive".into())
            }
            _ => {}
        }

        if self.metric_entropy.kappa_list.is_empty()
            || self
                .metric_entropy
                .kappa_list
                .iter()
                .any(|&k| !(k > 0.0 && k < 1.0))
        {
            return Err("metric_entropy.kappa_list needs values in (0, 1)".into());
        }

        let bk = &self.brin_katok;
        check_n_list("brin_katok.n_list", &bk.n_list)?;
        if bk.samples == 0 {
            return Err("brin_katok.samples must be positive".into());
        }
        if !(bk.epsilon > 0.0) {
            return Err("brin_katok.epsilon must be > 0".into());
        }
        if bk.window == 0 && bk.epsilon < 4.0 * h {
            return Err(format!(
                "brin_katok.epsilon {} is below 4 cell sizes ({}) for cell-representative balls",
                bk.epsilon,
                4.0 * h
            ));
        }
        if bk.window != 0 && bk.window < 4 {
            return Err("brin_katok.window must be 0 or at least 4".into());
        }

        if self.dimension.r_list.len() < 2 {
            return Err("dimension.r_list needs at least two radii".into());
        }
        check_positive("dimension.r_list", &self.dimension.r_list)?;
        if let Some(r) = self.dimension.r_list.iter().find(|&&r| r < 2.0 * h) {
            return Err(format!(
                "dimension radius {r} is below 2 cell sizes ({})",
                2.0 * h
            ));
        }
        for c in &self.dimension.centers {
            if !self.grid.region.contains(bifent::Complex::new(c[0], c[1])) {
                return Err(format!("dimension centre {c:?} lies outside the grid"));
            }
        }

        self.volume.region.validate().map_err(|e| e.to_string())?;
        if self.volume.n_max == 0 || self.volume.resolution == 0 {
            return Err("volume.n_max and volume.resolution must be positive".into());
        }

        let hm = &self.heatmap;
        if hm.local_entropy_stride == 0 {
            return Err("heatmap.local_entropy_stride must be positive".into());
        }
        check_n_list("heatmap.local_entropy_n_list", &hm.local_entropy_n_list)?;
        if hm.local_entropy_n_list.len() < 2 || !(hm.local_entropy_epsilon > 0.0) {
            return Err("heatmap local entropy needs two depths and epsilon > 0".into());
        }
        if !(self.thresholds.max_clamped_fraction >= 0.0) {
            return Err("thresholds.max_clamped_fraction must be >= 0".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex. The output
    /// directory does not affect results and is left out.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn check_n_list(name: &str, ns: &[usize]) -> Result<(), String> {
    if ns.is_empty() || ns[0] == 0 || ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(format!("{name} must be nonempty, positive and increasing"));
    }
    if *ns.last().unwrap() > 60 {
        return Err(format!("{name} exceeds the depth cap of 60"));
    }
    Ok(())
}

fn check_positive(name: &str, xs: &[f64]) -> Result<(), String> {
    if xs.is_empty() || xs.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(format!("{name} needs finite values > 0"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let json = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
        let mut moved = c.clone();
        moved.output_dir = "elsewhere".into();
        assert_eq!(moved.hash(), c.hash());
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"seed": 7, "grid": {"nx": 128, "ny": 96}}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.grid.nx, 128);
        assert_eq!(c.grid.tol, 1e-10);
        assert_ne!(c.hash(), ExperimentConfig::default().hash());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sed": 1}"#).is_err());
        let bad = |f: fn(&mut ExperimentConfig)| {
            let mut c = ExperimentConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.family = "quartic".into()));
        assert!(bad(|c| c.family = "cubic2c".into()));
        assert!(bad(|c| c.grid.nx = 32));
        assert!(bad(|c| c.grid.ny = 200));
        assert!(bad(|c| c.entropy.n_list = vec![3, 2]));
        assert!(bad(|c| c.entropy.epsilon_list = vec![0.0]));
        assert!(bad(|c| c.metric_entropy.kappa_list = vec![1.5]));
        assert!(bad(|c| {
            c.brin_katok.window = 0;
            c.brin_katok.epsilon = 0.02;
        }));
        assert!(bad(|c| c.dimension.r_list = vec![0.1, 0.01]));
        assert!(bad(|c| c.dimension.centers = vec![[5.0, 0.0]]));
    }

    #[test]
    fn cardioid_preset() {
        let mut c = ExperimentConfig::default();
        c.apply_preset(RegionPreset::CardioidDisk);
        assert!(matches!(c.entropy.region, Region::Disk { radius, .. } if radius == 0.05));
        c.validate().unwrap();
    }
}
