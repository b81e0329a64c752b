//! Config-driven orchestration: presets, single runs and parameter sweeps.
//!
//! Configurations are flat TOML sections mirroring the solver pipeline;
//! every preset can be reproduced from a version-controlled file. Dotted
//! `key=value` overrides are applied to the parsed TOML tree before
//! validation, so anything in the file can be overridden from the command
//! line.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assembly::{build_fem_blocks, FemBlocks, ScalarField};
use crate::mesh::{
    build_mesh, classify_dofs, BoundarySpec, EdgeSide, RectDomain, Segment, Traction,
};
use crate::post::{export_fields, ExportFormat, NodalField, SgSolution};
use crate::precond::build_preconditioner;
use crate::solver::minres_solve;
use crate::stochastic::{
    g_matrices, total_degree_set, RandomFieldExpansion,
};
use crate::system::{
    build_operator, build_rhs, split_coupling, Field, PhysicalParams, StorageCoefficient,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub discretization: DiscretizationConfig,
    pub young_modulus: FieldConfig,
    pub conductivity: FieldConfig,
    pub physics: PhysicsConfig,
    pub boundary: BoundaryConfig,
    pub loads: LoadsConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    /// mesh level: element side 2^-(level-1)
    pub level: u32,
    /// total polynomial degree of the chaos basis
    pub degree: usize,
}

/// Random field model for the Young modulus or hydraulic conductivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    /// spatially uniform mean and mode amplitudes
    Affine {
        mean: f64,
        #[serde(default)]
        modes: Vec<f64>,
        /// parameter interval half-width
        #[serde(default = "default_one")]
        interval: f64,
    },
    /// truncated Karhunen-Loeve expansion of the exponential kernel
    KarhunenLoeve {
        mean: f64,
        sigma: f64,
        count: usize,
        #[serde(default = "default_corr_len")]
        correlation_length: f64,
        #[serde(default = "default_sqrt3")]
        interval: f64,
    },
}

fn default_one() -> f64 {
    1.0
}

fn default_corr_len() -> f64 {
    2.0
}

fn default_sqrt3() -> f64 {
    3f64.sqrt()
}

impl FieldConfig {
    pub fn mean(&self) -> f64 {
        match self {
            FieldConfig::Affine { mean, .. } | FieldConfig::KarhunenLoeve { mean, .. } => *mean,
        }
    }

    pub fn mode_count(&self) -> usize {
        match self {
            FieldConfig::Affine { modes, .. } => modes.len(),
            FieldConfig::KarhunenLoeve { count, .. } => *count,
        }
    }

    /// Rescales the whole model to a new mean, preserving the ratio of the
    /// fluctuation to the mean (used by sweep grids).
    pub fn with_mean(&self, new_mean: f64) -> FieldConfig {
        let factor = new_mean / self.mean();
        match self {
            FieldConfig::Affine { modes, interval, .. } => FieldConfig::Affine {
                mean: new_mean,
                modes: modes.iter().map(|m| m * factor).collect(),
                interval: *interval,
            },
            FieldConfig::KarhunenLoeve {
                sigma,
                count,
                correlation_length,
                interval,
                ..
            } => FieldConfig::KarhunenLoeve {
                mean: new_mean,
                sigma: sigma * factor,
                count: *count,
                correlation_length: *correlation_length,
                interval: *interval,
            },
        }
    }

    pub fn build(&self, domain: &RectDomain) -> Result<RandomFieldExpansion> {
        match self {
            FieldConfig::Affine { mean, modes, interval } => {
                if modes.is_empty() {
                    Ok(RandomFieldExpansion::constant(*mean))
                } else {
                    RandomFieldExpansion::affine(*mean, modes, *interval)
                }
            }
            FieldConfig::KarhunenLoeve {
                mean,
                sigma,
                count,
                correlation_length,
                interval,
            } => RandomFieldExpansion::karhunen_loeve(
                *mean,
                *sigma,
                *correlation_length,
                *count,
                domain,
                *interval,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    pub nu: f64,
    pub alpha: f64,
    pub storage: StorageConfig,
}

/// Either the rule `"alpha2_over_lambda"` or an explicit rescaled value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StorageConfig {
    Rule(String),
    Value(f64),
}

impl StorageConfig {
    pub fn to_coefficient(&self) -> Result<StorageCoefficient> {
        match self {
            StorageConfig::Rule(s) if s == "alpha2_over_lambda" => {
                Ok(StorageCoefficient::DerivedFromLambda)
            }
            StorageConfig::Rule(s) => Err(Error::Config(format!(
                "unknown storage rule `{s}` (expected \"alpha2_over_lambda\" or a number)"
            ))),
            StorageConfig::Value(v) => Ok(StorageCoefficient::Explicit(*v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub u_dirichlet: Vec<SegmentConfig>,
    pub p_dirichlet: Vec<SegmentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traction: Option<TractionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    pub edge: EdgeSide,
    /// span along the edge; the whole edge when omitted
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<[f64; 2]>,
    #[serde(default = "default_true")]
    pub include_start: bool,
    #[serde(default = "default_true")]
    pub include_end: bool,
}

fn default_true() -> bool {
    true
}

impl SegmentConfig {
    pub fn edge(edge: EdgeSide) -> SegmentConfig {
        SegmentConfig {
            edge,
            span: None,
            include_start: true,
            include_end: true,
        }
    }

    fn to_segment(&self) -> Segment {
        let mut seg = match self.span {
            Some([a, b]) => Segment::span(self.edge, a, b),
            None => Segment::full(self.edge),
        };
        seg.include_start = self.include_start;
        seg.include_end = self.include_end;
        seg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TractionConfig {
    pub segments: Vec<SegmentConfig>,
    pub value: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadsConfig {
    pub f: [f64; 2],
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// output directory; nothing is written when empty
    #[serde(default)]
    pub dir: String,
    /// variables whose mean and variance fields are exported
    #[serde(default)]
    pub fields: Vec<String>,
    /// "csv" or "vtk"
    #[serde(default = "default_format")]
    pub format: String,
}

fn default_format() -> String {
    "csv".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: String::new(),
            fields: Vec::new(),
            format: default_format(),
        }
    }
}

impl OutputConfig {
    fn export_format(&self) -> Result<ExportFormat> {
        match self.format.as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "vtk" => Ok(ExportFormat::VtkLegacyAscii),
            other => Err(Error::Config(format!("unknown output format `{other}`"))),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn rect_domain(&self) -> Result<RectDomain> {
        RectDomain::new(
            self.domain.x_min,
            self.domain.x_max,
            self.domain.y_min,
            self.domain.y_max,
        )
    }

    pub fn boundary_spec(&self) -> BoundarySpec {
        let mut bc = BoundarySpec::new(
            self.boundary.u_dirichlet.iter().map(|s| s.to_segment()).collect(),
            self.boundary.p_dirichlet.iter().map(|s| s.to_segment()).collect(),
        );
        if let Some(t) = &self.boundary.traction {
            bc = bc.with_traction(Traction {
                segments: t.segments.iter().map(|s| s.to_segment()).collect(),
                value: t.value,
            });
        }
        bc
    }

    pub fn physical_params(&self) -> Result<PhysicalParams> {
        PhysicalParams::new(
            self.physics.nu,
            self.physics.alpha,
            self.physics.storage.to_coefficient()?,
        )
    }
}

/// Built-in configurations reproducing the three reference experiments.
pub fn preset(name: &str) -> Result<RunConfig> {
    match name {
        "example1" => Ok(RunConfig {
            domain: DomainConfig {
                x_min: 0.0,
                x_max: 1.0,
                y_min: 0.0,
                y_max: 1.0,
            },
            discretization: DiscretizationConfig { level: 5, degree: 3 },
            young_modulus: FieldConfig::Affine {
                mean: 1.0e5,
                modes: vec![1.0e4],
                interval: 1.0,
            },
            conductivity: FieldConfig::Affine {
                mean: 1.0,
                modes: vec![0.1],
                interval: 1.0,
            },
            physics: PhysicsConfig {
                nu: 0.4,
                alpha: 1.0,
                storage: StorageConfig::Rule("alpha2_over_lambda".into()),
            },
            boundary: BoundaryConfig {
                u_dirichlet: vec![
                    SegmentConfig::edge(EdgeSide::Bottom),
                    SegmentConfig::edge(EdgeSide::Left),
                ],
                p_dirichlet: vec![
                    SegmentConfig::edge(EdgeSide::Top),
                    SegmentConfig::edge(EdgeSide::Right),
                ],
                traction: None,
            },
            loads: LoadsConfig { f: [1.0, 1.0], g: 0.0 },
            solver: SolverConfig {
                tol: 1.0e-6,
                max_iterations: 500,
            },
            output: OutputConfig::default(),
        }),
        "example2" => {
            let mut cfg = preset("example1")?;
            cfg.domain = DomainConfig {
                x_min: -1.0,
                x_max: 1.0,
                y_min: -1.0,
                y_max: 1.0,
            };
            cfg.young_modulus = FieldConfig::KarhunenLoeve {
                mean: 1.0e5,
                sigma: 1.0e4,
                count: 3,
                correlation_length: 2.0,
                interval: 3f64.sqrt(),
            };
            cfg.conductivity = FieldConfig::KarhunenLoeve {
                mean: 1.0,
                sigma: 0.1,
                count: 3,
                correlation_length: 2.0,
                interval: 3f64.sqrt(),
            };
            Ok(cfg)
        }
        "example3" => Ok(RunConfig {
            domain: DomainConfig {
                x_min: -5.0,
                x_max: 5.0,
                y_min: 0.0,
                y_max: 10.0,
            },
            discretization: DiscretizationConfig { level: 5, degree: 4 },
            young_modulus: FieldConfig::Affine {
                mean: 3.0e4,
                modes: vec![1.5e4],
                interval: 1.0,
            },
            conductivity: FieldConfig::Affine {
                mean: 1.0e-4,
                modes: vec![0.5e-4],
                interval: 1.0,
            },
            physics: PhysicsConfig {
                nu: 0.4995,
                alpha: 0.1,
                storage: StorageConfig::Value(30.0),
            },
            boundary: BoundaryConfig {
                u_dirichlet: vec![
                    SegmentConfig::edge(EdgeSide::Bottom),
                    SegmentConfig::edge(EdgeSide::Left),
                    SegmentConfig::edge(EdgeSide::Right),
                ],
                p_dirichlet: vec![
                    SegmentConfig::edge(EdgeSide::Bottom),
                    SegmentConfig::edge(EdgeSide::Left),
                    SegmentConfig::edge(EdgeSide::Right),
                    SegmentConfig::edge(EdgeSide::Top),
                ],
                traction: Some(TractionConfig {
                    segments: vec![SegmentConfig {
                        edge: EdgeSide::Top,
                        span: Some([-2.0, 2.0]),
                        include_start: true,
                        include_end: true,
                    }],
                    value: [0.0, -1.5e4],
                }),
            },
            loads: LoadsConfig { f: [0.0, 0.0], g: 0.0 },
            solver: SolverConfig {
                tol: 1.0e-6,
                max_iterations: 500,
            },
            output: OutputConfig {
                dir: "example3_out".into(),
                fields: vec!["u1".into(), "u2".into(), "p_f".into()],
                format: "csv".into(),
            },
        }),
        other => Err(Error::Config(format!(
            "unknown preset `{other}` (available: example1, example2, example3)"
        ))),
    }
}

/// Applies dotted-path `key=value` overrides onto a configuration.
pub fn apply_overrides(config: &RunConfig, sets: &[(String, String)]) -> Result<RunConfig> {
    let text = config.to_toml()?;
    let mut value: toml::Value = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    for (path, raw) in sets {
        let parts: Vec<&str> = path.split('.').collect();
        if parts.is_empty() {
            return Err(Error::Config("empty override path".into()));
        }
        let mut cursor = &mut value;
        for part in &parts[..parts.len() - 1] {
            cursor = cursor
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{path}` does not address a table")))?
                .entry(part.to_string())
                .or_insert(toml::Value::Table(Default::default()));
        }
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{path}` does not address a table")))?;
        table.insert(parts[parts.len() - 1].to_string(), parse_toml_scalar(raw));
    }
    let text = toml::to_string(&value).map_err(|e| Error::Config(e.to_string()))?;
    RunConfig::from_toml(&text)
}

fn parse_toml_scalar(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    // array literal like [1, 2]
    if raw.starts_with('[') {
        if let Ok(v) = toml::from_str::<HashMap<String, toml::Value>>(&format!("v = {raw}")) {
            if let Some(v) = v.get("v") {
                return v.clone();
            }
        }
    }
    toml::Value::String(raw.trim_matches('"').to_string())
}

/// One report row (the CSV schema of run and sweep reports).
#[derive(Debug, Clone)]
pub struct RunReport {
    pub nu: f64,
    pub alpha: f64,
    pub kappa0: f64,
    pub e0: f64,
    pub level: u32,
    pub degree: usize,
    pub ny: usize,
    pub nx: usize,
    pub iterations: usize,
    pub converged: bool,
    pub seconds: f64,
}

pub const REPORT_HEADER: &str = "nu,alpha,kappa0,e0,level,degree,ny,nx,iterations,converged,seconds";

impl RunReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:.3}",
            self.nu,
            self.alpha,
            self.kappa0,
            self.e0,
            self.level,
            self.degree,
            self.ny,
            self.nx,
            self.iterations,
            self.converged,
            self.seconds
        )
    }
}

/// Everything a single run produces.
pub struct RunArtifacts {
    pub report: RunReport,
    pub solve: crate::solver::SolveReport,
    pub solution: SgSolution,
    pub exported: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Reusable expensive state for repeated runs over the same discretization.
#[derive(Default)]
pub struct FemCache {
    blocks: HashMap<String, Arc<FemBlocks>>,
}

impl FemCache {
    pub fn new() -> FemCache {
        FemCache::default()
    }
}

fn cache_key(config: &RunConfig) -> String {
    // everything the assembled blocks depend on
    format!(
        "{:?}|{:?}|{:?}|{:?}|{:?}|{:?}",
        config.domain,
        config.discretization.level,
        config.young_modulus,
        config.conductivity,
        config.boundary,
        config.loads
    )
}

/// Assembles, solves and post-processes one configuration.
pub fn run(config: &RunConfig) -> Result<RunArtifacts> {
    run_cached(config, &mut FemCache::new())
}

/// Like [`run`], reusing assembled blocks across calls when possible.
pub fn run_cached(config: &RunConfig, cache: &mut FemCache) -> Result<RunArtifacts> {
    let mut warnings = Vec::new();
    let domain = config.rect_domain()?;
    let mesh = Arc::new(build_mesh(domain, config.discretization.level)?);
    let bc = config.boundary_spec();
    let dofs = Arc::new(classify_dofs(&mesh, &bc)?);

    let young = config.young_modulus.build(&domain)?;
    let conductivity = config.conductivity.build(&domain)?;
    young.validate_positivity(&mesh)?;
    conductivity.validate_positivity(&mesh)?;

    let params = config.physical_params()?;
    if !params.compatibility_ok() {
        warnings.push(format!(
            "parameter compatibility violated: alpha^2/lambda_t = {:.3e} exceeds 3/2 * s0_t = {:.3e}; \
             continuing (well-posedness constants may degrade)",
            params.alpha * params.alpha * params.lambda_tilde_inv(),
            1.5 * params.s0_tilde()
        ));
    }

    let key = cache_key(config);
    let fem = match cache.blocks.get(&key) {
        Some(b) => b.clone(),
        None => {
            let f = [
                ScalarField::Constant(config.loads.f[0]),
                ScalarField::Constant(config.loads.f[1]),
            ];
            let g = ScalarField::Constant(config.loads.g);
            let blocks = Arc::new(build_fem_blocks(
                &mesh,
                &dofs,
                &young,
                &conductivity,
                &f,
                &g,
                bc.traction.as_ref(),
            )?);
            cache.blocks.insert(key, blocks.clone());
            blocks
        }
    };

    let m1 = young.n_modes();
    let m2 = conductivity.n_modes();
    let mut intervals = young.intervals.clone();
    intervals.extend_from_slice(&conductivity.intervals);
    let set = total_degree_set(m1 + m2, config.discretization.degree);
    let gs = g_matrices(&set, &intervals)?;
    let (ge, gd) = split_coupling(&gs, m1, m2)?;

    let rhs = build_rhs(&fem, set.len());
    let op = build_operator(fem.clone(), ge, gd, params)?;
    let pre = build_preconditioner(&fem, &params)?;
    let (x, solve) = minres_solve(
        &op,
        &pre,
        &rhs,
        config.solver.tol,
        config.solver.max_iterations,
    )?;

    let solution = SgSolution::new(x, mesh.clone(), dofs, set, intervals)?;

    let report = RunReport {
        nu: config.physics.nu,
        alpha: config.physics.alpha,
        kappa0: config.conductivity.mean(),
        e0: config.young_modulus.mean(),
        level: config.discretization.level,
        degree: config.discretization.degree,
        ny: solution.coefficients.dims.n_y,
        nx: solution.coefficients.dims.n_x(),
        iterations: solve.iterations,
        converged: solve.converged,
        seconds: solve.wall_seconds,
    };

    let mut exported = Vec::new();
    if !config.output.dir.is_empty() {
        let dir = PathBuf::from(&config.output.dir);
        std::fs::create_dir_all(&dir)?;
        if !config.output.fields.is_empty() {
            let format = config.output.export_format()?;
            let mut fields: Vec<(String, NodalField)> = Vec::new();
            for name in &config.output.fields {
                let field = Field::parse(name)?;
                fields.push((format!("{}_mean", field.name()), solution.mean_field(field)));
                fields.push((
                    format!("{}_variance", field.name()),
                    solution.variance_field(field),
                ));
            }
            exported = export_fields(&mesh, &fields, format, &dir)?;
        }
        let report_path = dir.join("report.csv");
        std::fs::write(&report_path, format!("{REPORT_HEADER}\n{}\n", report.csv_row()))?;
        exported.push(report_path);
    }

    Ok(RunArtifacts {
        report,
        solve,
        solution,
        exported,
        warnings,
    })
}

/// Sweepable configuration keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKey {
    Nu,
    Alpha,
    Kappa0,
    E0,
    Level,
    Degree,
}

impl SweepKey {
    pub fn parse(s: &str) -> Result<SweepKey> {
        match s {
            "nu" => Ok(SweepKey::Nu),
            "alpha" => Ok(SweepKey::Alpha),
            "kappa0" => Ok(SweepKey::Kappa0),
            "e0" => Ok(SweepKey::E0),
            "level" => Ok(SweepKey::Level),
            "degree" => Ok(SweepKey::Degree),
            other => Err(Error::Config(format!(
                "unknown sweep key `{other}` (nu, alpha, kappa0, e0, level, degree)"
            ))),
        }
    }
}

/// Cartesian sweep grid; the first key varies slowest.
#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub axes: Vec<(SweepKey, Vec<f64>)>,
}

impl SweepGrid {
    /// Parses `"nu=0.4,0.499;alpha=1,1e-2"` into a grid.
    pub fn parse(text: &str) -> Result<SweepGrid> {
        let mut axes = Vec::new();
        for part in text.split(';').filter(|p| !p.trim().is_empty()) {
            let (key, vals) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("sweep axis `{part}` is not key=v1,v2")))?;
            let key = SweepKey::parse(key.trim())?;
            let values: std::result::Result<Vec<f64>, _> =
                vals.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let values = values.map_err(|e| Error::Config(format!("bad sweep value: {e}")))?;
            if values.is_empty() {
                return Err(Error::Config(format!("sweep axis `{part}` has no values")));
            }
            axes.push((key, values));
        }
        if axes.is_empty() {
            return Err(Error::Config("empty sweep grid".into()));
        }
        Ok(SweepGrid { axes })
    }

    pub fn n_cells(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    fn cell(&self, mut index: usize) -> Vec<(SweepKey, f64)> {
        let mut combo = vec![(SweepKey::Nu, 0.0); self.axes.len()];
        for (slot, (key, values)) in self.axes.iter().enumerate().rev() {
            combo[slot] = (*key, values[index % values.len()]);
            index /= values.len();
        }
        combo
    }
}

fn specialize(template: &RunConfig, cell: &[(SweepKey, f64)]) -> RunConfig {
    let mut cfg = template.clone();
    for &(key, value) in cell {
        match key {
            SweepKey::Nu => cfg.physics.nu = value,
            SweepKey::Alpha => cfg.physics.alpha = value,
            SweepKey::Kappa0 => cfg.conductivity = cfg.conductivity.with_mean(value),
            SweepKey::E0 => cfg.young_modulus = cfg.young_modulus.with_mean(value),
            SweepKey::Level => cfg.discretization.level = value as u32,
            SweepKey::Degree => cfg.discretization.degree = value as usize,
        }
    }
    // sweep cells never export fields
    cfg.output = OutputConfig::default();
    cfg
}

/// Result of one sweep cell: the report row or the failure message.
pub struct SweepRow {
    pub report: RunReport,
    pub error: Option<String>,
}

/// Runs every grid cell, isolating per-cell failures.
pub fn sweep(template: &RunConfig, grid: &SweepGrid) -> Vec<SweepRow> {
    let mut cache = FemCache::new();
    let mut rows = Vec::with_capacity(grid.n_cells());
    for i in 0..grid.n_cells() {
        let cell = grid.cell(i);
        let cfg = specialize(template, &cell);
        match run_cached(&cfg, &mut cache) {
            Ok(artifacts) => rows.push(SweepRow {
                report: artifacts.report,
                error: None,
            }),
            Err(e) => rows.push(SweepRow {
                report: RunReport {
                    nu: cfg.physics.nu,
                    alpha: cfg.physics.alpha,
                    kappa0: cfg.conductivity.mean(),
                    e0: cfg.young_modulus.mean(),
                    level: cfg.discretization.level,
                    degree: cfg.discretization.degree,
                    ny: 0,
                    nx: 0,
                    iterations: 0,
                    converged: false,
                    seconds: 0.0,
                },
                error: Some(e.to_string()),
            }),
        }
    }
    rows
}

/// Writes sweep rows as a report CSV.
pub fn write_report_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut text = String::from(REPORT_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.report.csv_row());
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}
