//! Experiment configuration: TOML with a fixed schema.
//!
//! Unknown keys are rejected by the parser. Range and cross-field checks run
//! afterwards and report the line of the offending key.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::ConfigError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub chain: ChainConfig,
    #[serde(default)]
    pub force: ForceConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    pub crack: Option<CrackConfig>,
    #[serde(rename = "method", default)]
    pub methods: Vec<MethodConfig>,
    pub study: Option<StudyConfig>,
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Harmonic,
    LennardJones,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Pinned,
    Extrapolated,
    Traction,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    /// Chain length for `solve`, `compare` and `bifurcate`.
    pub atoms: Option<usize>,
    pub potential: PotentialKind,
    pub k0: f64,
    /// Second-neighbour constant; harmonic only.
    pub k1: Option<f64>,
    pub boundary: BoundaryKind,
    /// Load `P` for the traction boundary.
    pub traction: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ForceKind {
    #[default]
    Zero,
    Point,
    HalfSine,
    FullSine,
}

/// A 1-based atom index `round(fraction · N) + offset`, so positions follow the chain as it is refined.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AtomPosition {
    pub fraction: f64,
    pub offset: i64,
}

impl AtomPosition {
    pub fn resolve(&self, n: usize) -> i64 {
        (self.fraction * n as f64).round() as i64 + self.offset
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceConfig {
    #[serde(default)]
    pub kind: ForceKind,
    #[serde(default)]
    pub atom_fraction: f64,
    #[serde(default)]
    pub atom_offset: i64,
    #[serde(default = "one")]
    pub magnitude: f64,
}

impl Default for ForceConfig {
    fn default() -> Self {
        Self { kind: ForceKind::Zero, atom_fraction: 0.0, atom_offset: 0, magnitude: 1.0 }
    }
}

impl ForceConfig {
    pub fn atom(&self) -> AtomPosition {
        AtomPosition { fraction: self.atom_fraction, offset: self.atom_offset }
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    AllAtomistic,
    AllContinuum,
    TwoRegion,
    FiveRegion,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum MeshKind {
    #[default]
    Uniform,
    /// Sizes 1, 2, 4, … up to `element_size`, each below the cap used `repeat` times.
    Doubling,
}

/// Mesh fields shared by the partition and the per-method overrides.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshSpec {
    pub mesh: MeshKind,
    pub element_size: usize,
    pub repeat: usize,
    /// When set, element sizes scale with `N / reference_atoms`.
    pub reference_atoms: Option<usize>,
    pub band: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    #[serde(default)]
    pub layout: Layout,
    #[serde(default = "half")]
    pub interface_fraction: f64,
    #[serde(default = "one_i")]
    pub interface_offset: i64,
    #[serde(default)]
    pub block_left_fraction: f64,
    #[serde(default)]
    pub block_left_offset: i64,
    #[serde(default)]
    pub block_right_fraction: f64,
    #[serde(default)]
    pub block_right_offset: i64,
    #[serde(default)]
    pub mesh: MeshKind,
    #[serde(default = "eight")]
    pub element_size: usize,
    #[serde(default = "one_u")]
    pub repeat: usize,
    pub reference_atoms: Option<usize>,
    #[serde(default)]
    pub band: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            layout: Layout::AllAtomistic,
            interface_fraction: 0.5,
            interface_offset: 1,
            block_left_fraction: 0.0,
            block_left_offset: 0,
            block_right_fraction: 0.0,
            block_right_offset: 0,
            mesh: MeshKind::Uniform,
            element_size: 8,
            repeat: 1,
            reference_atoms: None,
            band: 0,
        }
    }
}

impl PartitionConfig {
    pub fn interface(&self) -> AtomPosition {
        AtomPosition { fraction: self.interface_fraction, offset: self.interface_offset }
    }

    pub fn block(&self) -> (AtomPosition, AtomPosition) {
        (
            AtomPosition { fraction: self.block_left_fraction, offset: self.block_left_offset },
            AtomPosition { fraction: self.block_right_fraction, offset: self.block_right_offset },
        )
    }

    pub fn mesh_spec(&self) -> MeshSpec {
        MeshSpec {
            mesh: self.mesh,
            element_size: self.element_size,
            repeat: self.repeat,
            reference_atoms: self.reference_atoms,
            band: self.band,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum GammaScaleKind {
    #[default]
    Single,
    Matched,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrackConfig {
    pub k2: f64,
    pub u_cut: f64,
    #[serde(default = "half")]
    pub tip_fraction: f64,
    #[serde(default)]
    pub tip_offset: i64,
    #[serde(default)]
    pub gamma_scale: GammaScaleKind,
}

impl CrackConfig {
    pub fn tip(&self) -> AtomPosition {
        AtomPosition { fraction: self.tip_fraction, offset: self.tip_offset }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Atomistic,
    Galerkin,
    Enriched,
    Qnl,
    ForceBased,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SeedKind {
    #[default]
    Balanced,
    ContinuumSide,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: MethodKind,
    /// Overrides the default method tag in every output.
    pub label: Option<String>,
    #[serde(default)]
    pub quadrature: bool,
    pub m: Option<usize>,
    /// Per-ladder-entry seed counts for `converge`; replaces `m`.
    pub m_schedule: Option<Vec<usize>>,
    pub ell: Option<usize>,
    #[serde(default)]
    pub seeds: SeedKind,
    pub deflation_tol: Option<f64>,
    pub mesh: Option<MeshKind>,
    pub element_size: Option<usize>,
    pub repeat: Option<usize>,
    pub reference_atoms: Option<usize>,
    pub band: Option<usize>,
}

impl MethodConfig {
    /// The partition mesh with this method's overrides applied.
    pub fn mesh_spec(&self, base: MeshSpec) -> MeshSpec {
        MeshSpec {
            mesh: self.mesh.unwrap_or(base.mesh),
            element_size: self.element_size.unwrap_or(base.element_size),
            repeat: self.repeat.unwrap_or(base.repeat),
            reference_atoms: self.reference_atoms.or(base.reference_atoms),
            band: self.band.unwrap_or(base.band),
        }
    }

    pub fn tag(&self) -> String {
        if let Some(label) = &self.label {
            return label.clone();
        }
        let base = match self.kind {
            MethodKind::Atomistic => "atomistic",
            MethodKind::Galerkin => "galerkin",
            MethodKind::Enriched => "enriched",
            MethodKind::Qnl => "qnl",
            MethodKind::ForceBased => "force_based",
        };
        if self.quadrature {
            format!("{base}_quadrature")
        } else {
            base.to_string()
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// Chain lengths, increasing; `ε = 1/N`.
    pub atoms: Vec<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub load_min: f64,
    pub load_max: f64,
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    #[default]
    Zero,
    /// Uniform noise of size `perturbation` on every trial coefficient, drawn from `--seed`.
    Random,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub initial_guess: InitialGuess,
    #[serde(default = "tiny")]
    pub perturbation: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { initial_guess: InitialGuess::Zero, perturbation: 1e-8 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "yes")]
    pub solution: bool,
    #[serde(default = "yes")]
    pub errors: bool,
    /// Row norms of the exact fine-scale correction `A1` (standard Galerkin solves only).
    #[serde(default)]
    pub a1_row_norms: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { solution: true, errors: true, a1_row_norms: false }
    }
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn tiny() -> f64 {
    1e-8
}
fn one_i() -> i64 {
    1
}
fn one_u() -> usize {
    1
}
fn eight() -> usize {
    8
}
fn yes() -> bool {
    true
}

/// Which subcommand a configuration is validated for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Solve,
    Converge,
    Bifurcate,
    Compare,
}

/// Line numbers of keys, indexed by `(table, array index, key)`.
#[derive(Debug, Default)]
pub struct KeyLines {
    keys: HashMap<(String, usize, String), usize>,
    tables: HashMap<(String, usize), usize>,
}

impl KeyLines {
    pub fn scan(src: &str) -> Self {
        let mut out = Self::default();
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut current = (String::new(), 0usize);
        for (k, raw) in src.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let lineno = k + 1;
            if let Some(name) = line.strip_prefix("[[").and_then(|l| l.strip_suffix("]]")) {
                let name = name.trim().to_string();
                let idx = counts.entry(name.clone()).or_insert(0);
                current = (name, *idx);
                *idx += 1;
                out.tables.insert(current.clone(), lineno);
            } else if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = (name.trim().to_string(), 0);
                out.tables.insert(current.clone(), lineno);
            } else if let Some((key, _)) = line.split_once('=') {
                out.keys.insert((current.0.clone(), current.1, key.trim().to_string()), lineno);
            }
        }
        out
    }

    /// Line of `table[index].key`, falling back to the table header, then line 1.
    pub fn line(&self, table: &str, index: usize, key: &str) -> usize {
        self.keys
            .get(&(table.to_string(), index, key.to_string()))
            .or_else(|| self.tables.get(&(table.to_string(), index)))
            .copied()
            .unwrap_or(1)
    }
}

/// A parsed configuration together with its source lines for error reporting.
#[derive(Debug)]
pub struct LoadedConfig {
    pub config: Config,
    pub lines: KeyLines,
    pub name: String,
}

impl LoadedConfig {
    pub fn error(&self, table: &str, index: usize, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid { line: self.lines.line(table, index, key), message: message.into() }
    }
}

pub fn parse(src: &str, name: &str) -> Result<LoadedConfig, ConfigError> {
    let config: Config = toml::from_str(src).map_err(|e| {
        let line = e.span().map(|s| src[..s.start.min(src.len())].lines().count().max(1)).unwrap_or(1);
        let line = match e.span() {
            Some(s) if src[..s.start.min(src.len())].ends_with('\n') => line + 1,
            _ => line,
        };
        ConfigError::Parse { line, message: e.message().to_string() }
    })?;
    Ok(LoadedConfig { config, lines: KeyLines::scan(src), name: name.to_string() })
}

pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let src = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    parse(&src, &name)
}

impl LoadedConfig {
    /// Range and cross-field checks for `mode`.
    pub fn validate(&self, mode: Mode) -> Result<(), ConfigError> {
        let c = &self.config;
        let ch = &c.chain;
        if !(ch.k0 > 0.0 && ch.k0.is_finite()) {
            return Err(self.error("chain", 0, "k0", format!("k0 must be positive, got {}", ch.k0)));
        }
        match (ch.potential, ch.k1) {
            (PotentialKind::Harmonic, None) => return Err(self.error("chain", 0, "potential", "harmonic potential needs k1")),
            (PotentialKind::Harmonic, Some(k1)) if !(k1 >= 0.0 && k1.is_finite()) => {
                return Err(self.error("chain", 0, "k1", format!("k1 must be non-negative, got {k1}")))
            }
            (PotentialKind::LennardJones, Some(_)) => {
                return Err(self.error("chain", 0, "k1", "k1 is fixed by k0 for the Lennard-Jones potential"))
            }
            _ => {}
        }
        match (ch.boundary, ch.traction) {
            (BoundaryKind::Traction, None) => return Err(self.error("chain", 0, "boundary", "traction boundary needs a traction load")),
            (BoundaryKind::Traction, Some(p)) if !p.is_finite() => return Err(self.error("chain", 0, "traction", "traction must be finite")),
            (BoundaryKind::Pinned | BoundaryKind::Extrapolated, Some(_)) => {
                return Err(self.error("chain", 0, "traction", "traction is only used with boundary = \"traction\""))
            }
            _ => {}
        }
        if c.crack.is_some() != (ch.boundary == BoundaryKind::Traction) {
            return Err(self.error("chain", 0, "boundary", "the crack model and the traction boundary go together"));
        }
        if let Some(cr) = &c.crack {
            for (key, v) in [("k2", cr.k2), ("u_cut", cr.u_cut)] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(self.error("crack", 0, key, format!("{key} must be positive, got {v}")));
                }
            }
            if c.force.kind != ForceKind::Zero {
                return Err(self.error("force", 0, "kind", "the crack model is loaded through the traction boundary only"));
            }
        }
        if !c.force.magnitude.is_finite() {
            return Err(self.error("force", 0, "magnitude", "magnitude must be finite"));
        }
        let p = &c.partition;
        for (key, v) in [("element_size", p.element_size), ("repeat", p.repeat)] {
            if v == 0 {
                return Err(self.error("partition", 0, key, format!("{key} must be at least 1")));
            }
        }
        if p.reference_atoms == Some(0) {
            return Err(self.error("partition", 0, "reference_atoms", "reference_atoms must be at least 1"));
        }
        if c.solver.perturbation < 0.0 || !c.solver.perturbation.is_finite() {
            return Err(self.error("solver", 0, "perturbation", "perturbation must be non-negative"));
        }

        let ladder_len = match mode {
            Mode::Converge => {
                let Some(study) = &c.study else {
                    return Err(ConfigError::Invalid { line: 1, message: "converge needs a [study] table".into() });
                };
                if ch.atoms.is_some() {
                    return Err(self.error("chain", 0, "atoms", "converge takes its chain lengths from study.atoms"));
                }
                if study.atoms.len() < 3 {
                    return Err(self.error(
                        "study",
                        0,
                        "atoms",
                        format!("a rate fit needs at least 3 chain lengths, got {}", study.atoms.len()),
                    ));
                }
                if study.atoms.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(self.error("study", 0, "atoms", "chain lengths must increase"));
                }
                if study.atoms[0] < 8 {
                    return Err(self.error("study", 0, "atoms", "chains need at least 8 atoms"));
                }
                Some(study.atoms.len())
            }
            _ => {
                match ch.atoms {
                    None => return Err(self.error("chain", 0, "atoms", "chain.atoms is required")),
                    Some(n) if n < 8 => return Err(self.error("chain", 0, "atoms", format!("chains need at least 8 atoms, got {n}"))),
                    _ => {}
                }
                if c.study.is_some() {
                    return Err(self.error("study", 0, "atoms", "[study] is only used by converge"));
                }
                None
            }
        };
        match (mode, &c.sweep) {
            (Mode::Bifurcate, None) => return Err(ConfigError::Invalid { line: 1, message: "bifurcate needs a [sweep] table".into() }),
            (Mode::Bifurcate, Some(s)) => {
                if c.crack.is_none() {
                    return Err(self.error("sweep", 0, "steps", "bifurcate needs a [crack] table"));
                }
                if s.steps < 2 {
                    return Err(self.error("sweep", 0, "steps", "a sweep needs at least 2 steps"));
                }
                if !(s.load_min <= s.load_max) {
                    return Err(self.error("sweep", 0, "load_max", "load_max must not be below load_min"));
                }
            }
            (_, Some(_)) => return Err(self.error("sweep", 0, "steps", "[sweep] is only used by bifurcate")),
            _ => {}
        }

        if c.methods.is_empty() {
            return Err(ConfigError::Invalid { line: 1, message: "at least one [[method]] is required".into() });
        }
        if mode == Mode::Solve && c.methods.len() != 1 {
            return Err(self.error("method", 1, "kind", "solve runs exactly one method; use compare for several"));
        }
        if c.output.a1_row_norms && !(mode == Mode::Solve && c.methods[0].kind == MethodKind::Galerkin) {
            return Err(self.error("output", 0, "a1_row_norms", "A1 row norms are written by solve with a galerkin method"));
        }
        let mut tags = Vec::new();
        for (i, m) in c.methods.iter().enumerate() {
            self.validate_method(i, m, ladder_len)?;
            let tag = m.tag();
            if tags.contains(&tag) {
                return Err(self.error("method", i, "kind", format!("duplicate method tag '{tag}'; set label")));
            }
            tags.push(tag);
        }
        Ok(())
    }

    fn validate_method(&self, i: usize, m: &MethodConfig, ladder_len: Option<usize>) -> Result<(), ConfigError> {
        let c = &self.config;
        let needs_partition = !matches!(m.kind, MethodKind::Atomistic);
        if needs_partition && c.partition.layout == Layout::AllAtomistic {
            return Err(self.error("method", i, "kind", "this method needs a coupled partition; set partition.layout"));
        }
        if matches!(m.kind, MethodKind::Qnl | MethodKind::ForceBased)
            && !matches!(c.partition.layout, Layout::TwoRegion | Layout::FiveRegion)
        {
            return Err(self.error("method", i, "kind", "qnl and force_based need an atomistic/continuum interface"));
        }
        if m.quadrature {
            if !matches!(m.kind, MethodKind::Galerkin | MethodKind::Enriched) {
                return Err(self.error("method", i, "quadrature", "quadrature applies to galerkin and enriched only"));
            }
            if c.crack.is_some() {
                return Err(self.error("method", i, "quadrature", "the crack model is summed exactly"));
            }
        }
        if m.kind == MethodKind::Enriched {
            if m.ell.is_none() {
                return Err(self.error("method", i, "kind", "enriched needs ell"));
            }
            match (m.m, &m.m_schedule, ladder_len) {
                (Some(_), Some(_), _) => return Err(self.error("method", i, "m_schedule", "set either m or m_schedule")),
                (None, None, _) => return Err(self.error("method", i, "kind", "enriched needs m")),
                (Some(0), _, _) => return Err(self.error("method", i, "m", "m must be at least 1")),
                (None, Some(_), None) => return Err(self.error("method", i, "m_schedule", "m_schedule is only used by converge")),
                (None, Some(s), Some(len)) => {
                    if s.len() != len {
                        return Err(self.error(
                            "method",
                            i,
                            "m_schedule",
                            format!("m_schedule has {} entries for {len} chain lengths", s.len()),
                        ));
                    }
                    if s.contains(&0) {
                        return Err(self.error("method", i, "m_schedule", "every m must be at least 1"));
                    }
                }
                _ => {}
            }
            if let Some(t) = m.deflation_tol {
                if !(t > 0.0 && t < 1.0) {
                    return Err(self.error("method", i, "deflation_tol", format!("deflation_tol must lie in (0, 1), got {t}")));
                }
            }
        } else {
            for (key, set) in [
                ("m", m.m.is_some()),
                ("m_schedule", m.m_schedule.is_some()),
                ("ell", m.ell.is_some()),
                ("deflation_tol", m.deflation_tol.is_some()),
            ] {
                if set {
                    return Err(self.error("method", i, key, format!("{key} applies to enriched only")));
                }
            }
        }
        for (key, v) in [("element_size", m.element_size), ("repeat", m.repeat), ("reference_atoms", m.reference_atoms)] {
            if v == Some(0) {
                return Err(self.error("method", i, key, format!("{key} must be at least 1")));
            }
        }
        Ok(())
    }
}
