//! TOML experiment configuration.

use std::path::Path;

use sbdnet_core::heuristics::SolverSettings;
use sbdnet_core::quadrature::{pathloss_integral, QuadratureSettings};
use sbdnet_core::sim::{Budget, DEFAULT_POPULATION_CAP};
use sbdnet_core::stability::{critical_rate_with, CriticalRate};
use sbdnet_core::{ClassProfile, ClassSet, PathLoss, SymmetricProfile, TorusDomain};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub domain: DomainSpec,
    pub pathloss: PathLossSpec,
    pub profile: ProfileSpec,
    #[serde(default = "default_n0")]
    pub n0: f64,
    pub lambda: LambdaSpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub budget: BudgetSpec,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default)]
    pub lattice: LatticeSpec,
    #[serde(default)]
    pub fluid: FluidSpec,
    #[serde(default)]
    pub stats: StatsSpec,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_n0() -> f64 {
    0.1
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub side: f64,
    #[serde(default)]
    pub link_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathLossSpec {
    PowerLaw { beta: f64 },
    Tabulated { distances: Vec<f64>, gains: Vec<f64> },
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub bands: Vec<u8>,
    pub p: f64,
    pub l: f64,
}

/// Either every class listed by its bands, or per-cardinality values of a
/// symmetric profile (`p[j-1]` is the total probability of cardinality `j`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Classes { k: u8, classes: Vec<ClassEntry> },
    Symmetric { k: u8, p: Vec<f64>, l: Vec<f64> },
}

/// Exactly one of the two lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSpec {
    #[serde(default)]
    pub absolute: Option<Vec<f64>>,
    /// Multiples of the closed-form critical rate.
    #[serde(default)]
    pub relative: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSpec {
    pub events: Option<u64>,
    pub time: Option<f64>,
    pub population_cap: usize,
}

impl Default for BudgetSpec {
    fn default() -> Self {
        BudgetSpec { events: None, time: None, population_cap: DEFAULT_POPULATION_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub damping: f64,
    pub tol: f64,
    pub max_iterations: usize,
    pub divergence_factor: f64,
    /// Bisection stop for `λ_P`, relative to `λ_c`.
    pub bisection_width: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let s = SolverSettings::default();
        SolverSpec {
            damping: s.damping,
            tol: s.tol,
            max_iterations: s.max_iterations,
            divergence_factor: s.divergence_factor,
            bisection_width: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_refinement: u32,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        let q = QuadratureSettings::default();
        QuadratureSpec { abs_tol: q.abs_tol, rel_tol: q.rel_tol, max_refinement: q.max_refinement }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSpec {
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeSpec {
    /// Cell sizes of the `lambda-c` table; empty means side/5, /10, /20, /40.
    pub eps_table: Vec<f64>,
    /// Cell size for `lattice-sim` and `fluid`; side/20 when unset.
    pub eps: Option<f64>,
    pub kernel: KernelSpec,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        LatticeSpec { eps_table: Vec::new(), eps: None, kernel: KernelSpec::Upper }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluidSpec {
    pub horizon: f64,
    /// The start is this multiple of the witness `x = p_C L_C`.
    pub scale: f64,
    pub record_every: f64,
}

impl Default for FluidSpec {
    fn default() -> Self {
        FluidSpec { horizon: 100.0, scale: 1.0, record_every: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSpec {
    pub bias_factor: f64,
    pub confidence: f64,
}

impl Default for StatsSpec {
    fn default() -> Self {
        StatsSpec { bias_factor: 1.0, confidence: 0.99 }
    }
}

/// A rate to run at, with the multiplier it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePoint {
    pub relative: Option<f64>,
    pub lambda: f64,
}

/// Core objects built from a validated configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub dom: TorusDomain,
    pub pl: PathLoss,
    pub profile: ClassProfile,
    pub critical: CriticalRate,
    pub rates: Vec<RatePoint>,
    pub budget: Budget,
    pub quadrature: QuadratureSettings,
    pub solver: SolverSettings,
}

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Schema(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(anyhow::anyhow!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Schema(m) => CliError::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("configuration serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.lambda.absolute, &self.lambda.relative) {
            (Some(a), None) if !a.is_empty() => {
                if a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(schema("lambda.absolute: rates must be finite and >= 0"));
                }
            }
            (None, Some(r)) if !r.is_empty() => {
                if r.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(schema("lambda.relative: multipliers must be finite and >= 0"));
                }
            }
            _ => return Err(schema("lambda: give exactly one non-empty list, `absolute` or `relative`")),
        }
        if self.seeds.is_empty() {
            return Err(schema("seeds: at least one seed is needed"));
        }
        if let (Some(_), Some(_)) = (self.budget.events, self.budget.time) {
            return Err(schema("budget: give `events` or `time`, not both"));
        }
        if !(self.n0 > 0.0 && self.n0.is_finite()) {
            return Err(schema("n0: must be finite and > 0"));
        }
        let profile = self.build_profile()?;
        if self.lambda.relative.is_some() && !profile.is_symmetric() {
            return Err(schema("lambda.relative: relative rates need a symmetric profile"));
        }
        self.build_domain()?;
        self.build_pathloss()?;
        self.solver_settings().validate().map_err(|e| schema(format!("solver: {e}")))?;
        if !(self.solver.bisection_width > 0.0) {
            return Err(schema("solver.bisection_width: must be > 0"));
        }
        if !(self.stats.bias_factor > 0.0) || !(self.stats.confidence > 0.0 && self.stats.confidence < 1.0) {
            return Err(schema("stats: bias_factor must be > 0 and confidence in (0, 1)"));
        }
        if !(self.fluid.horizon > 0.0 && self.fluid.scale > 0.0 && self.fluid.record_every >= 0.0) {
            return Err(schema("fluid: horizon and scale must be > 0, record_every >= 0"));
        }
        Ok(())
    }

    pub fn build_domain(&self) -> Result<TorusDomain, CliError> {
        TorusDomain::new(self.domain.side, self.domain.link_length).map_err(|e| schema(format!("domain: {e}")))
    }

    pub fn build_pathloss(&self) -> Result<PathLoss, CliError> {
        match &self.pathloss {
            PathLossSpec::PowerLaw { beta } => PathLoss::power_law(*beta),
            PathLossSpec::Tabulated { distances, gains } => PathLoss::tabulated(distances.clone(), gains.clone()),
            PathLossSpec::Constant => Ok(PathLoss::constant()),
        }
        .map_err(|e| schema(format!("pathloss: {e}")))
    }

    pub fn build_profile(&self) -> Result<ClassProfile, CliError> {
        match &self.profile {
            ProfileSpec::Classes { k, classes } => {
                let mut entries = Vec::with_capacity(classes.len());
                for (i, c) in classes.iter().enumerate() {
                    let set = ClassSet::from_bands(&c.bands)
                        .ok_or_else(|| schema(format!("profile.classes[{i}]: invalid band list {:?}", c.bands)))?;
                    entries.push((set, c.p, c.l));
                }
                ClassProfile::from_entries(*k, &entries)
            }
            ProfileSpec::Symmetric { k, p, l } => SymmetricProfile::new(*k, p.clone(), l.clone()).and_then(|s| s.to_class_profile()),
        }
        .map_err(|e| schema(format!("profile: {e}")))
    }

    pub fn quadrature_settings(&self) -> QuadratureSettings {
        QuadratureSettings {
            abs_tol: self.quadrature.abs_tol,
            rel_tol: self.quadrature.rel_tol,
            max_refinement: self.quadrature.max_refinement,
        }
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            damping: self.solver.damping,
            tol: self.solver.tol,
            max_iterations: self.solver.max_iterations,
            divergence_factor: self.solver.divergence_factor,
            quadrature: self.quadrature_settings(),
            ..SolverSettings::default()
        }
    }

    pub fn budget(&self) -> Budget {
        match (self.budget.events, self.budget.time) {
            (_, Some(t)) => Budget::Time(t),
            (Some(n), None) => Budget::Events(n),
            (None, None) => Budget::Events(100_000),
        }
    }

    /// Builds the core objects and resolves every rate to an absolute value.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let dom = self.build_domain()?;
        let pl = self.build_pathloss()?;
        let profile = self.build_profile()?;
        let quadrature = self.quadrature_settings();
        let mean = pathloss_integral(&dom, &pl, &quadrature)?.value;
        let critical = critical_rate_with(&profile, &dom, &pl, mean);
        let rates = match (&self.lambda.absolute, &self.lambda.relative) {
            (Some(a), _) => a.iter().map(|&lambda| RatePoint { relative: None, lambda }).collect(),
            (None, Some(r)) => r.iter().map(|&x| RatePoint { relative: Some(x), lambda: x * critical.value }).collect(),
            (None, None) => unreachable!("validated"),
        };
        Ok(Resolved {
            dom,
            pl,
            profile,
            critical,
            rates,
            budget: self.budget(),
            quadrature,
            solver: self.solver_settings(),
        })
    }

    /// The reference configuration: K = 2, p = (0.4, 0.4, 0.2),
    /// L = (1, 1, 2), ℓ(x) = (1+x)^-4, torus side 10, r = 0.
    pub fn reference() -> Self {
        ExperimentConfig {
            name: "reference".into(),
            domain: DomainSpec { side: 10.0, link_length: 0.0 },
            pathloss: PathLossSpec::PowerLaw { beta: 4.0 },
            profile: ProfileSpec::Classes {
                k: 2,
                classes: vec![
                    ClassEntry { bands: vec![1], p: 0.4, l: 1.0 },
                    ClassEntry { bands: vec![2], p: 0.4, l: 1.0 },
                    ClassEntry { bands: vec![1, 2], p: 0.2, l: 2.0 },
                ],
            },
            n0: default_n0(),
            lambda: LambdaSpec { absolute: None, relative: Some(vec![0.9, 1.1]) },
            seeds: vec![1, 2, 3, 4, 5],
            budget: BudgetSpec { events: Some(100_000), ..BudgetSpec::default() },
            out: None,
            solver: SolverSpec::default(),
            quadrature: QuadratureSpec::default(),
            lattice: LatticeSpec::default(),
            fluid: FluidSpec::default(),
            stats: StatsSpec::default(),
        }
    }
}
