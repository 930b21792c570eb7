//! Run configuration as flat TOML sections.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{FULL_FACTOR, SEMI_FACTOR};
use crate::dynamics::{FormulaVariant, Scheme};
use crate::error::{Error, Result};
use crate::phase_space::{continuum_adm_mass, InitialDatum, PhaseDensity, SupportBox, TabulatedDensity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatumKind {
    /// Product of `(1 - s²)³` profiles over the support box.
    Bump,
    /// Trilinear interpolation of a CSV table.
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeUnits {
    /// Multiples of the amplitude whose ADM mass equals `r_min / 4`.
    Reference,
    /// Multiplies the density directly.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatumConfig {
    pub kind: DatumKind,
    pub amplitude: f64,
    pub amplitude_units: AmplitudeUnits,
    /// Support box of the bump; ignored for tables, whose grid extent is used.
    pub r: [f64; 2],
    pub w: [f64; 2],
    pub l: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    SemiRk4,
    FullEuler,
}

impl From<SchemeName> for Scheme {
    fn from(s: SchemeName) -> Self {
        match s {
            SchemeName::SemiRk4 => Scheme::SemiRk4,
            SchemeName::FullEuler => Scheme::FullEuler,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Corrected,
    PaperLiteral,
}

impl From<VariantName> for FormulaVariant {
    fn from(v: VariantName) -> Self {
        match v {
            VariantName::Corrected => FormulaVariant::Corrected,
            VariantName::PaperLiteral => FormulaVariant::PaperLiteral,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub epsilon: f64,
    pub delta: f64,
    /// Time step: `τ` for the two-phase scheme, `dt` for RK4.
    pub tau: f64,
    pub t_end: f64,
    pub scheme: SchemeName,
    pub variant: VariantName,
    pub quad_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    pub bounds: bool,
    /// `D`; calibrated from the initial state when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_bound: Option<f64>,
    /// Defaults to 2 for RK4 and 4 for the two-phase scheme.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
    pub abort_on_violation: bool,
    pub collapse_threshold: f64,
    pub near_collapse_margin: f64,
    /// Radius of the region whose peak density decides dispersal; defaults to
    /// the outer radius of the support.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub central_radius: Option<f64>,
    /// A run disperses when the final central peak density is below this
    /// fraction of its running maximum.
    pub dispersal_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotFormat {
    Csv,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Steps between snapshots; 0 disables them.
    pub snapshot_stride: usize,
    pub snapshot_format: SnapshotFormat,
    /// Steps between diagnostics rows.
    pub record_stride: usize,
    /// Radial grid points of the field profiles written with each snapshot;
    /// 0 disables them.
    pub profile_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub datum: DatumConfig,
    pub discretization: DiscretizationConfig,
    pub monitor: MonitorConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::standard()
    }
}

impl RunConfig {
    /// The infalling shell used throughout the tests: `r ∈ [1, 1.4]`,
    /// `w ∈ [-0.55, -0.45]`, `L ∈ [0.2, 0.21]` at half the reference
    /// amplitude, `δ = 0.1`, `ε = δ²`, `τ = δ/4`, `T = 1`.
    pub fn standard() -> Self {
        Self {
            datum: DatumConfig {
                kind: DatumKind::Bump,
                amplitude: 0.5,
                amplitude_units: AmplitudeUnits::Reference,
                r: [1.0, 1.4],
                w: [-0.55, -0.45],
                l: [0.2, 0.21],
                table: None,
            },
            discretization: DiscretizationConfig {
                epsilon: 0.01,
                delta: 0.1,
                tau: 0.025,
                t_end: 1.0,
                scheme: SchemeName::FullEuler,
                variant: VariantName::Corrected,
                quad_order: 4,
            },
            monitor: MonitorConfig {
                bounds: true,
                d_bound: None,
                factor: None,
                abort_on_violation: true,
                collapse_threshold: 0.9,
                near_collapse_margin: 0.05,
                central_radius: None,
                dispersal_fraction: 0.5,
            },
            output: OutputConfig {
                directory: PathBuf::from("out"),
                snapshot_stride: 0,
                snapshot_format: SnapshotFormat::Csv,
                record_stride: 1,
                profile_points: 0,
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Sets `ε = δ²` and `τ = δ/4`.
    pub fn with_delta(mut self, delta: f64) -> Self {
        self.discretization.delta = delta;
        self.discretization.epsilon = delta * delta;
        self.discretization.tau = delta / 4.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.discretization;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(d.epsilon > 0.0 && d.epsilon <= d.delta) {
            return bad(format!("need 0 < epsilon <= delta, got epsilon = {}, delta = {}", d.epsilon, d.delta));
        }
        if !(d.tau > 0.0) || !(d.t_end > 0.0) {
            return bad(format!("need tau > 0 and t_end > 0, got {} and {}", d.tau, d.t_end));
        }
        if d.quad_order == 0 {
            return bad("quad_order must be at least 1".into());
        }
        if !(self.datum.amplitude >= 0.0 && self.datum.amplitude.is_finite()) {
            return bad(format!("amplitude must be finite and non-negative, got {}", self.datum.amplitude));
        }
        if self.datum.kind == DatumKind::Table && self.datum.table.is_none() {
            return bad("a table datum needs a table path".into());
        }
        let m = &self.monitor;
        if !(m.collapse_threshold > 0.0 && m.collapse_threshold <= 1.0) {
            return bad(format!("collapse_threshold must lie in (0, 1], got {}", m.collapse_threshold));
        }
        if !(m.dispersal_fraction > 0.0 && m.dispersal_fraction < 1.0) {
            return bad(format!("dispersal_fraction must lie in (0, 1), got {}", m.dispersal_fraction));
        }
        if m.d_bound.is_some_and(|d| !(d > 0.0)) || m.factor.is_some_and(|f| !(f > 0.0)) {
            return bad("d_bound and factor must be positive".into());
        }
        if self.output.record_stride == 0 {
            return bad("record_stride must be at least 1".into());
        }
        Ok(())
    }

    pub fn monitor_factor(&self) -> f64 {
        self.monitor.factor.unwrap_or(match self.discretization.scheme {
            SchemeName::SemiRk4 => SEMI_FACTOR,
            SchemeName::FullEuler => FULL_FACTOR,
        })
    }

    /// The initial datum together with how its amplitude was resolved.
    pub fn build_datum(&self) -> Result<ResolvedDatum> {
        let cfg = &self.datum;
        let (shape, table_hash) = match cfg.kind {
            DatumKind::Bump => {
                let support = SupportBox::new((cfg.r[0], cfg.r[1]), (cfg.w[0], cfg.w[1]), (cfg.l[0], cfg.l[1]))?;
                (InitialDatum::bump(1.0, support)?, None)
            }
            DatumKind::Table => {
                let path = cfg.table.as_ref().expect("validated");
                let bytes = std::fs::read(path)?;
                let text = String::from_utf8(bytes.clone())
                    .map_err(|e| Error::InvalidInput(format!("table is not UTF-8: {e}")))?;
                let table = TabulatedDensity::parse_csv(&text)?;
                (InitialDatum::tabulated(table)?, Some(blob_hash(&bytes)))
            }
        };
        let unit_adm = continuum_adm_mass(&shape, self.discretization.quad_order.max(4));
        let reference = if unit_adm > 0.0 {
            shape.support().r_min() / 4.0 / unit_adm
        } else {
            f64::NAN
        };
        let absolute = match cfg.amplitude_units {
            AmplitudeUnits::Absolute => cfg.amplitude,
            AmplitudeUnits::Reference if cfg.amplitude == 0.0 => 0.0,
            AmplitudeUnits::Reference if reference.is_finite() => cfg.amplitude * reference,
            AmplitudeUnits::Reference => {
                return Err(Error::InvalidConfig("datum shape has zero mass; use absolute amplitude units".into()))
            }
        };
        let datum = scaled(shape, absolute)?;
        Ok(ResolvedDatum {
            datum,
            reference_amplitude: reference,
            absolute_amplitude: absolute,
            table_hash,
        })
    }
}

/// An initial datum with its amplitude bookkeeping.
#[derive(Clone)]
pub struct ResolvedDatum {
    pub datum: InitialDatum,
    /// Amplitude giving ADM mass `r_min / 4`.
    pub reference_amplitude: f64,
    pub absolute_amplitude: f64,
    /// Git-style content hash of the table file, if any.
    pub table_hash: Option<String>,
}

struct Scaled {
    inner: InitialDatum,
    factor: f64,
}

impl PhaseDensity for Scaled {
    fn value(&self, r: f64, w: f64, l: f64) -> f64 {
        self.factor * self.inner.value(r, w, l)
    }
}

fn scaled(shape: InitialDatum, factor: f64) -> Result<InitialDatum> {
    let support = *shape.support();
    let order = shape.smoothness_order();
    InitialDatum::new(Arc::new(Scaled { inner: shape, factor }), support, order)
}

/// SHA-1 of `"blob <len>\0" ‖ bytes`, as computed by `git hash-object`.
pub fn blob_hash(bytes: &[u8]) -> String {
    use sha1::{Digest, Sha1};
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
