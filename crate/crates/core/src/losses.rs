//! Maximum-margin losses for the dual-head network.
//!
//! Both losses act on the per-class confidence `ζ = y ⊙ (y⁺ − y⁻)` and a
//! margin vector `b` (one entry per class):
//!
//! * [`loss_mm`]: `Σ_k exp(‖ζ_k − b‖²)`, the fixed-margin baseline.
//! * [`loss_fmm`]: `Σ_k Σ_j w_kj (ζ_kj − b_j)²` with importance factor
//!   `w = max(exp(−(ζ − b)), floor)`. The factor is treated as a constant
//!   weight (gradient-stopped) unless `grad_through_importance` is set, and
//!   `b` is trainable.
//!
//! Exponent arguments are capped at [`EXP_ARG_CAP`] so that the sums stay
//! finite; hitting the cap sets [`LossValue::saturated`].

use serde::{Deserialize, Serialize};

use crate::error::{DosaError, Result};
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var};

pub const EXP_ARG_CAP: f64 = 80.0;
pub const DEFAULT_CLAMP_FLOOR: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    Mm,
    Fmm,
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossVariant::Mm => "mm",
            LossVariant::Fmm => "fmm",
        })
    }
}

impl std::str::FromStr for LossVariant {
    type Err = DosaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mm" => Ok(LossVariant::Mm),
            "fmm" => Ok(LossVariant::Fmm),
            other => Err(DosaError::Config(format!("unknown loss variant '{other}'"))),
        }
    }
}

/// Where the exponential of the maximum-margin loss is taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MmReduction {
    /// `exp` of the squared Euclidean distance of each sample's ζ row to `b`.
    #[default]
    PerSample,
    /// `exp` of each class's squared difference, summed.
    PerClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub variant: LossVariant,
    #[serde(default = "default_floor")]
    pub importance_clamp_floor: f64,
    #[serde(default)]
    pub grad_through_importance: bool,
    /// Defaults to `true` for `fmm` and `false` for `mm`.
    #[serde(default)]
    pub margin_trainable: Option<bool>,
    #[serde(default)]
    pub mm_reduction: MmReduction,
}

fn default_floor() -> f64 {
    DEFAULT_CLAMP_FLOOR
}

impl LossConfig {
    pub fn new(variant: LossVariant) -> Self {
        Self {
            variant,
            importance_clamp_floor: DEFAULT_CLAMP_FLOOR,
            grad_through_importance: false,
            margin_trainable: None,
            mm_reduction: MmReduction::PerSample,
        }
    }

    pub fn margin_trainable(&self) -> bool {
        self.margin_trainable
            .unwrap_or(self.variant == LossVariant::Fmm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.importance_clamp_floor.is_nan() || self.importance_clamp_floor <= 0.0 {
            return Err(DosaError::Config(format!(
                "importance clamp floor must be > 0, got {}",
                self.importance_clamp_floor
            )));
        }
        Ok(())
    }
}

/// Per-class margin `b`, stored as a 1×r parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginVector {
    pub id: ParamId,
}

impl MarginVector {
    /// Registers a margin of ones. Frozen until [`MarginVector::set_trainable`].
    pub fn register(store: &mut ParamStore, len: usize) -> Self {
        let id = store.add("margin", Matrix::filled(1, len, 1.0), false);
        Self { id }
    }

    pub fn values<'a>(&self, store: &'a ParamStore) -> &'a [f64] {
        store.value(self.id).as_slice()
    }

    pub fn len(&self, store: &ParamStore) -> usize {
        store.value(self.id).cols()
    }

    pub fn set_trainable(&self, store: &mut ParamStore, trainable: bool) {
        store.get_mut(self.id).trainable = trainable;
    }

    /// Appends `extra` entries initialised to 1.
    pub fn grow(&self, store: &mut ParamStore, extra: usize) -> Result<()> {
        let grown = store.value(self.id).hcat(&Matrix::filled(1, extra, 1.0))?;
        store.set_value(self.id, grown)
    }

    pub fn load(&self, tape: &mut Tape, store: &ParamStore) -> Var {
        tape.param(store, self.id)
    }

    pub fn normalized(&self, store: &ParamStore) -> Result<Vec<f64>> {
        normalized_margins(self.values(store))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossValue {
    pub value: Var,
    /// An exponent argument exceeded [`EXP_ARG_CAP`] and was capped.
    pub saturated: bool,
}

pub fn check_bipolar(y: &Matrix) -> Result<()> {
    for r in 0..y.rows() {
        for (c, &v) in y.row(r).iter().enumerate() {
            if v != 1.0 && v != -1.0 {
                return Err(DosaError::LabelDomain { row: r, col: c, value: v });
            }
        }
    }
    Ok(())
}

/// `ζ = y ⊙ (y⁺ − y⁻)` for bipolar targets `y`.
pub fn zeta(tape: &mut Tape, y: &Matrix, y_plus: Var, y_minus: Var) -> Result<Var> {
    check_bipolar(y)?;
    let diff = tape.sub(y_plus, y_minus)?;
    let yv = tape.constant(y.clone());
    tape.mul(yv, diff)
}

fn capped_exp(tape: &mut Tape, x: Var) -> (Var, bool) {
    let saturated = tape.value(x).as_slice().iter().any(|&v| v > EXP_ARG_CAP);
    let capped = tape.clamp_max(x, EXP_ARG_CAP);
    (tape.exp(capped), saturated)
}

/// Fixed-margin loss `Σ_k exp(‖ζ_k − b‖²)` (or its per-class variant).
pub fn loss_mm(tape: &mut Tape, zeta: Var, margin: Var, reduction: MmReduction) -> Result<LossValue> {
    let d = tape.sub_row(zeta, margin)?;
    let sq = tape.square(d);
    let arg = match reduction {
        MmReduction::PerSample => tape.row_sum(sq),
        MmReduction::PerClass => sq,
    };
    let (e, saturated) = capped_exp(tape, arg);
    Ok(LossValue {
        value: tape.sum(e),
        saturated,
    })
}

/// Focal maximum-margin loss `Σ max(exp(−(ζ − b)), floor) ⊙ (ζ − b)²`.
pub fn loss_fmm(tape: &mut Tape, zeta: Var, margin: Var, cfg: &LossConfig) -> Result<LossValue> {
    cfg.validate()?;
    let d = tape.sub_row(zeta, margin)?;
    let neg = tape.neg(d);
    let (e, saturated) = capped_exp(tape, neg);
    let mut factor = tape.clamp_min(e, cfg.importance_clamp_floor);
    if !cfg.grad_through_importance {
        factor = tape.stop_gradient(factor);
    }
    let sq = tape.square(d);
    let weighted = tape.mul(factor, sq)?;
    Ok(LossValue {
        value: tape.sum(weighted),
        saturated,
    })
}

/// Dispatches on `cfg.variant`.
pub fn loss(tape: &mut Tape, zeta: Var, margin: Var, cfg: &LossConfig) -> Result<LossValue> {
    match cfg.variant {
        LossVariant::Mm => loss_mm(tape, zeta, margin, cfg.mm_reduction),
        LossVariant::Fmm => loss_fmm(tape, zeta, margin, cfg),
    }
}

/// `|b_k| / Σ_j |b_j|`.
pub fn normalized_margins(b: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = b.iter().map(|v| v.abs()).sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(DosaError::DegenerateMargin);
    }
    Ok(b.iter().map(|v| v.abs() / total).collect())
}
