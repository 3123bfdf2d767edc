//! JSON scenario descriptions and their resolution into runnable loops.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control_sim::{
    run_closed_loop, AffineController, BackendMode, ChannelAttacker, LoopError, LtiModel, SimTrace, WireLayout,
    QUADRUPLE_TANK_PRE_ROLL, QUADRUPLE_TANK_X0,
};
use crate::covert_attack::{
    AttackError, AttackPlan, AttackVariant, EncModel, EncryptedModelAttacker, PinvSource, PlainModelAttacker,
};
use crate::packed_he::{BackendConfig, HeError, KeyContext, PublicContext};
use crate::verify::{VerifierContext, VerifierParams, VerifyError};

pub const QUADRUPLE_TANK_PRESET: &str = "quadruple_tank";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Config(String),
    #[error("config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    He(#[from] HeError),
}

impl ScenarioError {
    /// True for problems in the configuration rather than during the run.
    pub fn is_config(&self) -> bool {
        matches!(self, ScenarioError::Config(_) | ScenarioError::Json(_) | ScenarioError::Io(_))
    }
}

fn config_err(what: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Config(what.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// No attacker; plaintext links, or encrypted when a backend is given.
    Baseline,
    /// Plain-model attacker on plaintext links.
    AttackPlain,
    /// Attacker on encrypted links; the plan's variant picks the model it holds.
    AttackEncrypted,
    /// Plain-model attacker against the verified encrypted loop.
    VerifiedAttack,
}

/// Plant, controller and initial state given explicitly (row-major matrices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitModel {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub u0: Vec<f64>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Preset(String),
    Explicit(ExplicitModel),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Preset(QUADRUPLE_TANK_PRESET.into())
    }
}

fn rows_to_matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ScenarioError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(config_err(format!("matrix {name} must be a non-empty list of equal-length rows")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(config_err(format!("matrix {name} has non-finite entries")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizons {
    /// Steps simulated before `k = 0`.
    #[serde(default = "default_pre_roll")]
    pub pre_roll: usize,
    /// Total number of steps, pre-roll included.
    pub steps: usize,
}

fn default_pre_roll() -> usize {
    QUADRUPLE_TANK_PRE_ROLL
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default)]
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub backend: Option<BackendConfig>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub attack: Option<AttackPlan>,
    #[serde(default)]
    pub verifier: Option<VerifierParams>,
    /// Source of the encrypted-model attacker's `⟦Cc⁺⟧`.
    #[serde(default)]
    pub pinv: PinvSource,
    pub horizons: Horizons,
    /// Seed for the attacker's block guesses.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputPaths,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every invariant and builds the runnable scenario.
    pub fn resolve(&self) -> Result<Scenario, ScenarioError> {
        let (model, ctrl, x0) = match &self.model {
            ModelSpec::Preset(name) if name == QUADRUPLE_TANK_PRESET => (
                LtiModel::quadruple_tank(),
                AffineController::quadruple_tank(),
                DVector::from_column_slice(&QUADRUPLE_TANK_X0),
            ),
            ModelSpec::Preset(name) => return Err(config_err(format!("unknown model preset {name:?}"))),
            ModelSpec::Explicit(e) => {
                let model =
                    LtiModel::new(rows_to_matrix("a", &e.a)?, rows_to_matrix("b", &e.b)?, rows_to_matrix("c", &e.c)?)
                        .map_err(config_err)?;
                let ctrl = AffineController::new(rows_to_matrix("k", &e.k)?, DVector::from_column_slice(&e.u0))
                    .map_err(config_err)?;
                if e.x0.len() != model.n() {
                    return Err(config_err(format!("x0 has {} entries, model has {} states", e.x0.len(), model.n())));
                }
                (model, ctrl, DVector::from_column_slice(&e.x0))
            }
        };
        ctrl.check_model(&model).map_err(config_err)?;
        if self.horizons.steps == 0 {
            return Err(config_err("horizons.steps must be positive"));
        }
        if let Some(b) = &self.backend {
            b.validate().map_err(config_err)?;
        }

        use ScenarioKind::*;
        let needs_backend = matches!(self.scenario, AttackEncrypted | VerifiedAttack) || self.verifier.is_some();
        if needs_backend && self.backend.is_none() {
            return Err(config_err(format!("scenario {:?} needs a backend", self.scenario)));
        }
        if self.scenario == AttackPlain && self.backend.is_some() {
            return Err(config_err("attack_plain runs on plaintext links; drop the backend or use attack_encrypted"));
        }
        if self.scenario == VerifiedAttack && self.verifier.is_none() {
            return Err(config_err("verified_attack needs verifier parameters"));
        }
        if self.scenario == AttackEncrypted && self.verifier.is_some() {
            return Err(config_err("attack_encrypted runs unverified; use verified_attack"));
        }

        let plan = match self.scenario {
            Baseline => None,
            _ => {
                let plan = self.attack.clone().unwrap_or_else(|| AttackPlan::quadruple_tank(AttackVariant::PlainModel));
                plan.validate(model.n(), model.m()).map_err(config_err)?;
                if plan.variant == AttackVariant::EncModel && self.scenario != AttackEncrypted {
                    return Err(config_err("the enc_model variant is only available for attack_encrypted"));
                }
                Some(plan)
            }
        };

        if let (Some(params), Some(backend)) = (&self.verifier, &self.backend) {
            let layout = WireLayout::for_controller(&ctrl, params.lambda.max(1));
            if layout.dim > backend.slot_count {
                return Err(config_err(format!(
                    "λ = {} needs {} slots, backend has {}",
                    params.lambda, layout.dim, backend.slot_count
                )));
            }
            VerifierContext::<f64>::setup(backend.slot_count, layout.block_dim, |c: &[f64]| c.to_vec(), params)
                .map_err(|e: VerifyError| config_err(e))?;
        }
        if let Some(backend) = &self.backend {
            let layout = WireLayout::for_controller(&ctrl, 1);
            if layout.dim > backend.slot_count {
                return Err(config_err(format!(
                    "controller needs {} slots, backend has {}",
                    layout.dim, backend.slot_count
                )));
            }
        }

        Ok(Scenario {
            kind: self.scenario,
            model,
            ctrl,
            x0,
            backend: self.backend,
            plan,
            verifier: self.verifier,
            pinv: self.pinv,
            k_start: -(self.horizons.pre_roll as i64),
            steps: self.horizons.steps,
            seed: self.seed,
        })
    }
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub model: LtiModel<f64>,
    pub ctrl: AffineController<f64>,
    pub x0: DVector<f64>,
    pub backend: Option<BackendConfig>,
    pub plan: Option<AttackPlan>,
    pub verifier: Option<VerifierParams>,
    pub pinv: PinvSource,
    pub k_start: i64,
    pub steps: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn key(&self) -> Result<Option<KeyContext<f64>>, ScenarioError> {
        Ok(self.backend.map(KeyContext::new).transpose()?)
    }

    pub fn lambda(&self) -> usize {
        self.verifier.map_or(1, |v| v.lambda)
    }

    /// Slot layout of the encrypted links.
    pub fn layout(&self) -> WireLayout {
        WireLayout::for_controller(&self.ctrl, self.lambda())
    }

    /// The attacker for this scenario, given the links' public context
    /// (`None` for plaintext links).
    pub fn attacker(
        &self,
        ctx: Option<&PublicContext<f64>>,
    ) -> Result<Option<Box<dyn ChannelAttacker<f64> + Send>>, ScenarioError> {
        let Some(plan) = &self.plan else { return Ok(None) };
        let attacker: Box<dyn ChannelAttacker<f64> + Send> = match (ctx, plan.variant) {
            (None, AttackVariant::PlainModel) => Box::new(PlainModelAttacker::plain(self.model.clone(), plan)?),
            (None, AttackVariant::EncModel) => {
                return Err(config_err("the encrypted-model attacker needs encrypted links"));
            }
            (Some(ctx), AttackVariant::PlainModel) => Box::new(PlainModelAttacker::encrypted(
                self.model.clone(),
                plan,
                ctx.clone(),
                self.layout(),
                self.seed,
            )?),
            (Some(ctx), AttackVariant::EncModel) => {
                let enc = EncModel::encrypt(ctx, &self.model, self.pinv)?;
                Box::new(EncryptedModelAttacker::new(ctx.clone(), enc, plan, self.layout())?)
            }
        };
        Ok(Some(attacker))
    }

    /// Runs the scenario in-process.
    pub fn run(&self) -> Result<SimTrace<f64>, ScenarioError> {
        let key = self.key()?;
        let mut attacker = self.attacker(key.as_ref().map(|k| k.public()).as_ref())?;
        let mode = match key {
            None => BackendMode::Plain,
            Some(key) => BackendMode::Encrypted { key, verifier: self.verifier },
        };
        let attacker = attacker.as_deref_mut().map(|a| a as &mut dyn ChannelAttacker<f64>);
        Ok(run_closed_loop(&self.model, &self.ctrl, self.x0.clone(), self.k_start, self.steps, mode, attacker)?)
    }

    /// The same scenario without its attacker.
    pub fn attack_free(&self) -> Scenario {
        Scenario { kind: ScenarioKind::Baseline, plan: None, ..self.clone() }
    }
}
