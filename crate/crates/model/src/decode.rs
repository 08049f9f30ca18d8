//! Autoregressive decoding sessions with mid-decode edits.

use crate::model::Model;
use crate::{ModelError, Result};
use loopforge_core::{LoopSequence, LoopToken};
use loopforge_nn::layers::KvCache;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

pub const DEFAULT_EOS_EPSILON: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Stop before the token that would open plane `k + 1`.
    PlaneCount(usize),
    /// Stop at a flagged token whose coordinates are all within `ε` of zero.
    EosToken(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    Done,
    Aborted,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Running => "running",
            Self::Done => "done",
            Self::Aborted => "aborted",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopSpec {
    pub points: Vec<[f64; 2]>,
    pub level_up: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    Translate { dx: f64, dy: f64 },
    /// Uniform scale about the loop's vertex centroid.
    Scale { s: f64 },
    Replace { points: Vec<[f64; 2]>, level_up: bool },
    /// Replaces consecutive steps starting at the target.
    Insert { loops: Vec<LoopSpec> },
    /// Protects steps `0..t` from later edits and rewinds.
    FreezePrefix { t: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Keyword {
    Next,
}

/// A 0-based step index or `"next"`, the step about to be produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    At(usize),
    Keyword(Keyword),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptedEdit {
    pub step: Target,
    #[serde(flatten)]
    pub op: EditOp,
}

/// `{"edits": [{"step": 5, "op": "translate", "dx": 0.2, "dy": 0.0}, ...]}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EditScript {
    pub edits: Vec<ScriptedEdit>,
}

impl EditScript {
    /// Accepts either the object form or a bare array of edits.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            List(Vec<ScriptedEdit>),
            Script(EditScript),
        }
        let value: serde_json::Value = serde_json::from_str(text)?;
        Ok(match value {
            serde_json::Value::Array(_) => Self {
                edits: serde_json::from_value(value)?,
            },
            _ => match serde_json::from_value::<Repr>(value.clone()) {
                Ok(Repr::Script(s)) => s,
                Ok(Repr::List(edits)) => Self { edits },
                // Re-parse for serde's field-level error message.
                Err(_) => serde_json::from_value::<EditScript>(value)?,
            },
        })
    }
}

/// What one call to [`DecodeSession::step`] produced.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// The token after edits. Not appended when it terminated the session.
    pub token: LoopToken,
    pub flag_prob: f64,
    pub appended: bool,
    pub status: SessionStatus,
}

fn apply_op(op: &EditOp, tok: &mut LoopToken) {
    match op {
        EditOp::Translate { dx, dy } => {
            for c in tok.coords.chunks_exact_mut(2) {
                c[0] += dx;
                c[1] += dy;
            }
        }
        EditOp::Scale { s } => {
            let c = tok.to_loop().centroid();
            for p in tok.coords.chunks_exact_mut(2) {
                p[0] = c.x + s * (p[0] - c.x);
                p[1] = c.y + s * (p[1] - c.y);
            }
        }
        EditOp::Replace { points, level_up } => {
            tok.coords = points.iter().flatten().copied().collect();
            tok.level_up = *level_up;
        }
        EditOp::Insert { .. } | EditOp::FreezePrefix { .. } => {
            unreachable!("expanded before scheduling")
        }
    }
}

/// Standard-normal latent code drawn from a seeded generator.
pub fn sample_latent(n_z: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_z).map(|_| rng.sample(StandardNormal)).collect()
}

/// `k` evenly spaced codes from `z_a` to `z_b`, endpoints included.
pub fn interpolate(z_a: &[f64], z_b: &[f64], k: usize) -> Result<Vec<Vec<f64>>> {
    if z_a.len() != z_b.len() {
        return Err(ModelError::Data(format!(
            "latent codes have lengths {} and {}",
            z_a.len(),
            z_b.len()
        )));
    }
    if k == 0 {
        return Err(ModelError::Range("interpolation count must be positive".into()));
    }
    if k == 1 {
        return Ok(vec![z_a.to_vec()]);
    }
    Ok((0..k)
        .map(|i| {
            let a = i as f64 / (k - 1) as f64;
            z_a.iter().zip(z_b).map(|(x, y)| (1.0 - a) * x + a * y).collect()
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct DecodeSession {
    model: Arc<Model>,
    z: Vec<f64>,
    stop: StopRule,
    seed: Option<u64>,
    emitted: Vec<LoopToken>,
    flag_probs: Vec<f64>,
    pending: BTreeMap<usize, Vec<EditOp>>,
    applied: Vec<(usize, EditOp)>,
    frozen: usize,
    status: SessionStatus,
    cache: Vec<KvCache>,
    fed: usize,
    hidden: Vec<f64>,
}

impl DecodeSession {
    pub fn new(model: Arc<Model>, z: Vec<f64>, stop: StopRule) -> Result<Self> {
        let cfg = model.config();
        if z.len() != cfg.latent_dim || z.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Data(format!(
                "latent code must hold {} finite values, got {}",
                cfg.latent_dim,
                z.len()
            )));
        }
        match stop {
            StopRule::PlaneCount(k) if k == 0 || k > cfg.planes.count => {
                return Err(ModelError::Range(format!(
                    "plane count {k} outside 1..={}",
                    cfg.planes.count
                )))
            }
            StopRule::EosToken(eps) if !(eps >= 0.0 && eps.is_finite()) => {
                return Err(ModelError::Range(format!("EOS tolerance {eps} is invalid")))
            }
            _ => {}
        }
        let layers = cfg.n_layers;
        Ok(Self {
            model,
            z,
            stop,
            seed: None,
            emitted: Vec::new(),
            flag_probs: Vec::new(),
            pending: BTreeMap::new(),
            applied: Vec::new(),
            frozen: 0,
            status: SessionStatus::Running,
            cache: KvCache::for_layers(layers),
            fed: 0,
            hidden: Vec::new(),
        })
    }

    /// Session whose latent code is drawn from `N(0, I)` with `seed`.
    pub fn sampled(model: Arc<Model>, seed: u64, stop: StopRule) -> Result<Self> {
        let z = sample_latent(model.config().latent_dim, seed);
        let mut s = Self::new(model, z, stop)?;
        s.seed = Some(seed);
        Ok(s)
    }

    /// Stops at the configured plane count.
    pub fn default_stop(model: &Model) -> StopRule {
        StopRule::PlaneCount(model.config().planes.count)
    }

    pub fn model(&self) -> &Arc<Model> {
        &self.model
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn stop_rule(&self) -> StopRule {
        self.stop
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn emitted(&self) -> &[LoopToken] {
        &self.emitted
    }

    /// Raw level-up probability of each emitted token, before edits.
    pub fn flag_probs(&self) -> &[f64] {
        &self.flag_probs
    }

    /// Scheduled edits in step order.
    pub fn pending_edits(&self) -> Vec<(usize, EditOp)> {
        self.pending
            .iter()
            .flat_map(|(&s, ops)| ops.iter().map(move |op| (s, op.clone())))
            .collect()
    }

    pub fn applied_edits(&self) -> &[(usize, EditOp)] {
        &self.applied
    }

    pub fn frozen_prefix(&self) -> usize {
        self.frozen
    }

    fn level_ups(&self) -> usize {
        self.emitted.iter().filter(|t| t.level_up).count()
    }

    /// Replacement loops are used verbatim so that re-inserting an emitted
    /// token is an exact no-op; callers canonicalize hand-drawn loops.
    fn validate_points(&self, points: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
        let n = self.model.config().n_points;
        if points.len() != n {
            return Err(ModelError::Edit(format!(
                "points: loop has {} points, model expects {n}",
                points.len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ModelError::Edit("points: coordinates must be finite".into()));
        }
        Ok(points.to_vec())
    }

    /// Schedules `op` and returns the resulting per-step edits.
    pub fn add_edit(&mut self, target: Target, op: EditOp) -> Result<Vec<(usize, EditOp)>> {
        if self.status != SessionStatus::Running {
            return Err(ModelError::State(self.status.as_str()));
        }
        let at = match target {
            Target::At(s) => s,
            Target::Keyword(Keyword::Next) => self.emitted.len(),
        };
        if let EditOp::FreezePrefix { t } = op {
            self.frozen = self.frozen.max(t);
            return Ok(vec![(at, op)]);
        }
        if at < self.emitted.len() {
            return Err(ModelError::Range(format!(
                "step {at} was already emitted; rewind first"
            )));
        }
        if at < self.frozen {
            return Err(ModelError::Range(format!("step {at} is frozen")));
        }
        let max = self.model.config().max_seq_len;
        let expanded = match op {
            EditOp::Translate { dx, dy } => {
                if !(dx.is_finite() && dy.is_finite()) {
                    return Err(ModelError::Edit("dx/dy must be finite".into()));
                }
                vec![(at, op)]
            }
            EditOp::Scale { s } => {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(ModelError::Edit(format!("s: scale must be positive, got {s}")));
                }
                vec![(at, op)]
            }
            EditOp::Replace { points, level_up } => vec![(
                at,
                EditOp::Replace {
                    points: self.validate_points(&points)?,
                    level_up,
                },
            )],
            EditOp::Insert { loops } => loops
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    Ok((
                        at + i,
                        EditOp::Replace {
                            points: self.validate_points(&l.points)?,
                            level_up: l.level_up,
                        },
                    ))
                })
                .collect::<Result<_>>()?,
            EditOp::FreezePrefix { .. } => unreachable!(),
        };
        if let Some((s, _)) = expanded.iter().find(|(s, _)| *s >= max) {
            return Err(ModelError::Range(format!("step {s} is beyond max_seq_len {max}")));
        }
        for (s, op) in &expanded {
            self.pending.entry(*s).or_default().push(op.clone());
        }
        Ok(expanded)
    }

    pub fn apply_script(&mut self, script: &EditScript) -> Result<Vec<(usize, EditOp)>> {
        let mut out = Vec::new();
        for e in &script.edits {
            out.extend(self.add_edit(e.step, e.op.clone())?);
        }
        Ok(out)
    }

    /// Truncates the emitted tokens to `to_step`, drops every pending edit and
    /// resumes the session.
    pub fn rewind(&mut self, to_step: usize) -> Result<()> {
        if to_step > self.emitted.len() {
            return Err(ModelError::Range(format!(
                "cannot rewind to step {to_step}; only {} emitted",
                self.emitted.len()
            )));
        }
        if to_step < self.frozen {
            return Err(ModelError::Range(format!(
                "steps before {} are frozen",
                self.frozen
            )));
        }
        self.emitted.truncate(to_step);
        self.flag_probs.truncate(to_step);
        self.applied.retain(|(s, _)| *s < to_step);
        self.pending.clear();
        // Cached rows are position-local, so a prefix of the cache stays valid.
        if self.fed > to_step {
            for kv in &mut self.cache {
                kv.keys.truncate(to_step);
                kv.values.truncate(to_step);
            }
            self.fed = to_step;
        }
        self.status = SessionStatus::Running;
        Ok(())
    }

    /// Overwrites steps `at_step..` with `donor[donor_steps]`, rewinding first
    /// when those steps were already emitted. Donor flags are kept verbatim.
    pub fn transplant(&mut self, donor: &[LoopToken], donor_steps: Range<usize>, at_step: usize) -> Result<()> {
        if at_step > self.emitted.len() {
            return Err(ModelError::Range(format!(
                "transplant target {at_step} is beyond the {} emitted steps",
                self.emitted.len()
            )));
        }
        if donor_steps.start > donor_steps.end || donor_steps.end > donor.len() {
            return Err(ModelError::Range(format!(
                "donor range {donor_steps:?} outside 0..{}",
                donor.len()
            )));
        }
        if at_step < self.emitted.len() {
            self.rewind(at_step)?;
        }
        if self.status != SessionStatus::Running {
            self.status = SessionStatus::Running;
        }
        let loops = donor[donor_steps]
            .iter()
            .map(|t| LoopSpec {
                points: t.coords.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
                level_up: t.level_up,
            })
            .collect();
        self.add_edit(Target::At(at_step), EditOp::Insert { loops })?;
        Ok(())
    }

    /// Produces the next token.
    pub fn step(&mut self) -> Result<StepRecord> {
        if self.status != SessionStatus::Running {
            return Err(ModelError::State(self.status.as_str()));
        }
        let model = Arc::clone(&self.model);
        let arch = &model.arch;
        let cfg = &arch.config;
        let s = self.emitted.len();
        while self.fed <= s {
            let prev = self.fed.checked_sub(1).map(|i| &self.emitted[i]);
            let row = arch.decoder_input_row(&model.params, self.fed, &self.z, prev);
            self.hidden = arch.decoder.step(&model.params, &mut self.cache, &row);
            self.fed += 1;
        }
        let pred = arch.predict_row(&model.params, &self.hidden);
        let mut token = LoopToken {
            coords: pred.coords,
            level_up: pred.flag_prob >= 0.5,
        };
        for op in self.pending.remove(&s).unwrap_or_default() {
            apply_op(&op, &mut token);
            self.applied.push((s, op));
        }
        if s == 0 {
            // Every sequence opens a plane.
            token.level_up = true;
        }
        let ups = self.level_ups();
        let stop = match self.stop {
            StopRule::PlaneCount(k) => token.level_up && ups == k,
            StopRule::EosToken(eps) => {
                token.level_up && (token.max_abs_coord() <= eps || ups == cfg.planes.count)
            }
        };
        if stop {
            self.status = SessionStatus::Done;
            return Ok(StepRecord {
                step: s,
                token,
                flag_prob: pred.flag_prob,
                appended: false,
                status: self.status,
            });
        }
        self.emitted.push(token.clone());
        self.flag_probs.push(pred.flag_prob);
        if self.emitted.len() >= cfg.max_seq_len {
            self.status = match self.stop {
                StopRule::PlaneCount(k) if self.level_ups() == k => SessionStatus::Done,
                _ => SessionStatus::Aborted,
            };
        }
        Ok(StepRecord {
            step: s,
            token,
            flag_prob: pred.flag_prob,
            appended: true,
            status: self.status,
        })
    }

    /// Steps up to `count` times, stopping early when the session ends.
    pub fn step_n(&mut self, count: usize) -> Result<Vec<StepRecord>> {
        let mut out = Vec::new();
        for _ in 0..count {
            if self.status != SessionStatus::Running {
                break;
            }
            out.push(self.step()?);
        }
        Ok(out)
    }

    pub fn run(&mut self) -> Result<SessionStatus> {
        while self.status == SessionStatus::Running {
            self.step()?;
        }
        Ok(self.status)
    }

    /// The emitted tokens as a sequence on the model's planes.
    pub fn sequence(&self) -> Result<LoopSequence> {
        let cfg = self.model.config();
        let mut seq = LoopSequence::new(cfg.n_points, cfg.planes.axis, cfg.planes.planes()?);
        seq.tokens = self.emitted.clone();
        Ok(seq)
    }
}

/// Decodes `z ~ N(0, I)` drawn with `seed` until the stop rule fires.
pub fn sample(model: Arc<Model>, seed: u64, stop: StopRule) -> Result<(LoopSequence, SessionStatus)> {
    let mut s = DecodeSession::sampled(model, seed, stop)?;
    let status = s.run()?;
    Ok((s.sequence()?, status))
}

/// Decodes a fixed latent code, optionally with an edit script.
pub fn decode(
    model: Arc<Model>,
    z: Vec<f64>,
    stop: StopRule,
    script: Option<&EditScript>,
) -> Result<(LoopSequence, SessionStatus)> {
    let mut s = DecodeSession::new(model, z, stop)?;
    if let Some(script) = script {
        s.apply_script(script)?;
    }
    let status = s.run()?;
    Ok((s.sequence()?, status))
}
