use crate::error::{Error, Result};
use crate::instances::{LinearMdpSpec, ThetaSet};
use crate::mdp::{RewardFunction, TabularPolicy};
use crate::reward_free::{rf_plan, RfModel};
use rayon::prelude::*;

/// Clipping beyond this amount is reported as a warning.
pub const CLIP_WARN: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LinearPlan {
    pub plans: Vec<(TabularPolicy, f64)>,
    pub max_clip: f64,
    pub warnings: Vec<String>,
}

/// Plan each user against `⟨θ̂_hu, ψ(s,a)⟩` clipped into `[0,1]`.
pub fn plan_users_linear(theta_hat: &ThetaSet, rf: &RfModel, spec: &LinearMdpSpec) -> Result<LinearPlan> {
    if theta_hat.dim != spec.dim || theta_hat.thetas.len() != rf.model.horizon() {
        return Err(Error::Instance("reward parameters do not match the model".into()));
    }
    let out: Vec<(TabularPolicy, f64, f64)> = (0..theta_hat.num_users)
        .into_par_iter()
        .map(|u| {
            let raw = theta_hat.raw_rewards(spec, u);
            let mut clip: f64 = 0.0;
            let values = raw
                .into_iter()
                .map(|row| {
                    row.into_iter()
                        .map(|x| {
                            let c = x.clamp(0.0, 1.0);
                            clip = clip.max((x - c).abs());
                            c
                        })
                        .collect()
                })
                .collect();
            let (pi, v) = rf_plan(rf, &RewardFunction { values })?;
            Ok((pi, v, clip))
        })
        .collect::<Result<_>>()?;
    let mut warnings = Vec::new();
    let mut max_clip: f64 = 0.0;
    let plans = out
        .into_iter()
        .enumerate()
        .map(|(u, (pi, v, clip))| {
            if clip > CLIP_WARN {
                warnings.push(format!("user {u}: rewards clipped by {clip:.3e}"));
            }
            max_clip = max_clip.max(clip);
            (pi, v)
        })
        .collect();
    Ok(LinearPlan { plans, max_clip, warnings })
}
