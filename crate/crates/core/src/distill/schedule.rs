use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::NetParams;

/// How the teacher follows the student.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherMode {
    /// EMA after every step with a cosine momentum schedule.
    ContinuousEma,
    /// Teacher and student share parameters (momentum 0).
    Shared,
    /// Teacher frozen between refreshes; labels cached per period.
    PeriodicSgp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillSchedule {
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub total_steps: usize,
    pub mode: TeacherMode,
    /// Periodic mode only.
    pub refresh_every_epochs: usize,
}

impl DistillSchedule {
    pub fn new(mode: TeacherMode, total_steps: usize) -> Self {
        Self {
            alpha_start: 0.9,
            alpha_end: 1.0,
            total_steps,
            mode,
            refresh_every_epochs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.alpha_start && self.alpha_start <= self.alpha_end && self.alpha_end <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= alpha_start <= alpha_end <= 1, got {} and {}",
                self.alpha_start, self.alpha_end
            )));
        }
        if self.mode == TeacherMode::PeriodicSgp && self.refresh_every_epochs == 0 {
            return Err(Error::InvalidConfig("refresh_every_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Teacher momentum at `step`, rising from `alpha_start` to `alpha_end`
/// along half a cosine period.
pub fn cosine_alpha(schedule: &DistillSchedule, step: usize) -> Result<f64> {
    if step > schedule.total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total: schedule.total_steps,
        });
    }
    let (start, end) = (schedule.alpha_start, schedule.alpha_end);
    if step == schedule.total_steps {
        return Ok(end);
    }
    if step == 0 {
        return Ok(start);
    }
    let progress = step as f64 / schedule.total_steps as f64;
    let alpha = end - (end - start) * ((std::f64::consts::PI * progress).cos() + 1.0) / 2.0;
    Ok(alpha.clamp(start, end))
}

/// `alpha * teacher + (1 - alpha) * student`, elementwise. The endpoints
/// return exact copies.
pub fn ema_update(teacher: &NetParams, student: &NetParams, alpha: f64) -> Result<NetParams> {
    if !teacher.same_shape(student) {
        return Err(Error::ShapeMismatch(format!(
            "teacher {:?} vs student {:?}",
            teacher.layer_dims(),
            student.layer_dims()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(student.clone());
    }
    if alpha == 1.0 {
        return Ok(teacher.clone());
    }
    let beta = 1.0 - alpha;
    teacher.zip_map(student, |t, s| {
        let v = alpha * t + beta * s;
        // Keep the result inside [min(t, s), max(t, s)] despite rounding.
        v.clamp(t.min(s), t.max(s))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{param_init, Layer};
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schedule(total: usize) -> DistillSchedule {
        DistillSchedule::new(TeacherMode::ContinuousEma, total)
    }

    #[test]
    fn endpoints_and_midpoint() {
        let s = schedule(1000);
        assert_eq!(cosine_alpha(&s, 0).unwrap(), 0.9);
        assert_eq!(cosine_alpha(&s, 1000).unwrap(), 1.0);
        assert!((cosine_alpha(&s, 500).unwrap() - 0.95).abs() < 1e-12);
        assert!(matches!(cosine_alpha(&s, 1001), Err(Error::StepOutOfRange { .. })));
    }

    #[test]
    fn monotone_over_many_steps() {
        let s = schedule(10_000);
        let mut prev = 0.0;
        for step in 0..=10_000 {
            let a = cosine_alpha(&s, step).unwrap();
            assert!(a >= prev);
            prev = a;
        }
    }

    fn scalar(v: f64) -> NetParams {
        NetParams::from_layers(vec![Layer {
            weights: DMatrix::from_element(1, 1, v),
            bias: DVector::from_element(1, 0.0),
        }])
        .unwrap()
    }

    #[test]
    fn fixed_points_and_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = param_init(&[4, 5, 3], &mut rng).unwrap();
        let s = param_init(&[4, 5, 3], &mut rng).unwrap();
        assert_eq!(ema_update(&t, &s, 0.0).unwrap(), s);
        assert_eq!(ema_update(&t, &s, 1.0).unwrap(), t);
        let mid = ema_update(&scalar(2.0), &scalar(4.0), 0.5).unwrap();
        assert_eq!(mid.layers()[0].weights[(0, 0)], 3.0);
        let other = param_init(&[4, 6, 3], &mut rng).unwrap();
        assert!(matches!(ema_update(&t, &other, 0.5), Err(Error::ShapeMismatch(_))));
    }

    proptest! {
        #[test]
        fn ema_is_convex(seed in any::<u64>(), alpha in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = param_init(&[3, 4, 2], &mut rng).unwrap();
            let s = param_init(&[3, 4, 2], &mut rng).unwrap();
            let out = ema_update(&t, &s, alpha).unwrap();
            for ((o, a), b) in out.values().zip(t.values()).zip(s.values()) {
                prop_assert!(o >= a.min(b) && o <= a.max(b));
            }
        }
    }
}
