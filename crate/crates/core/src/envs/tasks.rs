use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{wrap_angle, EnvKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PendulumSwingup,
    PendulumKeepdown,
    MountaincarGoal,
    PointmassGoto,
}

/// Downstream reward on the simulator state.
///
/// `goal` is the goal position for `mountaincar_goal` (default `0.45`) and
/// the target point for `pointmass_goto` (default `(1, 1)`); the pendulum
/// tasks ignore it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub goal: Vec<f64>,
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        TaskSpec { kind, goal: Vec::new() }
    }

    pub fn env_kind(&self) -> EnvKind {
        match self.kind {
            TaskKind::PendulumSwingup | TaskKind::PendulumKeepdown => EnvKind::Pendulum,
            TaskKind::MountaincarGoal => EnvKind::MountainCar,
            TaskKind::PointmassGoto => EnvKind::PointMass,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            TaskKind::PendulumSwingup => "pendulum_swingup",
            TaskKind::PendulumKeepdown => "pendulum_keepdown",
            TaskKind::MountaincarGoal => "mountaincar_goal",
            TaskKind::PointmassGoto => "pointmass_goto",
        }
    }

    fn goal_or(&self, default: &[f64]) -> Vec<f64> {
        if self.goal.is_empty() {
            default.to_vec()
        } else {
            self.goal.clone()
        }
    }

    /// Reward for being in state `x` and applying `u`.
    pub fn reward(&self, x: &[f64], u: &[f64]) -> f64 {
        match self.kind {
            TaskKind::PendulumSwingup => {
                let th = wrap_angle(x[0]);
                -(th * th + 0.1 * x[1] * x[1] + 0.001 * u[0] * u[0])
            }
            TaskKind::PendulumKeepdown => {
                // angular distance to the hanging position
                let d = wrap_angle(x[0] - PI);
                -(d * d + 0.1 * x[1] * x[1] + 0.001 * u[0] * u[0])
            }
            TaskKind::MountaincarGoal => {
                let goal = self.goal_or(&[0.45])[0];
                let bonus = if x[0] >= goal { 100.0 } else { 0.0 };
                -0.1 * u[0] * u[0] + bonus
            }
            TaskKind::PointmassGoto => {
                let goal = self.goal_or(&[1.0, 1.0]);
                -((x[0] - goal[0]).powi(2) + (x[1] - goal[1]).powi(2))
            }
        }
    }
}

pub fn task_reward(task: &TaskSpec, x: &[f64], u: &[f64]) -> f64 {
    task.reward(x, u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swingup_upright_is_zero() {
        assert_eq!(task_reward(&TaskSpec::new(TaskKind::PendulumSwingup), &[0.0, 0.0], &[0.0]), 0.0);
    }

    #[test]
    fn keepdown_at_bottom_is_zero() {
        let t = TaskSpec::new(TaskKind::PendulumKeepdown);
        assert_eq!(task_reward(&t, &[PI, 0.0], &[0.0]), 0.0);
        // just past the wrap point is still close to the bottom
        assert!(task_reward(&t, &[-PI + 0.01, 0.0], &[0.0]) > -1e-3);
    }

    #[test]
    fn mountain_car_goal_bonus() {
        let t = TaskSpec::new(TaskKind::MountaincarGoal);
        assert!((task_reward(&t, &[0.5, 0.0], &[1.0]) - 99.9).abs() < 1e-12);
        assert!((task_reward(&t, &[0.0, 0.0], &[1.0]) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn swingup_penalizes_velocity_quadratically() {
        let t = TaskSpec::new(TaskKind::PendulumSwingup);
        assert!((task_reward(&t, &[0.0, -2.0], &[0.0]) + 0.4).abs() < 1e-12);
        assert!((task_reward(&t, &[0.0, 0.0], &[2.0]) + 0.004).abs() < 1e-12);
    }

    #[test]
    fn point_mass_distance() {
        let t = TaskSpec { kind: TaskKind::PointmassGoto, goal: vec![0.0, 1.0] };
        assert_eq!(task_reward(&t, &[1.0, 1.0, 5.0, 5.0], &[0.0, 0.0]), -1.0);
    }
}
