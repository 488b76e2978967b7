use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of one synthetic scene. Coordinates are continuous pixels:
/// pixel `(x, y)` covers `[x, x+1) x [y, y+1)`, walls sit at 0, `width` and `height`,
/// and gravity pulls toward `+y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub num_balls: usize,
    pub radius_px: f64,
    pub restitution: f64,
    pub gravity: f64,
    pub init_positions: Vec<[f64; 2]>,
    pub init_velocities: Vec<[f64; 2]>,
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub rng_seed: u64,
}

impl SceneSpec {
    /// Upper bound on any ball's speed over the whole run (energy bound under gravity).
    pub fn speed_bound(&self) -> f64 {
        let fastest = self
            .init_velocities
            .iter()
            .map(|v| v[0] * v[0] + v[1] * v[1])
            .fold(0.0f64, f64::max);
        let total: f64 = self.init_velocities.iter().map(|v| v[0] * v[0] + v[1] * v[1]).sum();
        // Elastic exchanges can funnel all kinetic energy into one ball.
        let ke = if self.num_balls > 1 { total } else { fastest };
        (ke + 2.0 * self.gravity * self.height as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::validation(format!("scene: {m}")));
        if self.num_balls == 0 {
            return fail("needs at least one ball".into());
        }
        if !(self.radius_px > 0.0) {
            return fail("ball radius must be positive".into());
        }
        if !(self.restitution > 0.0 && self.restitution <= 1.0) {
            return fail(format!("restitution {} outside (0, 1]", self.restitution));
        }
        if !(self.gravity >= 0.0 && self.gravity.is_finite()) {
            return fail("gravity must be non-negative".into());
        }
        if self.num_frames < crate::video::MIN_FRAMES {
            return fail(format!("needs at least {} frames", crate::video::MIN_FRAMES));
        }
        if self.height < crate::video::MIN_SIDE || self.width < crate::video::MIN_SIDE {
            return fail("frame too small".into());
        }
        if self.init_positions.len() != self.num_balls || self.init_velocities.len() != self.num_balls {
            return fail("one position and velocity per ball required".into());
        }
        let r = self.radius_px;
        for (i, p) in self.init_positions.iter().enumerate() {
            if p[0] < r || p[1] < r || p[0] > self.width as f64 - r || p[1] > self.height as f64 - r {
                return fail(format!("ball {i} starts closer than its radius to a wall"));
            }
        }
        for i in 0..self.num_balls {
            for j in i + 1..self.num_balls {
                let a = self.init_positions[i];
                let b = self.init_positions[j];
                if (a[0] - b[0]).hypot(a[1] - b[1]) <= 2.0 * r {
                    return fail(format!("balls {i} and {j} start overlapping"));
                }
            }
        }
        let limit = self.height.min(self.width) as f64 / 4.0;
        if self.speed_bound() >= limit {
            return fail(format!(
                "speed bound {:.3} px/frame not below {limit}",
                self.speed_bound()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// One ball, no gravity, elastic walls.
    Bounce,
    /// Two or three balls, no gravity, ball-ball collisions.
    Multi,
    /// One or two balls falling under gravity with elastic bounces.
    Gravity,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bounce" => Ok(Preset::Bounce),
            "multi" => Ok(Preset::Multi),
            "gravity" => Ok(Preset::Gravity),
            other => Err(format!("unknown preset `{other}` (bounce, multi, gravity)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneShape {
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for SceneShape {
    fn default() -> Self {
        Self {
            num_frames: 64,
            height: 64,
            width: 64,
        }
    }
}

/// Draws a valid scene for `preset` deterministically from `seed`.
pub fn random_scene(preset: Preset, shape: SceneShape, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE7_E5EE_D000_0000);
    let side = shape.height.min(shape.width) as f64;
    let radius = (side * 0.1).max(2.0);
    let (num_balls, gravity, speed) = match preset {
        Preset::Bounce => (1, 0.0, (0.025 * side, 0.055 * side)),
        Preset::Multi => (rng.random_range(2..=3), 0.0, (0.02 * side, 0.045 * side)),
        Preset::Gravity => (
            rng.random_range(1..=2),
            rng.random_range(0.0012..0.003) * side,
            (0.01 * side, 0.03 * side),
        ),
    };
    loop {
        let mut positions: Vec<[f64; 2]> = Vec::new();
        let mut attempts = 0;
        while positions.len() < num_balls && attempts < 1000 {
            attempts += 1;
            let p = [
                rng.random_range(radius + 1.0..shape.width as f64 - radius - 1.0),
                rng.random_range(radius + 1.0..shape.height as f64 - radius - 1.0),
            ];
            if positions
                .iter()
                .all(|q| (p[0] - q[0]).hypot(p[1] - q[1]) > 2.0 * radius + 2.0)
            {
                positions.push(p);
            }
        }
        let velocities: Vec<[f64; 2]> = (0..positions.len())
            .map(|_| {
                let s = rng.random_range(speed.0..speed.1);
                // Keep away from axis-aligned directions so both walls get hit.
                let quadrant = rng.random_range(0..4) as f64 * std::f64::consts::FRAC_PI_2;
                let theta = quadrant + rng.random_range(0.25..(std::f64::consts::FRAC_PI_2 - 0.25));
                [s * theta.cos(), s * theta.sin()]
            })
            .collect();
        let spec = SceneSpec {
            num_balls: positions.len(),
            radius_px: radius,
            restitution: 1.0,
            gravity,
            init_positions: positions,
            init_velocities: velocities,
            num_frames: shape.num_frames,
            height: shape.height,
            width: shape.width,
            rng_seed: seed,
        };
        if spec.num_balls == num_balls && spec.validate().is_ok() {
            return spec;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_and_deterministic() {
        for preset in [Preset::Bounce, Preset::Multi, Preset::Gravity] {
            for seed in 0..40 {
                let a = random_scene(preset, SceneShape::default(), seed);
                let b = random_scene(preset, SceneShape::default(), seed);
                assert_eq!(a, b);
                a.validate().unwrap();
            }
        }
    }

    #[test]
    fn validation_catches_bad_specs() {
        let good = random_scene(Preset::Bounce, SceneShape::default(), 1);
        let mut s = good.clone();
        s.radius_px = 0.0;
        assert!(s.validate().is_err());
        let mut s = good.clone();
        s.init_positions[0] = [1.0, 30.0];
        assert!(s.validate().is_err());
        let mut s = good.clone();
        s.init_velocities[0] = [20.0, 0.0];
        assert!(s.validate().is_err());
        let mut s = good;
        s.num_balls = 0;
        s.init_positions.clear();
        s.init_velocities.clear();
        assert!(s.validate().is_err());
    }
}
