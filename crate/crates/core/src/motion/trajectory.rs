use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::perlin::perlin_series;
use crate::data::Severity;
use crate::error::{Error, Result};

/// Rigid-body pose offset of one phase-encode line: translations in mm,
/// rotations in degrees.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

impl Pose {
    pub fn as_array(&self) -> [f64; 6] {
        [self.tx, self.ty, self.tz, self.rx, self.ry, self.rz]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            tx: a[0],
            ty: a[1],
            tz: a[2],
            rx: a[3],
            ry: a[4],
            rz: a[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionEvent {
    /// Raised-cosine bump on tz and rx.
    Swallow { start: usize, width: usize, tz: f64, rx: f64 },
    /// Step change on all six parameters from `line` onward.
    Sudden { line: usize, delta: Pose },
}

/// Per-line motion states of one acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionTrajectory {
    pub lines: Vec<Pose>,
    #[serde(default)]
    pub events: Vec<MotionEvent>,
}

impl MotionTrajectory {
    pub fn zero(n: usize) -> Self {
        Self {
            lines: vec![Pose::default(); n],
            events: Vec::new(),
        }
    }

    /// Same pose on every line.
    pub fn constant(n: usize, pose: Pose) -> Self {
        Self {
            lines: vec![pose; n],
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.lines.iter().all(|p| p.as_array().iter().all(|&v| v == 0.0))
    }

    pub fn validate(&self) -> Result<()> {
        if self.lines.iter().all(Pose::is_finite) {
            Ok(())
        } else {
            Err(Error::NonFinite("motion trajectory".into()))
        }
    }

    pub fn sudden_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, MotionEvent::Sudden { .. }))
            .count()
    }

    pub fn swallow_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, MotionEvent::Swallow { .. }))
            .count()
    }
}

/// Amplitudes of a swallow event: through-plane translation (mm) and
/// rotation about x (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwallowAmplitude {
    pub tz: f64,
    pub rx: f64,
}

/// Knobs of the motion model for one artifact level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeverityProfile {
    pub level: Severity,
    /// Background motion amplitude, in each parameter's native unit.
    pub perlin_magnitude: f64,
    /// Lattice intervals of the background noise per acquisition.
    #[serde(default = "default_perlin_cells")]
    pub perlin_cells: usize,
    /// Expected swallow events per acquisition.
    pub swallow_rate: f64,
    pub swallow_amplitude: SwallowAmplitude,
    /// Bump width as a fraction of the line count.
    #[serde(default = "default_swallow_width")]
    pub swallow_width: f64,
    /// Expected sudden events per acquisition.
    pub sudden_rate: f64,
    /// Bound of each step change, mm or degrees.
    pub sudden_amplitude: f64,
    /// Radians of global line phase per mm (or degree) of through-plane
    /// motion.
    #[serde(default = "default_through_plane_phase")]
    pub through_plane_phase: f64,
    pub seed: u64,
}

fn default_perlin_cells() -> usize {
    4
}

fn default_swallow_width() -> f64 {
    0.1
}

fn default_through_plane_phase() -> f64 {
    0.1
}

impl SeverityProfile {
    /// Calibrated presets for the three artifact levels.
    pub fn preset(level: Severity) -> Result<Self> {
        let (perlin, swallow_rate, swallow, sudden_rate, sudden) = match level {
            Severity::Minor => (0.25, 0.5, (0.5, 0.5), 0.5, 0.5),
            Severity::Moderate => (0.6, 1.0, (1.5, 1.5), 1.5, 1.0),
            Severity::Heavy => (1.2, 2.0, (3.0, 3.0), 2.5, 2.0),
            Severity::None => {
                return Err(Error::InvalidArgument(
                    "artifact-free data has no motion profile".into(),
                ));
            }
        };
        Ok(Self {
            level,
            perlin_magnitude: perlin,
            perlin_cells: default_perlin_cells(),
            swallow_rate,
            swallow_amplitude: SwallowAmplitude {
                tz: swallow.0,
                rx: swallow.1,
            },
            swallow_width: default_swallow_width(),
            sudden_rate,
            sudden_amplitude: sudden,
            through_plane_phase: default_through_plane_phase(),
            seed: 0,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Profile with every amplitude zero.
    pub fn still(level: Severity) -> Self {
        Self {
            level,
            perlin_magnitude: 0.0,
            perlin_cells: default_perlin_cells(),
            swallow_rate: 0.0,
            swallow_amplitude: SwallowAmplitude { tz: 0.0, rx: 0.0 },
            swallow_width: default_swallow_width(),
            sudden_rate: 0.0,
            sudden_amplitude: 0.0,
            through_plane_phase: default_through_plane_phase(),
            seed: 0,
        }
    }

    fn amplitudes(&self) -> [f64; 4] {
        [
            self.perlin_magnitude,
            self.swallow_amplitude.tz,
            self.swallow_amplitude.rx,
            self.sudden_amplitude,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let values = [
            self.perlin_magnitude,
            self.swallow_rate,
            self.swallow_amplitude.tz,
            self.swallow_amplitude.rx,
            self.swallow_width,
            self.sudden_rate,
            self.sudden_amplitude,
            self.through_plane_phase,
        ];
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(
                "severity profile magnitudes and rates must be finite and non-negative".into(),
            ));
        }
        if self.level == Severity::None {
            return Err(Error::Config("severity profile level cannot be `none`".into()));
        }
        Ok(())
    }
}

/// Field-wise amplitude ordering between two profiles.
pub fn amplitudes_ordered(lower: &SeverityProfile, higher: &SeverityProfile) -> bool {
    lower
        .amplitudes()
        .iter()
        .zip(higher.amplitudes().iter())
        .all(|(a, b)| a <= b)
}

fn raised_cosine(offset: usize, width: usize) -> f64 {
    if width == 0 {
        return 0.0;
    }
    let phase = (offset as f64 + 0.5) / width as f64;
    0.5 * (1.0 - (2.0 * std::f64::consts::PI * phase).cos())
}

/// Background noise on every parameter, plus Poisson-placed swallow bumps
/// (tz, rx only) and sudden steps (all parameters).
pub fn build_trajectory(n: usize, profile: &SeverityProfile) -> Result<MotionTrajectory> {
    if n == 0 {
        return Err(Error::InvalidArgument("trajectory needs at least one line".into()));
    }
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let mut params = vec![[0.0f64; 6]; n];

    for dof in 0..6 {
        let seed = rng.random::<u64>();
        let series = perlin_series(n, profile.perlin_magnitude, profile.perlin_cells, seed);
        for (line, v) in series.into_iter().enumerate() {
            params[line][dof] += v;
        }
    }

    let mut events = Vec::new();
    let draw_count = |rng: &mut ChaCha8Rng, rate: f64| -> usize {
        if rate > 0.0 {
            Poisson::new(rate).map(|d| d.sample(rng) as usize).unwrap_or(0)
        } else {
            0
        }
    };

    let swallows = draw_count(&mut rng, profile.swallow_rate);
    let width = ((profile.swallow_width * n as f64).round() as usize).clamp(1, n);
    for _ in 0..swallows {
        let start = rng.random_range(0..n);
        let scale = rng.random_range(0.5..=1.0);
        let tz = profile.swallow_amplitude.tz * scale;
        let rx = profile.swallow_amplitude.rx * scale;
        for offset in 0..width.min(n - start) {
            let w = raised_cosine(offset, width);
            params[start + offset][2] += tz * w;
            params[start + offset][3] += rx * w;
        }
        events.push(MotionEvent::Swallow { start, width, tz, rx });
    }

    let sudden = draw_count(&mut rng, profile.sudden_rate);
    for _ in 0..sudden {
        let line = rng.random_range(0..n);
        let mut delta = [0.0; 6];
        if profile.sudden_amplitude > 0.0 {
            for d in delta.iter_mut() {
                *d = rng.random_range(-profile.sudden_amplitude..=profile.sudden_amplitude);
            }
        }
        for p in params.iter_mut().skip(line) {
            for (v, d) in p.iter_mut().zip(delta) {
                *v += d;
            }
        }
        events.push(MotionEvent::Sudden {
            line,
            delta: Pose::from_array(delta),
        });
    }

    let t = MotionTrajectory {
        lines: params.into_iter().map(Pose::from_array).collect(),
        events,
    };
    t.validate()?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn still_profile_gives_zero_trajectory() {
        let mut p = SeverityProfile::still(Severity::Minor);
        p.swallow_rate = 3.0;
        p.sudden_rate = 3.0;
        let t = build_trajectory(64, &p).unwrap();
        assert!(t.is_zero());
    }

    #[test]
    fn swallow_only_touches_tz_and_rx() {
        let mut p = SeverityProfile::still(Severity::Moderate);
        p.swallow_rate = 4.0;
        p.swallow_amplitude = SwallowAmplitude { tz: 2.0, rx: 1.0 };
        for seed in 0..20 {
            let t = build_trajectory(128, &p.clone().with_seed(seed)).unwrap();
            for pose in &t.lines {
                assert_eq!((pose.tx, pose.ty, pose.ry, pose.rz), (0.0, 0.0, 0.0, 0.0));
            }
            if t.swallow_count() > 0 {
                assert!(t.lines.iter().any(|p| p.tz != 0.0));
            }
        }
    }

    #[test]
    fn sudden_event_rate_matches_poisson_mean() {
        let mut p = SeverityProfile::still(Severity::Heavy);
        p.sudden_rate = 1.7;
        p.sudden_amplitude = 1.0;
        let builds = 10_000;
        let total: usize = (0..builds)
            .map(|seed| build_trajectory(16, &p.clone().with_seed(seed)).unwrap().sudden_count())
            .sum();
        let mean = total as f64 / builds as f64;
        // Poisson: variance = rate, so the mean has sigma sqrt(rate / builds).
        let sigma = (p.sudden_rate / builds as f64).sqrt();
        assert!((mean - p.sudden_rate).abs() < 5.0 * sigma, "{mean}");
    }

    #[test]
    fn presets_are_ordered() {
        let min = SeverityProfile::preset(Severity::Minor).unwrap();
        let mid = SeverityProfile::preset(Severity::Moderate).unwrap();
        let max = SeverityProfile::preset(Severity::Heavy).unwrap();
        assert!(amplitudes_ordered(&min, &mid));
        assert!(amplitudes_ordered(&mid, &max));
        assert!(SeverityProfile::preset(Severity::None).is_err());
    }

    #[test]
    fn negative_amplitude_rejected() {
        let mut p = SeverityProfile::still(Severity::Minor);
        p.sudden_amplitude = -1.0;
        assert!(build_trajectory(8, &p).is_err());
        assert!(build_trajectory(0, &SeverityProfile::still(Severity::Minor)).is_err());
    }
}
