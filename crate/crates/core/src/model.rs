//! Scenario geometry and the RSS measurement model.
//!
//! A sensor `i` hovers at horizontal range `r_i` and height `h_i` from a
//! ground-level source. Its horizontal angle `β_i` is measured so that
//! `tan β = Δx / Δy`: `β = 0` points along +y and `β = π/2` along +x.
//! All angles are radians in `[0, 2π)` unless a name says `_deg`.

use std::f64::consts::{LN_10, TAU};
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, Vector2, Vector3};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Tolerance on `‖g‖ = 1` accepted by [`direction_to_angle`].
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    /// Strength differences: the transmit power is a nuisance parameter.
    Rssd,
    /// Absolute strengths with known transmit power.
    Rss,
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Source position; the height component is always zero.
    pub source: Vector3<f64>,
    /// Path-loss exponent.
    pub gamma: f64,
    pub horiz_dist: Vec<f64>,
    pub vert_dist: Vec<f64>,
    /// Per-sample noise standard deviation in dB.
    pub noise_std: Vec<f64>,
    /// Samples averaged at each measuring position.
    pub samples_per_position: usize,
    /// Spread-angle bound in radians, `0 < β_max ≤ 2π`.
    pub beta_max: f64,
    pub variant: Variant,
    /// Reference power used when simulating measurements.
    pub p0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub r: f64,
    pub h: f64,
    pub sigma: f64,
}

/// On-disk form of a [`Scenario`]. Angles are degrees.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub source: Vec<f64>,
    pub gamma: f64,
    pub sensors: Vec<SensorSpec>,
    pub samples_per_position: usize,
    pub beta_max_deg: f64,
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub p0: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl Scenario {
    /// Builds a scenario and checks every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        source: Vector3<f64>,
        gamma: f64,
        horiz_dist: Vec<f64>,
        vert_dist: Vec<f64>,
        noise_std: Vec<f64>,
        samples_per_position: usize,
        beta_max: f64,
        variant: Variant,
    ) -> Result<Self> {
        let s = Scenario {
            source,
            gamma,
            horiz_dist,
            vert_dist,
            noise_std,
            samples_per_position,
            beta_max,
            variant,
            p0: 0.0,
        };
        s.validate()?;
        Ok(s)
    }

    /// `n` identical sensors at range `r`, height `h` and noise `sigma`.
    pub fn uniform(n: usize, r: f64, h: f64, sigma: f64, beta_max: f64) -> Result<Self> {
        Scenario::new(
            Vector3::zeros(),
            2.0,
            vec![r; n],
            vec![h; n],
            vec![sigma; n],
            10,
            beta_max,
            Variant::Rssd,
        )
    }

    /// Eight sensors at 1000 m range and 100 m height; half with noise
    /// variance 8 dB², half with 2 dB²; ten samples per position.
    pub fn case_a(beta_max: f64) -> Self {
        let mut s = Scenario::uniform(8, 1000.0, 100.0, 1.0, beta_max)
            .expect("built-in scenario is valid");
        for (i, sigma) in s.noise_std.iter_mut().enumerate() {
            *sigma = if i < 4 { 8f64.sqrt() } else { 2f64.sqrt() };
        }
        s
    }

    /// Eight identical sensors with noise variance 4 dB².
    pub fn case_b(beta_max: f64) -> Self {
        Scenario::uniform(8, 1000.0, 100.0, 2.0, beta_max).expect("built-in scenario is valid")
    }

    pub fn n_sensors(&self) -> usize {
        self.horiz_dist.len()
    }

    /// Effective variance `σ_i² / m` of an averaged measurement.
    pub fn effective_variance(&self) -> Vec<f64> {
        let m = self.samples_per_position as f64;
        self.noise_std.iter().map(|s| s * s / m).collect()
    }

    pub fn effective_std(&self) -> Vec<f64> {
        self.effective_variance().into_iter().map(f64::sqrt).collect()
    }

    pub fn slant_distances(&self) -> Vec<f64> {
        self.horiz_dist
            .iter()
            .zip(&self.vert_dist)
            .map(|(&r, &h)| (r * r + h * h).sqrt())
            .collect()
    }

    pub fn source_params(&self) -> SourceParams {
        SourceParams {
            p0: self.p0,
            position: self.source.xy(),
        }
    }

    pub fn with_beta_max(&self, beta_max: f64) -> Result<Self> {
        let mut s = self.clone();
        s.beta_max = beta_max;
        s.validate()?;
        Ok(s)
    }

    pub fn with_source(&self, position: Vector2<f64>) -> Self {
        let mut s = self.clone();
        s.source = Vector3::new(position.x, position.y, 0.0);
        s
    }

    /// Stretches the sensor list to `n` entries: new sensor `i` copies
    /// template sensor `⌊i·N/n⌋`, so contiguous groups keep their share.
    pub fn resized(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("sensor count must be positive"));
        }
        let template = self.n_sensors();
        let pick = |v: &[f64]| (0..n).map(|i| v[i * template / n]).collect::<Vec<_>>();
        let mut s = self.clone();
        s.horiz_dist = pick(&self.horiz_dist);
        s.vert_dist = pick(&self.vert_dist);
        s.noise_std = pick(&self.noise_std);
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.horiz_dist.len();
        if n == 0 {
            return Err(Error::config("sensors", "at least one sensor is required"));
        }
        if self.vert_dist.len() != n || self.noise_std.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "horiz_dist {}, vert_dist {}, noise_std {}",
                n,
                self.vert_dist.len(),
                self.noise_std.len()
            )));
        }
        if !self.source.iter().all(|c| c.is_finite()) || self.source.z != 0.0 {
            return Err(Error::config("source", "must be finite with zero height"));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::config("gamma", "must be positive and finite"));
        }
        for i in 0..n {
            let (r, h, s) = (self.horiz_dist[i], self.vert_dist[i], self.noise_std[i]);
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::config(format!("sensors[{i}].r"), "must be > 0"));
            }
            if !(h.is_finite() && h >= 0.0) {
                return Err(Error::config(format!("sensors[{i}].h"), "must be >= 0"));
            }
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::config(format!("sensors[{i}].sigma"), "must be > 0"));
            }
        }
        if self.samples_per_position == 0 {
            return Err(Error::config("samples_per_position", "must be positive"));
        }
        if !(self.beta_max > 0.0 && self.beta_max <= TAU + 1e-12) {
            return Err(Error::config("beta_max_deg", "must lie in (0, 360]"));
        }
        if !self.p0.is_finite() {
            return Err(Error::config("p0", "must be finite"));
        }
        Ok(())
    }

    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            source: self.source.iter().copied().collect(),
            gamma: self.gamma,
            sensors: (0..self.n_sensors())
                .map(|i| SensorSpec {
                    r: self.horiz_dist[i],
                    h: self.vert_dist[i],
                    sigma: self.noise_std[i],
                })
                .collect(),
            samples_per_position: self.samples_per_position,
            beta_max_deg: canonical_degrees(self.beta_max),
            variant: self.variant,
            p0: self.p0,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Scenario::try_from(file)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Scenario::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("scenario serializes")
    }
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = Error;

    fn try_from(f: ScenarioFile) -> Result<Self> {
        let source = match f.source.as_slice() {
            [x, y] => Vector3::new(*x, *y, 0.0),
            [x, y, z] => {
                if *z != 0.0 {
                    return Err(Error::config("source[2]", "source height must be 0"));
                }
                Vector3::new(*x, *y, 0.0)
            }
            _ => return Err(Error::config("source", "expected 2 or 3 coordinates")),
        };
        if !(f.beta_max_deg > 0.0 && f.beta_max_deg <= 360.0) {
            return Err(Error::config(
                "beta_max_deg",
                format!("{} is outside (0, 360]", f.beta_max_deg),
            ));
        }
        let s = Scenario {
            source,
            gamma: f.gamma,
            horiz_dist: f.sensors.iter().map(|s| s.r).collect(),
            vert_dist: f.sensors.iter().map(|s| s.h).collect(),
            noise_std: f.sensors.iter().map(|s| s.sigma).collect(),
            samples_per_position: f.samples_per_position,
            beta_max: f.beta_max_deg.to_radians(),
            variant: f.variant,
            p0: f.p0,
        };
        s.validate()?;
        Ok(s)
    }
}

/// Unknowns of the measurement model: reference power and source position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceParams {
    pub p0: f64,
    pub position: Vector2<f64>,
}

impl SourceParams {
    pub fn new(p0: f64, x: f64, y: f64) -> Self {
        SourceParams {
            p0,
            position: Vector2::new(x, y),
        }
    }
}

/// Horizontal angles together with the equivalent `N×2` direction matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    angles: Vec<f64>,
    directions: DMatrix<f64>,
}

impl Placement {
    pub fn from_angles(angles: &[f64]) -> Self {
        let angles: Vec<f64> = angles.iter().map(|&a| wrap_angle(a)).collect();
        let mut directions = DMatrix::zeros(angles.len(), 2);
        for (i, &a) in angles.iter().enumerate() {
            let g = angle_to_direction(a);
            directions[(i, 0)] = g.x;
            directions[(i, 1)] = g.y;
        }
        Placement { angles, directions }
    }

    pub fn from_degrees(degrees: &[f64]) -> Self {
        let rad: Vec<f64> = degrees.iter().map(|d| d.to_radians()).collect();
        Placement::from_angles(&rad)
    }

    /// Builds a placement from unit-norm rows of `g`.
    pub fn from_directions(g: &DMatrix<f64>) -> Result<Self> {
        if g.ncols() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "direction matrix must have 2 columns, got {}",
                g.ncols()
            )));
        }
        let angles = (0..g.nrows())
            .map(|i| direction_to_angle(Vector2::new(g[(i, 0)], g[(i, 1)])))
            .collect::<Result<Vec<_>>>()?;
        Ok(Placement {
            angles,
            directions: g.clone(),
        })
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn angles_deg(&self) -> Vec<f64> {
        self.angles.iter().map(|a| a.to_degrees()).collect()
    }

    pub fn directions(&self) -> &DMatrix<f64> {
        &self.directions
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }
}

/// Degrees rounded to 1e-9, so that 120° prints as `120` rather than
/// `119.99999999999999`.
pub fn canonical_degrees(rad: f64) -> f64 {
    (rad.to_degrees() * 1e9).round() / 1e9
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

pub fn angle_to_direction(beta: f64) -> Vector2<f64> {
    Vector2::new(beta.cos(), beta.sin())
}

/// Inverse of [`angle_to_direction`], returning an angle in `[0, 2π)`.
pub fn direction_to_angle(g: Vector2<f64>) -> Result<f64> {
    let norm = g.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::invalid(format!(
            "direction must have unit norm, got {norm}"
        )));
    }
    Ok(wrap_angle(g.y.atan2(g.x)))
}

/// `√(r² + h²)`.
pub fn slant_distance(r: f64, h: f64) -> Result<f64> {
    if !(r > 0.0) || !(h >= 0.0) || !r.is_finite() || !h.is_finite() {
        return Err(Error::invalid(format!(
            "slant distance needs r > 0 and h >= 0, got r={r}, h={h}"
        )));
    }
    Ok(r.hypot(h))
}

/// Position of sensor `i` (0-based) at angle `beta` around the scenario source.
pub fn sensor_position(scenario: &Scenario, i: usize, beta: f64) -> Result<Vector3<f64>> {
    let n = scenario.n_sensors();
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, len: n });
    }
    Ok(offset_position(
        scenario.source,
        scenario.horiz_dist[i],
        scenario.vert_dist[i],
        beta,
    ))
}

pub(crate) fn offset_position(source: Vector3<f64>, r: f64, h: f64, beta: f64) -> Vector3<f64> {
    Vector3::new(
        source.x + r * beta.sin(),
        source.y + r * beta.cos(),
        h,
    )
}

/// All sensor positions for `placement` around the scenario source.
pub fn sensor_positions(scenario: &Scenario, placement: &Placement) -> Result<Vec<Vector3<f64>>> {
    if placement.len() != scenario.n_sensors() {
        return Err(Error::DimensionMismatch(format!(
            "placement has {} angles, scenario has {} sensors",
            placement.len(),
            scenario.n_sensors()
        )));
    }
    placement
        .angles()
        .iter()
        .enumerate()
        .map(|(i, &b)| sensor_position(scenario, i, b))
        .collect()
}

/// Horizontal angle of `position` seen from `source`, in `[0, 2π)`.
pub fn horizontal_angle(source: Vector2<f64>, position: Vector3<f64>) -> f64 {
    wrap_angle((position.x - source.x).atan2(position.y - source.y))
}

/// Noise-free received strength `P₀ − 10γ·log₁₀ d`.
pub fn mean_rss(p0: f64, gamma: f64, d: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::invalid(format!("distance must be > 0, got {d}")));
    }
    Ok(p0 - 10.0 * gamma * d.ln() / LN_10)
}

/// Averaged noisy measurements at the sensors of `placement` (placed around
/// the scenario source) for a source with parameters `truth`.
pub fn simulate_measurements(
    scenario: &Scenario,
    placement: &Placement,
    truth: &SourceParams,
    seed: u64,
) -> Result<Vec<f64>> {
    let positions = sensor_positions(scenario, placement)?;
    simulate_at_positions(
        &positions,
        truth,
        scenario.gamma,
        &scenario.noise_std,
        scenario.samples_per_position,
        seed,
    )
}

/// Averages `samples` draws of `f_i(θ) + η_i`, `η_i ~ N(0, σ_i²)`, per sensor.
/// Sensor `i` draws from substream `i` of `seed`.
pub fn simulate_at_positions(
    positions: &[Vector3<f64>],
    truth: &SourceParams,
    gamma: f64,
    noise_std: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if positions.len() != noise_std.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} positions vs {} noise levels",
            positions.len(),
            noise_std.len()
        )));
    }
    if samples == 0 {
        return Err(Error::invalid("samples per position must be positive"));
    }
    positions
        .iter()
        .zip(noise_std)
        .enumerate()
        .map(|(i, (pos, &sigma))| {
            let d = (pos - Vector3::new(truth.position.x, truth.position.y, 0.0)).norm();
            let mean = mean_rss(truth.p0, gamma, d)?;
            let mut rng = rng::substream(seed, i as u64);
            let total: f64 = (0..samples)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mean + sigma * z
                })
                .sum();
            Ok(total / samples as f64)
        })
        .collect()
}
