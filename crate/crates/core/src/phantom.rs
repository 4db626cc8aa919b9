//! Ellipse phantoms: rasterization, the Shepp-Logan table and the synthetic
//! anatomy families used as source and target domains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::Image;

const SHEPP_LOGAN_JSON: &str = include_str!("../data/shepp_logan.json");

/// One additive ellipse in normalized coordinates (`[-1, 1]²` spans the image).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center_x: f64,
    pub center_y: f64,
    pub axis_a: f64,
    pub axis_b: f64,
    /// Counter-clockwise rotation of the `a` axis, degrees.
    #[serde(default)]
    pub rotation: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn disk(center_x: f64, center_y: f64, radius: f64, intensity: f64) -> Self {
        Self {
            center_x,
            center_y,
            axis_a: radius,
            axis_b: radius,
            rotation: 0.0,
            intensity,
        }
    }

    #[inline]
    fn contains(&self, x: f64, y: f64, cos_r: f64, sin_r: f64) -> bool {
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let u = dx * cos_r + dy * sin_r;
        let v = -dx * sin_r + dy * cos_r;
        let q = (u / self.axis_a).powi(2) + (v / self.axis_b).powi(2);
        q <= 1.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EllipsePhantomSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub ellipses: Vec<Ellipse>,
}

impl EllipsePhantomSpec {
    pub fn new(ellipses: Vec<Ellipse>) -> Self {
        Self { name: None, ellipses }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Modified Shepp-Logan head phantom (ten ellipses).
    pub fn shepp_logan() -> Self {
        Self::from_json(SHEPP_LOGAN_JSON).expect("bundled Shepp-Logan table is valid")
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.ellipses.is_empty(),
            InvalidArgument,
            "phantom spec has no ellipses"
        );
        for (i, e) in self.ellipses.iter().enumerate() {
            ensure!(
                e.axis_a > 0.0 && e.axis_b > 0.0,
                InvalidArgument,
                "ellipse {i} has non-positive axes ({}, {})",
                e.axis_a,
                e.axis_b
            );
            ensure!(
                [e.center_x, e.center_y, e.rotation, e.intensity]
                    .iter()
                    .all(|v| v.is_finite()),
                InvalidArgument,
                "ellipse {i} has non-finite parameters"
            );
        }
        Ok(())
    }

    pub fn union(&self, other: &EllipsePhantomSpec) -> EllipsePhantomSpec {
        let mut ellipses = self.ellipses.clone();
        ellipses.extend_from_slice(&other.ellipses);
        EllipsePhantomSpec::new(ellipses)
    }
}

/// Rasterize `spec` on a `size`x`size` grid.
///
/// A pixel receives an ellipse's intensity iff its centre lies inside (or on)
/// the ellipse. Normalized coordinates map `[-1, 1]` onto the full image
/// extent, so pixel `(row, col)` has centre
/// `x = (col - c) / (size/2)`, `y = (c - row) / (size/2)`, `c = (size-1)/2`.
pub fn make_phantom(spec: &EllipsePhantomSpec, size: usize) -> Result<Image> {
    ensure!(size >= 16, InvalidArgument, "phantom size must be >= 16, got {size}");
    spec.validate()?;
    let c = (size as f64 - 1.0) / 2.0;
    let half = size as f64 / 2.0;
    let mut img = Image::zeros(size, size);
    for e in &spec.ellipses {
        let (sin_r, cos_r) = e.rotation.to_radians().sin_cos();
        for row in 0..size {
            let y = (c - row as f64) / half;
            for col in 0..size {
                let x = (col as f64 - c) / half;
                if e.contains(x, y, cos_r, sin_r) {
                    let v = img.get(row, col) + e.intensity;
                    img.set(row, col, v);
                }
            }
        }
    }
    Ok(img)
}

/// Synthetic anatomy families standing in for the different training corpora.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomFamily {
    /// The fixed Shepp-Logan head; every slice is identical.
    SheppLogan,
    /// Family A: a large body outline with a few big smooth organs.
    Abdomen,
    /// Family B: skull ring with many small nested structures.
    Brain,
    /// Family B': rounder heads, thinner skull, denser fine detail.
    BrainVariant,
}

impl PhantomFamily {
    pub fn name(self) -> &'static str {
        match self {
            Self::SheppLogan => "shepp-logan",
            Self::Abdomen => "abdomen",
            Self::Brain => "brain",
            Self::BrainVariant => "brain-variant",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "shepp-logan" | "shepp_logan" | "sl" => Self::SheppLogan,
            "abdomen" | "a" => Self::Abdomen,
            "brain" | "b" => Self::Brain,
            "brain-variant" | "brain_variant" | "b'" | "bprime" => Self::BrainVariant,
            other => {
                return Err(crate::Error::InvalidArgument(format!(
                    "unknown phantom family '{other}'"
                )))
            }
        })
    }

    fn tag(self) -> u64 {
        match self {
            Self::SheppLogan => 0x51,
            Self::Abdomen => 0xa1,
            Self::Brain => 0xb1,
            Self::BrainVariant => 0xb2,
        }
    }

    /// Spec for slice `index` of the family realization drawn from `seed`.
    ///
    /// Slices are generated independently, so `slice(seed, i)` does not depend
    /// on how many slices are requested.
    pub fn slice(self, seed: u64, index: usize) -> EllipsePhantomSpec {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (self.tag() << 32) ^ index as u64);
        match self {
            Self::SheppLogan => EllipsePhantomSpec::shepp_logan(),
            Self::Abdomen => abdomen_slice(&mut rng),
            Self::Brain => brain_slice(&mut rng, &BRAIN),
            Self::BrainVariant => brain_slice(&mut rng, &BRAIN_VARIANT),
        }
    }

    pub fn slices(self, seed: u64, start: usize, count: usize) -> Vec<EllipsePhantomSpec> {
        (start..start + count).map(|i| self.slice(seed, i)).collect()
    }

    pub fn images(self, seed: u64, start: usize, count: usize, size: usize) -> Result<Vec<Image>> {
        self.slices(seed, start, count)
            .iter()
            .map(|s| make_phantom(s, size))
            .collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Point uniformly distributed in the unit disk.
fn unit_disk(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let r = rng.random::<f64>().sqrt();
    let phi = uniform(rng, 0.0, std::f64::consts::TAU);
    (r * phi.cos(), r * phi.sin())
}

fn abdomen_slice(rng: &mut ChaCha8Rng) -> EllipsePhantomSpec {
    let body_a = uniform(rng, 0.80, 0.90);
    let body_b = uniform(rng, 0.60, 0.72);
    let cx = uniform(rng, -0.03, 0.03);
    let cy = uniform(rng, -0.03, 0.03);
    let mut ellipses = vec![Ellipse {
        center_x: cx,
        center_y: cy,
        axis_a: body_a,
        axis_b: body_b,
        rotation: uniform(rng, -8.0, 8.0),
        intensity: uniform(rng, 0.55, 0.7),
    }];
    // Bright organs may be large; dark ones stay small enough that they never
    // leave the body outline.
    let organs = rng.random_range(3..=4);
    for _ in 0..organs {
        let (u, v) = unit_disk(rng);
        let bright = rng.random::<f64>() < 0.6;
        let (amax, intensity) = if bright {
            (0.32, uniform(rng, 0.1, 0.3))
        } else {
            (0.14, uniform(rng, -0.2, -0.08))
        };
        ellipses.push(Ellipse {
            center_x: cx + 0.5 * body_a * u,
            center_y: cy + 0.5 * body_b * v,
            axis_a: uniform(rng, 0.5 * amax, amax),
            axis_b: uniform(rng, 0.4 * amax, 0.8 * amax),
            rotation: uniform(rng, -90.0, 90.0),
            intensity,
        });
    }
    // spine
    ellipses.push(Ellipse::disk(
        cx + uniform(rng, -0.03, 0.03),
        cy - 0.55 * body_b,
        uniform(rng, 0.07, 0.09),
        uniform(rng, 0.3, 0.4),
    ));
    for _ in 0..rng.random_range(1..=2) {
        let (u, v) = unit_disk(rng);
        ellipses.push(Ellipse::disk(
            cx + 0.45 * body_a * u,
            cy + 0.45 * body_b * v,
            uniform(rng, 0.04, 0.06),
            uniform(rng, 0.2, 0.35),
        ));
    }
    EllipsePhantomSpec {
        name: Some("abdomen".into()),
        ellipses,
    }
}

struct BrainParams {
    head_a: (f64, f64),
    head_b: (f64, f64),
    skull_ratio: (f64, f64),
    features: (usize, usize),
    feature_axis: (f64, f64),
    nested_prob: f64,
}

const BRAIN: BrainParams = BrainParams {
    head_a: (0.66, 0.74),
    head_b: (0.86, 0.94),
    skull_ratio: (0.90, 0.93),
    features: (6, 12),
    feature_axis: (0.02, 0.08),
    nested_prob: 0.5,
};

const BRAIN_VARIANT: BrainParams = BrainParams {
    head_a: (0.76, 0.84),
    head_b: (0.80, 0.88),
    skull_ratio: (0.93, 0.95),
    features: (10, 16),
    feature_axis: (0.02, 0.06),
    nested_prob: 0.7,
};

fn brain_slice(rng: &mut ChaCha8Rng, p: &BrainParams) -> EllipsePhantomSpec {
    let a = uniform(rng, p.head_a.0, p.head_a.1);
    let b = uniform(rng, p.head_b.0, p.head_b.1);
    let k = uniform(rng, p.skull_ratio.0, p.skull_ratio.1);
    let rot = uniform(rng, -5.0, 5.0);
    let mut ellipses = vec![
        Ellipse {
            center_x: 0.0,
            center_y: 0.0,
            axis_a: a,
            axis_b: b,
            rotation: rot,
            intensity: 1.0,
        },
        Ellipse {
            center_x: 0.0,
            center_y: -0.01,
            axis_a: k * a,
            axis_b: k * b,
            rotation: rot,
            intensity: -0.7,
        },
    ];
    // mirrored ventricles
    let vx = uniform(rng, 0.1, 0.18);
    let vy = uniform(rng, -0.05, 0.1);
    let va = uniform(rng, 0.05, 0.09);
    let vb = uniform(rng, 0.15, 0.25);
    let vr = uniform(rng, 12.0, 25.0);
    let vi = uniform(rng, -0.2, -0.15);
    for side in [-1.0, 1.0] {
        ellipses.push(Ellipse {
            center_x: side * vx,
            center_y: vy,
            axis_a: va,
            axis_b: vb,
            rotation: -side * vr,
            intensity: vi,
        });
    }
    let features = rng.random_range(p.features.0..=p.features.1);
    for _ in 0..features {
        let (u, v) = unit_disk(rng);
        let e = Ellipse {
            center_x: 0.6 * k * a * u,
            center_y: 0.6 * k * b * v,
            axis_a: uniform(rng, p.feature_axis.0, p.feature_axis.1),
            axis_b: uniform(rng, p.feature_axis.0, p.feature_axis.1),
            rotation: uniform(rng, -90.0, 90.0),
            intensity: uniform(rng, -0.04, 0.3),
        };
        ellipses.push(e);
        if rng.random::<f64>() < p.nested_prob {
            ellipses.push(Ellipse {
                axis_a: 0.5 * e.axis_a,
                axis_b: 0.5 * e.axis_b,
                intensity: uniform(rng, 0.05, 0.15),
                ..e
            });
        }
    }
    EllipsePhantomSpec {
        name: Some("brain".into()),
        ellipses,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_or_empty() {
        let spec = EllipsePhantomSpec::new(vec![Ellipse::disk(0.0, 0.0, 0.5, 1.0)]);
        assert!(make_phantom(&spec, 15).is_err());
        assert!(make_phantom(&EllipsePhantomSpec::default(), 32).is_err());
        let bad = EllipsePhantomSpec::new(vec![Ellipse::disk(0.0, 0.0, 0.0, 1.0)]);
        assert!(make_phantom(&bad, 32).is_err());
    }

    #[test]
    fn zero_intensity_gives_zero_image() {
        let spec = EllipsePhantomSpec::new(vec![Ellipse::disk(0.0, 0.0, 0.7, 0.0)]);
        let img = make_phantom(&spec, 32).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centered_disk_geometry() {
        let spec = EllipsePhantomSpec::new(vec![Ellipse::disk(0.0, 0.0, 0.5, 1.0)]);
        let img = make_phantom(&spec, 64).unwrap();
        assert_eq!(img.get(32, 32), 1.0);
        assert_eq!(img.get(31, 31), 1.0);
        assert_eq!(img.get(0, 0), 0.0);
        assert_eq!(img.get(63, 63), 0.0);
    }

    #[test]
    fn additive_over_union() {
        let s1 = PhantomFamily::Brain.slice(3, 0);
        let s2 = PhantomFamily::Abdomen.slice(3, 1);
        let a = make_phantom(&s1, 48).unwrap();
        let b = make_phantom(&s2, 48).unwrap();
        let u = make_phantom(&s1.union(&s2), 48).unwrap();
        let sum = a.add(&b).unwrap();
        for (x, y) in u.data().iter().zip(sum.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn families_are_deterministic_and_distinct() {
        for fam in [
            PhantomFamily::Abdomen,
            PhantomFamily::Brain,
            PhantomFamily::BrainVariant,
        ] {
            assert_eq!(fam.slice(5, 2), fam.slice(5, 2));
            assert_ne!(fam.slice(5, 2), fam.slice(5, 3));
            assert_ne!(fam.slice(5, 2), fam.slice(6, 2));
            for img in fam.images(1, 0, 6, 64).unwrap() {
                assert!(img.min() >= -1e-12, "{fam:?} produced negative pixels");
                assert!(img.max() > 0.2);
            }
        }
    }

    #[test]
    fn shepp_logan_table_loads() {
        let sl = EllipsePhantomSpec::shepp_logan();
        assert_eq!(sl.ellipses.len(), 10);
        assert_eq!(sl.ellipses[0].intensity, 1.0);
    }

    #[test]
    fn family_names_parse() {
        assert_eq!(PhantomFamily::parse("A").unwrap(), PhantomFamily::Abdomen);
        assert_eq!(
            PhantomFamily::parse("brain-variant").unwrap(),
            PhantomFamily::BrainVariant
        );
        assert!(PhantomFamily::parse("liver").is_err());
    }
}
