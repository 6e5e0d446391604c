//! Concentric-shell phantoms, their parallel-beam projections and randomised
//! datasets.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Radiograph, Result};

/// Object radius used by the dataset protocol, cm.
pub const DEFAULT_OBJECT_RADIUS: f64 = 5.0;

/// Default density palette, g/cm³.
pub const DEFAULT_PALETTE: [f64; 5] = [2.0, 4.0, 6.0, 8.0, 10.0];

/// Range from which the four inner shell radii are drawn, cm.
pub const INNER_RADIUS_RANGE: (f64, f64) = (0.25, 2.5);

const SHELLS: usize = 5;
const FRAME_MARGIN: f64 = 1.2;
const DEGENERATE_RADIUS_GAP: f64 = 1e-6;

/// A sphere made of concentric shells of uniform density.
///
/// Shell `i` occupies the annulus `radii[i-1]..radii[i]` (with an implicit
/// inner radius of zero for the first shell).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellPhantom {
    pub radii: Vec<f64>,
    pub densities: Vec<f64>,
    pub material_id: String,
}

impl ShellPhantom {
    pub fn new(radii: Vec<f64>, densities: Vec<f64>, material_id: impl Into<String>) -> Result<Self> {
        if radii.is_empty() || radii.len() != densities.len() {
            return Err(Error::InvalidInput(format!(
                "phantom needs one density per radius, got {} radii and {} densities",
                radii.len(),
                densities.len()
            )));
        }
        if radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidInput("shell radii must be positive".into()));
        }
        if radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("shell radii must be strictly increasing".into()));
        }
        if densities.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(Error::InvalidInput("shell densities must be non-negative".into()));
        }
        Ok(Self { radii, densities, material_id: material_id.into() })
    }

    pub fn uniform(radius: f64, density: f64, material_id: impl Into<String>) -> Result<Self> {
        Self::new(vec![radius], vec![density], material_id)
    }

    pub fn outer_radius(&self) -> f64 {
        *self.radii.last().expect("phantom has at least one shell")
    }

    /// Total mass in grams.
    pub fn mass(&self) -> f64 {
        let mut inner = 0.0_f64;
        let mut mass = 0.0;
        for (&r, &rho) in self.radii.iter().zip(&self.densities) {
            mass += rho * 4.0 / 3.0 * std::f64::consts::PI * (r.powi(3) - inner.powi(3));
            inner = r;
        }
        mass
    }

    /// Same geometry, every density multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.radii.clone(), self.densities.iter().map(|d| d * factor).collect(), self.material_id.clone())
    }

    /// Same geometry, `offset` added to every density and clamped at zero.
    pub fn offset(&self, offset: f64) -> Result<Self> {
        Self::new(
            self.radii.clone(),
            self.densities.iter().map(|d| (d + offset).max(0.0)).collect(),
            self.material_id.clone(),
        )
    }

    /// Density of the shell containing radius `r` (cm); zero outside.
    pub fn density_at(&self, r: f64) -> f64 {
        self.radii.iter().position(|&outer| r <= outer).map_or(0.0, |i| self.densities[i])
    }
}

/// Detector grid in the object plane.
///
/// Source and detector distances are carried for provenance only; projections
/// are parallel-beam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub grid_size: usize,
    pub pixel_pitch: f64,
    pub source_distance: f64,
    pub detector_distance: f64,
    pub roi_radius: f64,
}

impl Geometry {
    /// Grid with the default pitch, which frames the object with a 20% margin.
    pub fn new(grid_size: usize, roi_radius: f64) -> Result<Self> {
        let pitch = 2.0 * roi_radius / (grid_size.max(2) - 1) as f64 * FRAME_MARGIN;
        Self::with_pitch(grid_size, pitch, roi_radius)
    }

    pub fn with_pitch(grid_size: usize, pixel_pitch: f64, roi_radius: f64) -> Result<Self> {
        let geom = Self { grid_size, pixel_pitch, source_distance: 133.0, detector_distance: 525.0, roi_radius };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 5 || self.grid_size.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!("grid size {} must be odd and >= 5", self.grid_size)));
        }
        if !(self.pixel_pitch > 0.0 && self.pixel_pitch.is_finite()) {
            return Err(Error::InvalidInput("pixel pitch must be > 0".into()));
        }
        if !(self.roi_radius > 0.0 && self.roi_radius.is_finite()) {
            return Err(Error::InvalidInput("roi radius must be > 0".into()));
        }
        Ok(())
    }

    pub fn center(&self) -> usize {
        self.grid_size / 2
    }

    /// Distance in cm from the central pixel to pixel `(m, n)`.
    pub fn radius_at(&self, m: usize, n: usize) -> f64 {
        let c = self.center() as f64;
        let dm = m as f64 - c;
        let dn = n as f64 - c;
        self.pixel_pitch * (dm * dm + dn * dn).sqrt()
    }

    fn image(&self, f: impl Fn(f64) -> f64) -> Result<Radiograph> {
        let data = Array2::from_shape_fn((self.grid_size, self.grid_size), |(m, n)| f(self.radius_at(m, n)));
        Radiograph::new(data, self.pixel_pitch, self.roi_radius)
    }
}

fn chord(radius: f64, impact: f64) -> f64 {
    if impact < radius {
        2.0 * (radius * radius - impact * impact).sqrt()
    } else {
        0.0
    }
}

/// Areal density (g/cm²) along a ray passing `impact` cm from the centre.
pub fn chord_areal_density(phantom: &ShellPhantom, impact: f64) -> f64 {
    let mut inner_chord = 0.0;
    let mut total = 0.0;
    for (&r, &rho) in phantom.radii.iter().zip(&phantom.densities) {
        let outer_chord = chord(r, impact);
        total += rho * (outer_chord - inner_chord);
        inner_chord = outer_chord;
    }
    total
}

/// Areal density map sampled at pixel centres.
pub fn project_phantom(phantom: &ShellPhantom, geom: &Geometry) -> Result<Radiograph> {
    geom.image(|r| chord_areal_density(phantom, r))
}

/// Ground-truth density on the central plane of the object.
pub fn rasterize_central_slice(phantom: &ShellPhantom, geom: &Geometry) -> Result<Radiograph> {
    geom.image(|r| phantom.density_at(r))
}

/// Random five-shell phantoms.
///
/// Inner radii are uniform in [`INNER_RADIUS_RANGE`], the outer radius is the
/// geometry's ROI radius, densities come from `palette`, and all densities of
/// a phantom are rescaled so its mass matches a uniform sphere at the median
/// palette density.
pub fn generate_dataset(seed: u64, count: usize, palette: &[f64], geom: &Geometry) -> Result<Vec<ShellPhantom>> {
    if count == 0 {
        return Err(Error::InvalidInput("dataset count must be >= 1".into()));
    }
    if palette.is_empty() || palette.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidInput("palette must be a non-empty list of positive densities".into()));
    }
    if geom.roi_radius <= INNER_RADIUS_RANGE.1 {
        return Err(Error::InvalidInput("roi radius must exceed the inner shell range".into()));
    }
    let reference_mass = ShellPhantom::uniform(geom.roi_radius, median(palette), "reference")?.mass();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut radii: Vec<f64> =
            (0..SHELLS - 1).map(|_| rng.random_range(INNER_RADIUS_RANGE.0..=INNER_RADIUS_RANGE.1)).collect();
        radii.sort_by(f64::total_cmp);
        radii.push(geom.roi_radius);
        let densities: Vec<f64> = (0..SHELLS).map(|_| palette[rng.random_range(0..palette.len())]).collect();
        if radii.windows(2).any(|w| w[1] - w[0] < DEGENERATE_RADIUS_GAP) {
            continue;
        }
        let raw = ShellPhantom::new(radii, densities, "uranium")?;
        let phantom = raw.scaled(reference_mass / raw.mass())?;
        out.push(phantom);
    }
    Ok(out)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn phantoms_to_json(phantoms: &[ShellPhantom]) -> Result<String> {
    Ok(serde_json::to_string_pretty(phantoms)?)
}

pub fn phantoms_from_json(text: &str) -> Result<Vec<ShellPhantom>> {
    let raw: Vec<ShellPhantom> = serde_json::from_str(text)?;
    raw.into_iter().map(|p| ShellPhantom::new(p.radii, p.densities, p.material_id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_shell() -> ShellPhantom {
        ShellPhantom::new(vec![2.0, 5.0], vec![10.0, 1.0], "u").unwrap()
    }

    #[test]
    fn chord_examples() {
        let unit = ShellPhantom::uniform(5.0, 1.0, "u").unwrap();
        assert_eq!(chord_areal_density(&unit, 0.0), 10.0);
        assert_eq!(chord_areal_density(&unit, 5.0), 0.0);
        assert_eq!(chord_areal_density(&unit, 7.0), 0.0);
        assert!((chord_areal_density(&two_shell(), 0.0) - 46.0).abs() < 1e-12);
        assert!((chord_areal_density(&two_shell(), 3.0) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn chord_is_continuous_at_shell_boundaries() {
        let p = two_shell();
        for &b in &[2.0, 5.0] {
            // chords have a square-root modulus of continuity at each radius
            let lo = chord_areal_density(&p, b - 1e-14);
            let hi = chord_areal_density(&p, b + 1e-14);
            assert!((lo - hi).abs() < 1e-4, "jump at {b}: {lo} vs {hi}");
        }
    }

    #[test]
    fn projection_center_and_symmetry() {
        let geom = Geometry::new(65, 5.0).unwrap();
        let unit = ShellPhantom::uniform(5.0, 1.0, "u").unwrap();
        let map = project_phantom(&unit, &geom).unwrap();
        let c = geom.center();
        assert_eq!(map.data()[[c, c]], 10.0);
        let p = project_phantom(&two_shell(), &geom).unwrap();
        for k in 0..=c {
            assert_eq!(p.data()[[c + k, c]], p.data()[[c - k, c]]);
            assert_eq!(p.data()[[c, c + k]], p.data()[[c + k, c]]);
        }
        let max = p.data().iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max, p.data()[[c, c]]);
    }

    #[test]
    fn projection_at_impact_three() {
        // pitch 1 cm puts pixel (c, c+3) at impact 3 cm
        let geom = Geometry::with_pitch(21, 1.0, 5.0).unwrap();
        let map = project_phantom(&two_shell(), &geom).unwrap();
        let c = geom.center();
        assert!((map.data()[[c, c + 3]] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn slice_examples() {
        let geom = Geometry::with_pitch(21, 1.0, 5.0).unwrap();
        let c = geom.center();
        let uniform = rasterize_central_slice(&ShellPhantom::uniform(5.0, 2.0, "u").unwrap(), &geom).unwrap();
        assert_eq!(uniform.data()[[c, c]], 2.0);
        let s = rasterize_central_slice(&two_shell(), &geom).unwrap();
        assert_eq!(s.data()[[c, c + 3]], 1.0);
        assert_eq!(s.data()[[c, c + 1]], 10.0);
        assert_eq!(s.data()[[c, c + 6]], 0.0);
        let n = geom.grid_size;
        for i in 0..n {
            for j in 0..n {
                assert_eq!(s.data()[[i, j]], s.data()[[j, n - 1 - i]]);
            }
        }
    }

    #[test]
    fn mass_consistency_of_projection() {
        let geom = Geometry::new(257, 5.0).unwrap();
        let p = ShellPhantom::new(vec![0.7, 1.9, 2.4, 3.1, 5.0], vec![9.0, 2.0, 6.0, 4.0, 5.0], "u").unwrap();
        let map = project_phantom(&p, &geom).unwrap();
        let c = geom.center();
        let h = geom.pixel_pitch;
        let radial: f64 = (0..=c).map(|k| map.data()[[c, c + k]] * (k as f64 * h) * h).sum();
        let mass = 2.0 * std::f64::consts::PI * radial;
        assert!((mass - p.mass()).abs() / p.mass() < 0.01, "{mass} vs {}", p.mass());
    }

    #[test]
    fn dataset_invariants() {
        let geom = Geometry::new(65, 5.0).unwrap();
        let a = generate_dataset(1, 99, &DEFAULT_PALETTE, &geom).unwrap();
        let b = generate_dataset(1, 99, &DEFAULT_PALETTE, &geom).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 99);
        let reference = ShellPhantom::uniform(5.0, 6.0, "r").unwrap().mass();
        for p in &a {
            assert_eq!(p.radii.len(), 5);
            assert!(p.radii.windows(2).all(|w| w[1] > w[0]));
            assert_eq!(p.outer_radius(), 5.0);
            assert!(p.radii[..4].iter().all(|r| (0.25..=2.5).contains(r)));
            assert!((p.mass() - reference).abs() / reference < 1e-9);
        }
        assert_ne!(a, generate_dataset(2, 99, &DEFAULT_PALETTE, &geom).unwrap());
    }

    #[test]
    fn dataset_rejects_bad_arguments() {
        let geom = Geometry::new(65, 5.0).unwrap();
        assert!(generate_dataset(1, 0, &DEFAULT_PALETTE, &geom).is_err());
        assert!(generate_dataset(1, 3, &[], &geom).is_err());
    }

    #[test]
    fn json_round_trip() {
        let geom = Geometry::new(65, 5.0).unwrap();
        let a = generate_dataset(3, 4, &DEFAULT_PALETTE, &geom).unwrap();
        let text = phantoms_to_json(&a).unwrap();
        assert!(text.contains("\"material_id\""));
        assert_eq!(phantoms_from_json(&text).unwrap(), a);
    }

    proptest! {
        #[test]
        fn projection_is_linear_in_density(scale in 0.1f64..10.0, seed in 0u64..1000) {
            let geom = Geometry::new(33, 5.0).unwrap();
            let p = generate_dataset(seed, 1, &DEFAULT_PALETTE, &geom).unwrap().remove(0);
            let base = project_phantom(&p, &geom).unwrap();
            let scaled = project_phantom(&p.scaled(scale).unwrap(), &geom).unwrap();
            for (a, b) in base.data().iter().zip(scaled.data()) {
                prop_assert!((a * scale - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
