//! Parameterised distortion operators and the interval grids that turn their
//! parameters into class labels.

mod apply;
mod dataset;

pub use apply::{
    apply_blur, apply_gsd, apply_modifier, apply_rer, apply_sharpness, apply_snr, rer_to_sigma,
    BaseQuality, BLUR_KERNEL_RADIUS, SHARPNESS_SIGMA,
};
pub use dataset::{
    generate_annotated_dataset, DatasetManifest, ManifestEntry, ManifestHeader, MANIFEST_FILE,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The five modelled distortions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModifierKind {
    /// Gaussian blur, parameter sigma in pixels.
    Blur,
    /// Sharpness factor F (1 = identity, >1 sharpens).
    Sharpness,
    /// Ground sampling distance in m/px.
    Gsd,
    /// Relative edge response.
    Rer,
    /// Signal-to-noise ratio (mean over noise std).
    Snr,
}

impl ModifierKind {
    pub const ALL: [ModifierKind; 5] = [
        ModifierKind::Blur,
        ModifierKind::Snr,
        ModifierKind::Rer,
        ModifierKind::Sharpness,
        ModifierKind::Gsd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModifierKind::Blur => "blur",
            ModifierKind::Sharpness => "sharpness",
            ModifierKind::Gsd => "gsd",
            ModifierKind::Rer => "rer",
            ModifierKind::Snr => "snr",
        }
    }

    /// The default interval grid for this modifier.
    pub fn default_grid(self) -> ParamGrid {
        let (n, lo, hi) = match self {
            ModifierKind::Blur => (50, 1.0, 2.5),
            ModifierKind::Sharpness => (9, 1.0, 10.0),
            ModifierKind::Gsd => (10, 0.30, 0.60),
            ModifierKind::Rer => (40, 0.15, 0.55),
            ModifierKind::Snr => (40, 15.0, 30.0),
        };
        ParamGrid::new(self, n, lo, hi).expect("default grids are valid")
    }
}

impl fmt::Display for ModifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "blur" | "sigma" => Ok(ModifierKind::Blur),
            "sharpness" | "f" | "sharp" => Ok(ModifierKind::Sharpness),
            "gsd" => Ok(ModifierKind::Gsd),
            "rer" => Ok(ModifierKind::Rer),
            "snr" => Ok(ModifierKind::Snr),
            other => Err(Error::Param(format!(
                "unknown modifier '{other}' (expected blur, sharpness, gsd, rer, snr)"
            ))),
        }
    }
}

/// `n` equally spaced parameter values on `[lo, hi]`; value `k` is class `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct ParamGrid {
    kind: ModifierKind,
    lo: f64,
    hi: f64,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    kind: ModifierKind,
    n: usize,
    lo: f64,
    hi: f64,
}

impl TryFrom<GridRepr> for ParamGrid {
    type Error = Error;
    fn try_from(r: GridRepr) -> Result<Self, Error> {
        ParamGrid::new(r.kind, r.n, r.lo, r.hi)
    }
}

impl From<ParamGrid> for GridRepr {
    fn from(g: ParamGrid) -> Self {
        GridRepr {
            kind: g.kind,
            n: g.values.len(),
            lo: g.lo,
            hi: g.hi,
        }
    }
}

impl ParamGrid {
    pub fn new(kind: ModifierKind, n: usize, lo: f64, hi: f64) -> Result<Self, Error> {
        if n < 2 || !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::Param(format!("grid {kind} n={n} [{lo}, {hi}]")));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let mut values: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
        values[n - 1] = hi;
        Ok(ParamGrid {
            kind,
            lo,
            hi,
            values,
        })
    }

    pub fn kind(&self) -> ModifierKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n() - 1) as f64
    }

    /// Index of the nearest grid value; exact midpoints go to the lower index.
    ///
    /// Values outside `[lo, hi]` are clamped (with a warning).
    pub fn value_to_class(&self, value: f64) -> usize {
        let v = if value < self.lo || value > self.hi {
            log::warn!(
                "{} value {value} outside [{}, {}], clamping",
                self.kind,
                self.lo,
                self.hi
            );
            value.clamp(self.lo, self.hi)
        } else {
            value
        };
        let pos = (v - self.lo) / self.step();
        let base = pos.floor();
        let frac = pos - base;
        let k = if frac > 0.5 + 1e-9 { base + 1.0 } else { base };
        (k as usize).min(self.n() - 1)
    }

    pub fn class_to_value(&self, class: usize) -> f64 {
        self.values[class.min(self.n() - 1)]
    }

    /// Short identity string, e.g. `blur:50:[1,2.5]`.
    pub fn identity(&self) -> String {
        format!("{}:{}:[{},{}]", self.kind, self.n(), self.lo, self.hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_grids() {
        let expect = [
            (ModifierKind::Blur, 50, 1.0, 2.5),
            (ModifierKind::Sharpness, 9, 1.0, 10.0),
            (ModifierKind::Gsd, 10, 0.30, 0.60),
            (ModifierKind::Rer, 40, 0.15, 0.55),
            (ModifierKind::Snr, 40, 15.0, 30.0),
        ];
        for (kind, n, lo, hi) in expect {
            let g = kind.default_grid();
            assert_eq!(g.n(), n);
            assert_eq!(g.values()[0], lo);
            assert_eq!(g.values()[n - 1], hi);
            assert!(g.values().windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn grid_fixpoints_and_ties() {
        let g = ModifierKind::Blur.default_grid();
        for (k, v) in g.values().iter().enumerate() {
            assert_eq!(g.value_to_class(*v), k);
        }
        let mid = 0.5 * (g.values()[2] + g.values()[3]);
        assert_eq!(g.value_to_class(mid), 2);
    }

    #[test]
    fn gsd_example() {
        let g = ModifierKind::Gsd.default_grid();
        assert_eq!(g.value_to_class(0.334), 1);
        assert_eq!(g.value_to_class(0.10), 0);
        assert_eq!(g.value_to_class(0.99), 9);
    }

    #[test]
    fn parse_names() {
        assert_eq!("BLUR".parse::<ModifierKind>().unwrap(), ModifierKind::Blur);
        assert_eq!("F".parse::<ModifierKind>().unwrap(), ModifierKind::Sharpness);
        assert!("jpeg".parse::<ModifierKind>().is_err());
    }

    #[test]
    fn grid_serde_roundtrip() {
        let g = ParamGrid::new(ModifierKind::Rer, 7, 0.2, 0.5).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(serde_json::from_str::<ParamGrid>(&s).unwrap(), g);
        assert!(serde_json::from_str::<ParamGrid>(r#"{"kind":"rer","n":1,"lo":0,"hi":1}"#).is_err());
    }

    proptest! {
        #[test]
        fn class_roundtrip(n in 2usize..60, lo in -5.0f64..5.0, span in 0.1f64..40.0, t in -0.2f64..1.2) {
            let g = ParamGrid::new(ModifierKind::Snr, n, lo, lo + span).unwrap();
            for k in 0..n {
                prop_assert_eq!(g.value_to_class(g.class_to_value(k)), k);
            }
            let v = lo + t * span;
            let back = g.class_to_value(g.value_to_class(v));
            let clamped = v.clamp(g.lo(), g.hi());
            prop_assert!((back - clamped).abs() <= 0.5 * g.step() + 1e-9);
        }
    }
}
