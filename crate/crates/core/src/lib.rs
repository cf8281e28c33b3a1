//! Diffusion-capture Monte Carlo and estimation toolkit for localized
//! nitrogen-vacancy (NV) center formation in diamond nanostructures.
//!
//! The crate covers the full modeling chain for electron-beam-localized
//! NV creation in prefabricated devices:
//!
//! 1. **Geometry** (`geometry`): parametric pillars, mesas and bulk slabs
//!    with absorbing boundaries, plus nitrogen placement in a δ-doped layer.
//! 2. **Vacancy source** (`vacancy`): parametric model of the vacancy
//!    "pencil" created by a focused 200 keV electron beam.
//! 3. **Diffusion engine** (`diffusion`): coarse-grained lattice random
//!    walk of monovacancies during annealing, with nitrogen capture and
//!    boundary absorption.
//! 4. **Estimators** (`estimators`): orientation-count maximum-likelihood
//!    estimation of the mean NV number per site.
//! 5. **Localization analysis** (`localization`): tile averaging, affine
//!    registration, 2-D Gaussian fitting, variance decomposition and
//!    diffusion-constant inversion.
//! 6. **Photonics analysis** (`photonics`): saturation-curve fitting and
//!    collection-efficiency averaging over truncated Gaussian spreads.
//! 7. **Sensitivity** (`sensitivity`): AC magnetometry sensitivity and
//!    sensor-yield statistics.
//!
//! All stochastic operations take explicit seeds and derive per-task
//! streams deterministically, so ensemble results are independent of
//! worker count and scheduling.

pub mod constants;
pub mod diffusion;
pub mod estimators;
pub mod fit;
pub mod geometry;
pub mod localization;
pub mod photonics;
pub mod rng;
pub mod sensitivity;
pub mod vacancy;

mod error;

pub use error::{Error, Result};
pub use geometry::{DeviceGeometry, DopedLayer, NitrogenEnsemble, Point3};
pub use vacancy::{BeamParams, VacancyEnsemble};
