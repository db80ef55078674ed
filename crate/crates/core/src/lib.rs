//! Simulation and reconstruction toolkit for an aperture-diffraction snapshot
//! spectral imager.
//!
//! The crate is organised bottom-up:
//!
//! * [`spectral`] and [`metrics`]: cube/measurement types and image quality.
//! * [`optics`]: orthogonal-mask diffraction PSFs, analytic and numeric.
//! * [`sensor`]: mosaic filter arrays and the linear measurement operator.
//! * [`autodiff`]: a small reverse-mode tensor engine.
//! * [`csst`]: the cascaded shift-shuffle transformer unfolding network.
//! * [`recon`]: power iteration and monotone FISTA.
//! * [`io`]: file formats, run configuration and synthetic scenes.

pub mod autodiff;
pub mod csst;
pub mod error;
pub mod io;
pub mod metrics;
pub mod optics;
pub mod recon;
pub mod sensor;
pub mod spectral;

pub use error::{AdisError, Result};
pub use metrics::{psnr, ssim, QualityReport};
pub use optics::{MaskField, OpticsConfig, PsfStack};
pub use sensor::{Boundary, ForwardOperator, MosaicPattern, NoiseModel};
pub use spectral::{HsiCube, Measurement, WavelengthGrid};
