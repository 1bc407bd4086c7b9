use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} coordinates, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter `{name}` = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("Z = ∂zQ + i∂zP became singular at t = {time} (|det Z| = {det:e})")]
    SingularZ { time: f64, det: f64 },
    #[error(
        "hop probability {probability} per step exceeds the cap {cap} \
         (rate {rate}, dt {dt}); reduce dt"
    )]
    StepSize {
        rate: f64,
        dt: f64,
        probability: f64,
        cap: f64,
    },
    #[error("amplitude table has no cell above the support threshold")]
    EmptySupport,
    #[error("trajectory has zero initial amplitude")]
    DegenerateWeight,
    #[error("cannot reconstruct from an empty ensemble")]
    EmptyEnsemble,
    #[error("wave function grids do not match")]
    GridMismatch,
    #[error("relative error requested against a zero reference")]
    ZeroNorm,
    #[error("series terms with {0} hops are not supported (max 1)")]
    UnsupportedHopCount(usize),
}
