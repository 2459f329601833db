pub mod kinematics;
pub mod rng;
pub mod tape;
pub mod diffusion;
pub mod formats;
pub mod model;
pub mod audio;
pub mod metrics;
pub mod synth;

/// Guide chapters, compiled so their snippets stay current.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/overview.md")]
    struct Overview;
    #[doc = include_str!("../../../book/src/poses.md")]
    struct Poses;
    #[doc = include_str!("../../../book/src/diffusion.md")]
    struct Diffusion;
    #[doc = include_str!("../../../book/src/editing.md")]
    struct Editing;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/audio.md")]
    struct Audio;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
}
