pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod io_util;
pub mod losses;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod predict;
pub mod propagate;
pub mod render;
pub mod synthetic;
pub mod volume;

pub use error::{Error, Result};

/// Book chapters compiled as doc-tests so their snippets stay in sync with the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/assets.md")]
    mod assets {}
    #[doc = include_str!("../../../book/src/rendering.md")]
    mod rendering {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/region-features.md")]
    mod region_features {}
    #[doc = include_str!("../../../book/src/properties.md")]
    mod properties {}
    #[doc = include_str!("../../../book/src/propagation.md")]
    mod propagation {}
    #[doc = include_str!("../../../book/src/mass.md")]
    mod mass {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
