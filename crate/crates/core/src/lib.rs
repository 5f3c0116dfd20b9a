//! Discovery of subgroups with exceptional survival.
//!
//! The pipeline fits a random survival forest as a population model, turns
//! each subject's predicted survival curve into an exceptionality score
//! (integrated absolute deviation from a reference curve), and learns a
//! conjunction of interval conditions that selects an exceptional subgroup by
//! gradient descent on a smooth relaxation of the rule. Learned rules can be
//! pruned post hoc and validated against a permutation null.
//!
//! ```no_run
//! use survgroup::{dataset::SurvivalDataset, learner::{discover, DiscoverConfig}};
//!
//! let data = SurvivalDataset::load_csv("data.csv", "time", "event", true)?;
//! let found = discover(&data, &DiscoverConfig::default())?;
//! for sg in &found.subgroups {
//!     println!("{}  (size {}, exceptionality {:.3})",
//!         sg.rule.render(data.feature_names()), sg.size, sg.exceptionality);
//! }
//! # Ok::<(), survgroup::Error>(())
//! ```

pub mod bench;
pub mod dataset;
mod error;
pub mod learner;
pub mod pruner;
pub mod rsf;
pub mod seed;
pub mod softrule;
pub mod survival;
pub mod synth;
pub mod validator;

pub use error::{Error, Result};
