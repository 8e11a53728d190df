//! Tucker3 fitting, fit statistics, model-order selection and the
//! three-way interaction test.

mod anova;
mod scree;
mod tucker;

pub use anova::{anova_interaction, AnovaReport};
pub use scree::{scree_grid, scree_select, select_elbow, GridPoint, ScreeOptions, ScreeResult};
pub use tucker::{fit_percent, hooi, hooi_traced, hosvd, HooiOutcome, TuckerModel, DEFAULT_MAX_ITER, DEFAULT_TOL};
