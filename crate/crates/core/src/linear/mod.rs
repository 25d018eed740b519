//! Collaborative pipeline for linear MDPs: Grammian sampling, operator
//! estimates, policy search over a softmax net, row-wise reward estimation and
//! per-user planning.

pub mod diagnostics;
pub mod operators;
pub mod pipeline;
pub mod planning;
pub mod policy;
pub mod sampler;
pub mod search;

pub use diagnostics::{dist_prop_check, j_functional, DistPropReport};
pub use operators::{alphas, e_exact, e_hat, estimate_t_hat, exact_t, f_eval, f_table, StateMap};
pub use pipeline::{run_linear_pipeline, run_linear_pipeline_with, LinearPipelineConfig, LinearRun};
pub use planning::{plan_users_linear, LinearPlan};
pub use policy::{build_policy_net, softmax_kernel, tv_bound, tv_distance, PolicyNet, SoftmaxPolicy};
pub use sampler::{run_well_conditioned_sampler, GrammianData, StepData};
pub use search::{policy_search_fh, search_csv, SearchConfig, SearchResult};
