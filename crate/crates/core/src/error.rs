use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("interaction log is empty")]
    EmptyLog,
    #[error("items missing from the category map: {}", .0.join(", "))]
    MissingCategories(Vec<String>),
    #[error("k-core filtering with k = {0} removed every interaction")]
    EmptyAfterFiltering(usize),
    #[error("user {0} has no training interactions")]
    EmptyUserHistory(usize),
    #[error("item {0} has no training interactions")]
    EmptyItemHistory(usize),
    #[error("user {0} has interacted with every item; no negatives can be drawn")]
    NoNegatives(usize),
    #[error("skewness is undefined for a degenerate distribution ({0})")]
    DegenerateDistribution(&'static str),
    #[error("requested {requested} aspects but the corpus has only {categories} categories")]
    TooManyAspects { requested: usize, categories: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite loss in {batch} batch, triple {index} (user {user}, item {item})")]
    NonFiniteLoss {
        batch: &'static str,
        index: usize,
        user: usize,
        item: usize,
    },
    #[error("training diverged at epoch {epoch}, step {step}: {source}")]
    Diverged {
        epoch: usize,
        step: usize,
        source: alloc::boxed::Box<Error>,
    },
    #[error("user sets differ: {0}")]
    MismatchedUsers(String),
    #[error("degenerate finite-difference probe: {0}")]
    DegenerateProbe(&'static str),
}
