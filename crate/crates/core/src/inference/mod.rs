//! Comparisons across poverty groups.

mod burden;
mod permutation;
mod synchrony;

pub use burden::{
    burden_correlations, burden_rate, burden_regression, BurdenCorrelations, BurdenRegression, CoefRow, Correlation,
    StratifiedCorrelations, BURDEN_LABELS, T_CAP,
};
pub use permutation::{permutation_test, random_partition, ObservedStat, PermutationResult};
pub use synchrony::{
    pairwise_synchrony, pca, pca_by_group, pearson, synchrony_randomization, GroupCorrelations, GroupPca,
    PairCorrelation, PcaResult, RandomizationResult, SynchronyResult,
};
