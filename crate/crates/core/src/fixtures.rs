//! A bundled 8-point, 2-feature instance small enough for every oracle.
//!
//! Columns `x1, x2` are features and `y` the target. `f_star` holds the
//! minimum-norm interpolating fit for 2 thresholds per feature and depth 2,
//! which on this instance is the mean of `y` over each occupied grid cell.

use crate::data::{dataset_from_table, BinnedDataset, FeatureQuantizer, Table, TargetColumn};
use crate::error::Result;

pub const KRR8_CSV: &str = include_str!("../fixtures/krr8.csv");
pub const KRR8_BINS: usize = 2;
pub const KRR8_DEPTH: usize = 2;

pub fn krr8_table() -> Result<Table> {
    Table::from_reader(KRR8_CSV.as_bytes())
}

/// The quantized fixture (features `x1, x2`, target `y`).
pub fn krr8() -> Result<BinnedDataset> {
    let table = krr8_table()?;
    let raw = dataset_from_table(
        &table,
        &TargetColumn::Name("y".into()),
        &["f_star".to_string()],
        None,
    )?;
    FeatureQuantizer::fit(&raw, KRR8_BINS)?.quantize(&raw)
}

/// The stored reference fit.
pub fn krr8_reference_fit() -> Result<Vec<f64>> {
    let table = krr8_table()?;
    let index = table.column_index("f_star").expect("fixture has f_star");
    Ok(table.column(index))
}
