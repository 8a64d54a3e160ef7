use std::collections::HashMap;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Inputs x₁…x_N (rows of `x`) and optional targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Option<Array2<f64>>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Option<Array2<f64>>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::contract("dataset needs at least one point"));
        }
        if x.ncols() == 0 {
            return Err(Error::contract("dataset inputs need at least one column"));
        }
        if let Some(i) = x.rows().into_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::contract(format!("input row {} is not finite", i + 1)));
        }
        if let Some(y) = &y {
            if y.nrows() != x.nrows() {
                return Err(Error::contract(format!(
                    "{} targets for {} inputs",
                    y.nrows(),
                    x.nrows()
                )));
            }
            if let Some(i) = y.rows().into_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
                return Err(Error::contract(format!("target row {} is not finite", i + 1)));
            }
        }
        let dups = duplicate_rows(x.view());
        if !dups.is_empty() {
            let listed: Vec<String> = dups.iter().map(|(a, b)| format!("{a} and {b}")).collect();
            return Err(Error::contract(format!(
                "duplicate input rows (1-based): {}",
                listed.join(", ")
            )));
        }
        Ok(Self { x, y })
    }

    pub fn inputs(x: Array2<f64>) -> Result<Self> {
        Self::new(x, None)
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> Option<ArrayView2<'_, f64>> {
        self.y.as_ref().map(|y| y.view())
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.y.as_ref().map(|y| y.ncols())
    }
}

fn row_key(row: ArrayView1<f64>) -> Vec<u64> {
    // +0.0 folds -0.0 into 0.0
    row.iter().map(|v| (v + 0.0).to_bits()).collect()
}

/// Pairs (first, later) of 1-based row numbers with identical inputs.
pub(crate) fn duplicate_rows(x: ArrayView2<f64>) -> Vec<(usize, usize)> {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut dups = Vec::new();
    for (i, row) in x.rows().into_iter().enumerate() {
        match seen.get(&row_key(row)) {
            Some(&first) => dups.push((first + 1, i + 1)),
            None => {
                seen.insert(row_key(row), i);
            }
        }
    }
    dups
}
