use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `T x N` matrix of asset returns, rows indexed by time.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    data: DMatrix<f64>,
    assets: Vec<String>,
    labels: Vec<String>,
    excess: bool,
}

impl ReturnPanel {
    pub fn new(data: DMatrix<f64>) -> Self {
        let assets = (1..=data.ncols()).map(|i| format!("a{i}")).collect();
        let labels = (1..=data.nrows()).map(|t| t.to_string()).collect();
        Self {
            data,
            assets,
            labels,
            excess: false,
        }
    }

    pub fn with_names(data: DMatrix<f64>, assets: Vec<String>, labels: Vec<String>) -> Result<Self> {
        if assets.len() != data.ncols() || labels.len() != data.nrows() {
            return Err(Error::Contract(format!(
                "panel is {}x{} but got {} asset names and {} row labels",
                data.nrows(),
                data.ncols(),
                assets.len(),
                labels.len()
            )));
        }
        Ok(Self {
            data,
            assets,
            labels,
            excess: false,
        })
    }

    pub fn periods(&self) -> usize {
        self.data.nrows()
    }

    pub fn assets(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn asset_names(&self) -> &[String] {
        &self.assets
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&self, start: usize, len: usize) -> ReturnPanel {
        ReturnPanel {
            data: self.data.rows(start, len).into_owned(),
            assets: self.assets.clone(),
            labels: self.labels[start..start + len].to_vec(),
            excess: self.excess,
        }
    }

    /// Whether a risk-free rate has already been subtracted.
    pub fn is_excess(&self) -> bool {
        self.excess
    }

    /// Subtracts a per-period risk-free rate from every asset; refuses to do
    /// so twice.
    pub fn subtract_risk_free(&mut self, rf: &DVector<f64>) -> Result<()> {
        if self.excess {
            return Err(Error::Contract("risk-free rate was already subtracted from this panel".into()));
        }
        if rf.len() != self.periods() {
            return Err(Error::Contract(format!(
                "risk-free series has {} rows, panel has {}",
                rf.len(),
                self.periods()
            )));
        }
        for mut col in self.data.column_iter_mut() {
            col -= rf;
        }
        self.excess = true;
        Ok(())
    }
}

/// `T x p` matrix of observed factors, plus an optional risk-free column.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    data: DMatrix<f64>,
    names: Vec<String>,
    labels: Vec<String>,
    risk_free: Option<DVector<f64>>,
}

impl FactorMatrix {
    pub fn new(data: DMatrix<f64>) -> Self {
        let names = (1..=data.ncols()).map(|j| format!("f{j}")).collect();
        let labels = (1..=data.nrows()).map(|t| t.to_string()).collect();
        Self {
            data,
            names,
            labels,
            risk_free: None,
        }
    }

    pub fn with_names(
        data: DMatrix<f64>,
        names: Vec<String>,
        labels: Vec<String>,
        risk_free: Option<DVector<f64>>,
    ) -> Result<Self> {
        if names.len() != data.ncols() || labels.len() != data.nrows() {
            return Err(Error::Contract(format!(
                "factor matrix is {}x{} but got {} names and {} row labels",
                data.nrows(),
                data.ncols(),
                names.len(),
                labels.len()
            )));
        }
        if let Some(rf) = &risk_free {
            if rf.len() != data.nrows() {
                return Err(Error::Contract("risk-free column length mismatch".into()));
            }
        }
        Ok(Self {
            data,
            names,
            labels,
            risk_free,
        })
    }

    pub fn periods(&self) -> usize {
        self.data.nrows()
    }

    pub fn count(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn risk_free(&self) -> Option<&DVector<f64>> {
        self.risk_free.as_ref()
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> FactorMatrix {
        FactorMatrix {
            data: self.data.rows(start, len).into_owned(),
            names: self.names.clone(),
            labels: self.labels[start..start + len].to_vec(),
            risk_free: self.risk_free.as_ref().map(|rf| rf.rows(start, len).into_owned()),
        }
    }
}

pub(crate) fn check_aligned(panel: &ReturnPanel, factors: &FactorMatrix) -> Result<()> {
    if panel.periods() != factors.periods() {
        return Err(Error::Contract(format!(
            "panel has {} rows but factors have {}",
            panel.periods(),
            factors.periods()
        )));
    }
    Ok(())
}
