use crate::model::{HazardSpec, JointParams, ModelError};

/// Which blocks a chain sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitKind {
    Joint,
    /// Stage one of the two-stage comparator: longitudinal blocks only.
    Longitudinal,
    /// Stage two: survival blocks with the random effects held fixed.
    SurvivalPlugin,
}

impl FitKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitKind::Joint => "joint",
            FitKind::Longitudinal => "two_stage_longitudinal",
            FitKind::SurvivalPlugin => "two_stage_survival",
        }
    }

    pub fn has_longitudinal(&self) -> bool {
        !matches!(self, FitKind::SurvivalPlugin)
    }

    pub fn has_survival(&self) -> bool {
        !matches!(self, FitKind::Longitudinal)
    }

    /// Column names in storage order.
    pub fn column_names(&self, n_covariates: usize, n_intervals: usize) -> Vec<String> {
        let mut names = Vec::new();
        if self.has_longitudinal() {
            names.push("beta0".to_string());
            names.push("beta1".to_string());
        }
        if self.has_survival() {
            names.extend((1..=n_covariates).map(|j| format!("gamma_{j}")));
            names.push("alpha".to_string());
        }
        if self.has_longitudinal() {
            names.push("log_sigma2".to_string());
            names.push("log_tau2".to_string());
        }
        if self.has_survival() {
            names.extend((1..=n_intervals).map(|k| format!("log_lambda_{k}")));
        }
        names
    }
}

impl std::str::FromStr for FitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joint" => Ok(FitKind::Joint),
            "two_stage_longitudinal" => Ok(FitKind::Longitudinal),
            "two_stage_survival" => Ok(FitKind::SurvivalPlugin),
            other => Err(format!("unknown fit kind '{other}'")),
        }
    }
}

/// Row-major matrix of draws.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DrawMatrix {
    n_cols: usize,
    data: Vec<f64>,
}

impl DrawMatrix {
    pub fn new(n_cols: usize) -> Self {
        Self { n_cols, data: Vec::new() }
    }

    pub fn with_capacity(n_cols: usize, rows: usize) -> Self {
        Self { n_cols, data: Vec::with_capacity(n_cols * rows) }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.n_cols, "row width mismatch");
        self.data.extend_from_slice(row);
    }

    pub fn n_rows(&self) -> usize {
        self.data.len().checked_div(self.n_cols).unwrap_or(0)
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols.max(1)).take(self.n_rows())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn column_mean(&self, j: usize) -> f64 {
        let n = self.n_rows();
        if n == 0 {
            return f64::NAN;
        }
        self.rows().map(|r| r[j]).sum::<f64>() / n as f64
    }
}

/// Retained draws of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    pub kind: FitKind,
    pub names: Vec<String>,
    pub params: DrawMatrix,
    /// One column per patient; empty for [`FitKind::SurvivalPlugin`].
    pub b: DrawMatrix,
    /// `(block, acceptance fraction over retained iterations)`
    pub accept_rates: Vec<(String, f64)>,
    pub cuts: Vec<f64>,
    pub n_covariates: usize,
    pub chain_seed: u64,
    /// Whether proposal adaptation was switched off before the first retained draw.
    pub adaptation_frozen: bool,
}

impl ChainDraws {
    pub fn n_draws(&self) -> usize {
        self.params.n_rows()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.column_index(name).map(|j| self.params.column(j))
    }

    /// Draws of a parameter on its natural scale (`sigma2` rather than
    /// `log_sigma2`, `lambda_k` rather than `log_lambda_k`).
    pub fn natural_column(&self, name: &str) -> Option<Vec<f64>> {
        if let Some(col) = self.column(name) {
            return Some(col);
        }
        self.column(&format!("log_{name}")).map(|c| c.into_iter().map(f64::exp).collect())
    }

    pub fn n_intervals(&self) -> usize {
        self.cuts.len() + 1
    }

    /// Full parameter set at row `row`; only defined for joint fits.
    pub fn params_at(&self, row: usize) -> Result<JointParams, ModelError> {
        if self.kind != FitKind::Joint {
            return Err(ModelError::InvalidParams(format!("{} draws do not carry every parameter", self.kind.as_str())));
        }
        let r = self.params.row(row);
        let p = self.n_covariates;
        let k = self.n_intervals();
        let levels = r[p + 5..p + 5 + k].iter().map(|v| v.exp()).collect();
        Ok(JointParams {
            beta0: r[0],
            beta1: r[1],
            gamma: r[2..2 + p].to_vec(),
            alpha: r[2 + p],
            sigma2: r[3 + p].exp(),
            tau2: r[4 + p].exp(),
            hazard: HazardSpec::new(self.cuts.clone(), levels)?,
        })
    }

    pub fn all_params(&self) -> Result<Vec<JointParams>, ModelError> {
        (0..self.n_draws()).map(|i| self.params_at(i)).collect()
    }

    /// Keeps every `step`-th draw.
    pub fn thinned(&self, step: usize) -> ChainDraws {
        let step = step.max(1);
        let mut params = DrawMatrix::new(self.params.n_cols());
        let mut b = DrawMatrix::new(self.b.n_cols());
        for i in (0..self.n_draws()).step_by(step) {
            params.push_row(self.params.row(i));
            if self.b.n_cols() > 0 {
                b.push_row(self.b.row(i));
            }
        }
        ChainDraws { params, b, ..self.clone() }
    }

    /// Posterior mean of each patient's random effect.
    pub fn b_means(&self) -> Vec<f64> {
        (0..self.b.n_cols()).map(|j| self.b.column_mean(j)).collect()
    }

    pub fn accept_rate(&self, block: &str) -> Option<f64> {
        self.accept_rates.iter().find(|(b, _)| b == block).map(|(_, r)| *r)
    }
}
